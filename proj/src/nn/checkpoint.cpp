#include "msfpt/checkpoint.hpp"

#include "msfpt/binary_io.hpp"

namespace msfpt {

namespace {

constexpr std::string_view kMagic = "MSFP";
constexpr std::string_view kFirstMoment = "optimizer.m/";
constexpr std::string_view kSecondMoment = "optimizer.v/";

void write_record(ByteWriter& w, const std::string& name, const Tensor<float>& t) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (float v : t.data()) w.f32(v);
}

struct Record {
    std::string name;
    Tensor<float> tensor;
};

Record read_record(ByteReader& r) {
    Record rec;
    rec.name = r.string(r.u32());
    const std::uint32_t rank = r.u32();
    if (rank == 0 || rank > 8) throw FormatError("record '" + rec.name + "' has invalid rank");
    Shape shape(rank);
    for (auto& d : shape) {
        d = r.u32();
        if (d == 0) throw FormatError("record '" + rec.name + "' has a zero dimension");
    }
    std::vector<float> values(shape_numel(shape));
    r.f32_array(values);
    rec.tensor = Tensor<float>(std::move(shape), std::move(values));
    return rec;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
    ByteWriter records;
    std::size_t count = 0;
    for (const auto& [name, t] : ckpt.params) {
        write_record(records, name, t);
        ++count;
    }
    if (ckpt.optimizer) {
        for (const auto& [name, t] : ckpt.optimizer->first_moment) {
            write_record(records, std::string(kFirstMoment) + name, t);
            ++count;
        }
        for (const auto& [name, t] : ckpt.optimizer->second_moment) {
            write_record(records, std::string(kSecondMoment) + name, t);
            ++count;
        }
    }

    nlohmann::json header = {
        {"config", ckpt.config.to_json()},
        {"seed", ckpt.params.seed()},
        {"metadata", ckpt.metadata},
        {"record_count", count},
        {"record_bytes", records.buffer().size()},
        {"parameter_count", ckpt.params.size()},
        {"frozen", ckpt.params.names(kBackbonePrefix)},
    };
    if (ckpt.optimizer) header["optimizer_step"] = ckpt.optimizer->step;
    const std::string header_text = header.dump();

    ByteWriter w;
    w.bytes(kMagic);
    w.u32(kCheckpointVersion);
    w.u32(static_cast<std::uint32_t>(header_text.size()));
    w.bytes(header_text);
    w.bytes(records.buffer());
    w.u64(crc64(w.buffer()));
    return std::move(w.buffer());
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    if (bytes.size() < kMagic.size()) throw TruncatedError("checkpoint shorter than its magic");
    if (r.string(kMagic.size()) != kMagic) throw MagicError("not a checkpoint (bad magic)");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw VersionError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                           std::to_string(kCheckpointVersion) + ")");
    }
    const std::string header_text = r.string(r.u32());
    nlohmann::json header;
    std::size_t record_bytes = 0;
    std::size_t record_count = 0;
    try {
        header = nlohmann::json::parse(header_text);
        record_bytes = header.at("record_bytes").get<std::size_t>();
        record_count = header.at("record_count").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("corrupt checkpoint header: ") + e.what());
    }
    const std::size_t expected = r.offset() + record_bytes + 8;
    if (bytes.size() < expected) {
        throw TruncatedError("checkpoint is truncated: " + std::to_string(bytes.size()) + " of " +
                             std::to_string(expected) + " bytes");
    }
    if (bytes.size() > expected) throw FormatError("trailing bytes after checkpoint checksum");
    const std::uint64_t stored = ByteReader(bytes.subspan(expected - 8)).u64();
    if (stored != crc64(bytes.first(expected - 8))) throw ChecksumError("checkpoint checksum mismatch");

    Checkpoint ckpt{ModelConfig::from_json(header.at("config")),
                    ParamStore<float>(header.at("seed").get<std::uint64_t>()), std::nullopt,
                    header.value("metadata", nlohmann::json::object())};
    if (header.contains("optimizer_step")) {
        ckpt.optimizer = OptimizerSnapshot{header["optimizer_step"].get<std::uint64_t>(), {}, {}};
    }
    std::vector<std::string> frozen = header.value("frozen", std::vector<std::string>{});
    ByteReader body(bytes.subspan(r.offset(), record_bytes));
    for (std::size_t i = 0; i < record_count; ++i) {
        Record rec = read_record(body);
        if (rec.name.starts_with(kFirstMoment) || rec.name.starts_with(kSecondMoment)) {
            if (!ckpt.optimizer) throw FormatError("optimizer record without optimizer state");
            const bool first = rec.name.starts_with(kFirstMoment);
            auto& slot = first ? ckpt.optimizer->first_moment : ckpt.optimizer->second_moment;
            slot.emplace(rec.name.substr(kFirstMoment.size()), std::move(rec.tensor));
        } else {
            const bool is_frozen = std::find(frozen.begin(), frozen.end(), rec.name) != frozen.end();
            rec.tensor.set_requires_grad(!is_frozen);
            ckpt.params.add(std::move(rec.name), std::move(rec.tensor));
        }
    }
    if (body.remaining() != 0) throw FormatError("record section length disagrees with header");
    return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    write_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

}  // namespace msfpt
