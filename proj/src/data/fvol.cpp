#include <cmath>
#include <cstring>

#include "msfpt/binary_io.hpp"
#include "msfpt/data.hpp"

namespace msfpt {

namespace {

constexpr char kFvolMagic[4] = {'F', 'V', 'O', 'L'};
constexpr std::size_t kFvolHeader = 24;

}  // namespace

std::vector<std::uint8_t> encode_fvol(const FeatureVolume<float>& f) {
    if (!f.data.defined() || f.data.rank() != 3) throw DimensionError("feature volume must be [C x H x W]");
    ByteWriter out;
    out.bytes(std::string_view(kFvolMagic, 4));
    out.u32(kFvolVersion);
    out.u32(static_cast<std::uint32_t>(f.channels()));
    out.u32(static_cast<std::uint32_t>(f.height()));
    out.u32(static_cast<std::uint32_t>(f.width()));
    out.f32(static_cast<float>(f.scale));
    out.buffer().reserve(kFvolHeader + 4 * f.data.numel());
    for (float v : f.data.data()) out.f32(v);
    return std::move(out.buffer());
}

FeatureVolume<float> decode_fvol(std::span<const std::uint8_t> bytes, std::optional<std::size_t> expected_channels) {
    if (bytes.size() < kFvolHeader) throw TruncatedError("feature volume header is truncated");
    if (std::memcmp(bytes.data(), kFvolMagic, 4) != 0) throw MagicError("not a feature volume (bad magic)");
    ByteReader in(bytes.subspan(4));
    const std::uint32_t version = in.u32();
    if (version != kFvolVersion) {
        throw VersionError("feature volume version " + std::to_string(version) + " is not supported (expected " +
                           std::to_string(kFvolVersion) + ")");
    }
    const std::size_t c = in.u32(), h = in.u32(), w = in.u32();
    const float scale = in.f32();
    if (c == 0 || h == 0 || w == 0) throw FormatError("feature volume has an empty dimension");
    if (!std::isfinite(scale) || scale <= 0.0f) throw FormatError("feature volume scale must be positive");
    // Division form so huge headers cannot overflow.
    if (c > in.remaining() / 4 / h / w) {
        throw TruncatedError("feature volume payload of " + std::to_string(in.remaining()) + " bytes is too short for " +
                             std::to_string(c) + "x" + std::to_string(h) + "x" + std::to_string(w) + " values");
    }
    const std::size_t payload = c * h * w * 4;
    if (in.remaining() > payload) throw FormatError("trailing bytes after feature volume payload");
    if (expected_channels && c != *expected_channels) {
        throw DimensionError("feature volume has " + std::to_string(c) + " channels, expected " +
                             std::to_string(*expected_channels));
    }
    std::vector<float> data(c * h * w);
    in.f32_array(data);
    FeatureVolume<float> f;
    f.data = TensorF({c, h, w}, std::move(data));
    f.scale = scale;
    f.source = FeatureSource::imported;
    return f;
}

void save_fvol(const FeatureVolume<float>& f, const fs::path& path) { write_file(path, encode_fvol(f)); }

FeatureVolume<float> load_fvol(const fs::path& path, std::optional<std::size_t> expected_channels) {
    return decode_fvol(read_file(path), expected_channels);
}

}  // namespace msfpt
