#include "msfpt/binary_io.hpp"

#include <array>
#include <bit>
#include <fstream>

#include "msfpt/error.hpp"

namespace msfpt {

namespace {

constexpr std::array<std::uint64_t, 256> make_crc_table() {
    constexpr std::uint64_t poly = 0xC96C5795D7870F42ULL;  // reflected ECMA-182
    std::array<std::uint64_t, 256> table{};
    for (std::uint64_t i = 0; i < 256; ++i) {
        std::uint64_t crc = i;
        for (int b = 0; b < 8; ++b) crc = (crc & 1) ? (crc >> 1) ^ poly : crc >> 1;
        table[i] = crc;
    }
    return table;
}

constexpr auto kCrcTable = make_crc_table();

}  // namespace

std::uint64_t crc64(std::span<const std::uint8_t> bytes) noexcept {
    std::uint64_t crc = ~std::uint64_t{0};
    for (std::uint8_t b : bytes) crc = kCrcTable[(crc ^ b) & 0xFF] ^ (crc >> 8);
    return ~crc;
}

void ByteWriter::u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

void ByteWriter::bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }

void ByteWriter::bytes(std::span<const std::uint8_t> s) { buf_.insert(buf_.end(), s.begin(), s.end()); }

void ByteReader::need(std::size_t n) const {
    if (n > remaining()) {
        throw TruncatedError("unexpected end of data at byte " + std::to_string(pos_) + " (needed " +
                             std::to_string(n) + ", have " + std::to_string(remaining()) + ")");
    }
}

std::uint32_t ByteReader::u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
}

std::uint64_t ByteReader::u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }

std::string ByteReader::string(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
}

void ByteReader::f32_array(std::span<float> out) {
    need(out.size() * 4);
    for (auto& v : out) v = f32();
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("error while reading '" + path.string() + "'");
    return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("error while writing '" + path.string() + "'");
}

}  // namespace msfpt
