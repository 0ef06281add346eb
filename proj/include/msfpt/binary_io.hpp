#pragma once

// Little-endian encoding helpers shared by the checkpoint and feature-volume
// formats. Values are encoded byte by byte, so files are identical on every
// host regardless of its native byte order.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace msfpt {

/// CRC-64/XZ (ECMA-182 polynomial, reflected, init and xorout all ones).
std::uint64_t crc64(std::span<const std::uint8_t> bytes) noexcept;

class ByteWriter {
public:
    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void f32(float v);
    void bytes(std::string_view s);
    void bytes(std::span<const std::uint8_t> s);

    const std::vector<std::uint8_t>& buffer() const noexcept { return buf_; }
    std::vector<std::uint8_t>& buffer() noexcept { return buf_; }

private:
    std::vector<std::uint8_t> buf_;
};

/// Bounds-checked reader; running past the end throws TruncatedError.
class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

    std::uint32_t u32();
    std::uint64_t u64();
    float f32();
    std::string string(std::size_t n);
    void f32_array(std::span<float> out);

    std::size_t offset() const noexcept { return pos_; }
    std::size_t remaining() const noexcept { return data_.size() - pos_; }

private:
    void need(std::size_t n) const;

    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace msfpt
