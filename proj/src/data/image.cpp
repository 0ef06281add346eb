#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>

#include "msfpt/binary_io.hpp"
#include "msfpt/data.hpp"

namespace msfpt {

namespace {

constexpr std::uint8_t kPngMagic[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};

// Builds [3 x H x W] from interleaved 8-bit pixels with `channels` samples
// each (1 = gray, replicated).
TensorF from_interleaved(const std::uint8_t* px, std::size_t h, std::size_t w, std::size_t channels) {
    std::vector<float> out(3 * h * w);
    const std::size_t plane = h * w;
    for (std::size_t i = 0; i < plane; ++i) {
        for (std::size_t c = 0; c < 3; ++c) {
            out[c * plane + i] = static_cast<float>(px[i * channels + (channels == 1 ? 0 : c)]) / 255.0f;
        }
    }
    return TensorF({3, h, w}, std::move(out));
}

TensorF decode_png(std::span<const std::uint8_t> bytes) {
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
        throw FormatError(std::string("corrupt PNG: ") + image.message);
    }
    // The simplified API reports 16-bit files as linear.
    if (image.format & PNG_FORMAT_FLAG_LINEAR) {
        png_image_free(&image);
        throw UnsupportedFormatError("16-bit PNG is not supported");
    }
    if (image.format & PNG_FORMAT_FLAG_ALPHA) {
        png_image_free(&image);
        throw UnsupportedFormatError("PNG with alpha channel is not supported");
    }
    const bool color = image.format & PNG_FORMAT_FLAG_COLOR;
    image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    const std::size_t h = image.height, w = image.width;
    std::vector<std::uint8_t> px(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, px.data(), 0, nullptr)) {
        throw FormatError(std::string("corrupt PNG: ") + image.message);
    }
    return from_interleaved(px.data(), h, w, color ? 3 : 1);
}

std::uint16_t le16(std::span<const std::uint8_t> b, std::size_t at) {
    return static_cast<std::uint16_t>(b[at] | (b[at + 1] << 8));
}

std::uint32_t le32(std::span<const std::uint8_t> b, std::size_t at) {
    return static_cast<std::uint32_t>(b[at]) | static_cast<std::uint32_t>(b[at + 1]) << 8 |
           static_cast<std::uint32_t>(b[at + 2]) << 16 | static_cast<std::uint32_t>(b[at + 3]) << 24;
}

TensorF decode_bmp(std::span<const std::uint8_t> b) {
    if (b.size() < 54) throw TruncatedError("BMP header is truncated");
    const std::uint32_t offset = le32(b, 10);
    const std::uint32_t dib = le32(b, 14);
    if (dib < 40) throw UnsupportedFormatError("BMP core headers are not supported");
    const auto width = static_cast<std::int32_t>(le32(b, 18));
    const auto height = static_cast<std::int32_t>(le32(b, 22));
    const std::uint16_t bpp = le16(b, 28);
    const std::uint32_t compression = le32(b, 30);
    std::uint32_t colors = le32(b, 46);
    if (compression != 0) throw UnsupportedFormatError("compressed BMP is not supported");
    if (bpp != 8 && bpp != 24 && bpp != 32) {
        throw UnsupportedFormatError("BMP with " + std::to_string(bpp) + " bits per pixel is not supported");
    }
    if (width <= 0 || height == 0) throw FormatError("BMP has an empty image");
    const std::size_t w = static_cast<std::size_t>(width);
    const bool top_down = height < 0;
    const std::size_t h = static_cast<std::size_t>(top_down ? -static_cast<std::int64_t>(height) : height);

    std::vector<std::uint8_t> palette;  // RGB triples
    if (bpp == 8) {
        if (colors == 0) colors = 256;
        if (colors > 256) throw FormatError("BMP palette has more than 256 entries");
        const std::size_t at = 14 + dib;
        if (at + 4 * static_cast<std::size_t>(colors) > b.size()) throw TruncatedError("BMP palette is truncated");
        for (std::size_t i = 0; i < colors; ++i) {
            palette.push_back(b[at + 4 * i + 2]);
            palette.push_back(b[at + 4 * i + 1]);
            palette.push_back(b[at + 4 * i]);
        }
    }
    const std::size_t bytes_pp = bpp / 8;
    const std::size_t stride = (w * bytes_pp + 3) / 4 * 4;
    if (offset > b.size() || (b.size() - offset) / stride < h) throw TruncatedError("BMP pixel data is truncated");

    std::vector<std::uint8_t> px(h * w * 3);
    for (std::size_t y = 0; y < h; ++y) {
        const std::size_t src_row = top_down ? y : h - 1 - y;
        const std::uint8_t* row = b.data() + offset + src_row * stride;
        for (std::size_t x = 0; x < w; ++x) {
            std::uint8_t* dst = &px[(y * w + x) * 3];
            if (bpp == 8) {
                const std::size_t idx = row[x];
                if (idx >= colors) throw FormatError("BMP palette index out of range");
                std::memcpy(dst, &palette[idx * 3], 3);
            } else {
                const std::uint8_t* s = row + x * bytes_pp;
                dst[0] = s[2];
                dst[1] = s[1];
                dst[2] = s[0];
            }
        }
    }
    return from_interleaved(px.data(), h, w, 3);
}

// Interleaved 8-bit samples of a 1- or 3-channel image.
std::vector<std::uint8_t> to_interleaved(const TensorF& img, std::size_t& h, std::size_t& w, std::size_t& c) {
    if (img.rank() != 3 || (img.dim(0) != 1 && img.dim(0) != 3)) {
        throw DimensionError("image must be [1 x H x W] or [3 x H x W], got " + shape_to_string(img.shape()));
    }
    c = img.dim(0);
    h = img.dim(1);
    w = img.dim(2);
    if (h == 0 || w == 0) throw DimensionError("image is empty");
    const auto d = img.data();
    std::vector<std::uint8_t> out(c * h * w);
    for (std::size_t i = 0; i < h * w; ++i) {
        for (std::size_t k = 0; k < c; ++k) {
            const float v = std::clamp(d[k * h * w + i], 0.0f, 1.0f);
            out[i * c + k] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
        }
    }
    return out;
}

}  // namespace

TensorF decode_image(std::span<const std::uint8_t> bytes) {
    if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPngMagic, 8) == 0) return decode_png(bytes);
    if (bytes.size() >= 2 && bytes[0] == 'B' && bytes[1] == 'M') return decode_bmp(bytes);
    throw UnsupportedFormatError("not a PNG or BMP file");
}

TensorF decode_image(const fs::path& path) { return decode_image(read_file(path)); }

std::vector<std::uint8_t> encode_png(const TensorF& img) {
    std::size_t h = 0, w = 0, c = 0;
    const auto px = to_interleaved(img, h, w, c);
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(w);
    image.height = static_cast<png_uint_32>(h);
    image.format = c == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&image, nullptr, &size, 0, px.data(), 0, nullptr)) {
        throw IoError(std::string("PNG encoding failed: ") + image.message);
    }
    std::vector<std::uint8_t> out(size);
    if (!png_image_write_to_memory(&image, out.data(), &size, 0, px.data(), 0, nullptr)) {
        throw IoError(std::string("PNG encoding failed: ") + image.message);
    }
    out.resize(size);
    return out;
}

std::vector<std::uint8_t> encode_bmp(const TensorF& img) {
    std::size_t h = 0, w = 0, c = 0;
    const auto px = to_interleaved(img, h, w, c);
    const std::size_t bytes_pp = c == 3 ? 3 : 1;
    const std::size_t stride = (w * bytes_pp + 3) / 4 * 4;
    const std::uint32_t palette = c == 3 ? 0 : 256 * 4;
    const std::uint32_t offset = 54 + palette;
    ByteWriter out;
    out.bytes("BM");
    out.u32(static_cast<std::uint32_t>(offset + stride * h));
    out.u32(0);
    out.u32(offset);
    out.u32(40);
    out.u32(static_cast<std::uint32_t>(w));
    out.u32(static_cast<std::uint32_t>(h));  // bottom-up
    out.u32(1 | static_cast<std::uint32_t>(bytes_pp * 8) << 16);  // planes, bpp
    out.u32(0);
    out.u32(static_cast<std::uint32_t>(stride * h));
    out.u32(2835);
    out.u32(2835);
    out.u32(c == 3 ? 0 : 256);
    out.u32(0);
    if (c == 1) {
        for (std::uint32_t i = 0; i < 256; ++i) out.u32(i | i << 8 | i << 16);
    }
    auto& buf = out.buffer();
    for (std::size_t y = h; y-- > 0;) {
        const std::size_t start = buf.size();
        for (std::size_t x = 0; x < w; ++x) {
            const std::uint8_t* s = &px[(y * w + x) * c];
            if (c == 3) {
                buf.push_back(s[2]);
                buf.push_back(s[1]);
                buf.push_back(s[0]);
            } else {
                buf.push_back(s[0]);
            }
        }
        buf.resize(start + stride, 0);
    }
    return buf;
}

void write_image(const fs::path& path, const TensorF& img) {
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (ext == ".png") write_file(path, encode_png(img));
    else if (ext == ".bmp") write_file(path, encode_bmp(img));
    else throw UnsupportedFormatError("cannot infer image format from '" + path.string() + "'");
}

}  // namespace msfpt
