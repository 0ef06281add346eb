#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "msfpt/backbone.hpp"
#include "msfpt/checkpoint.hpp"
#include "msfpt/config.hpp"
#include "msfpt/tensor.hpp"

namespace msfpt {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Manifest: CSV with header "ref_path,dist_path,mos". Row numbers count file
// lines, so the first data row is row 2.
// ---------------------------------------------------------------------------

struct ManifestRow {
    fs::path ref_path;  // resolved
    fs::path dist_path;
    double mos = 0.0;
    std::size_t row = 0;
};

struct Manifest {
    fs::path root;  // directory relative paths were resolved against
    std::vector<ManifestRow> rows;
};

/// Parses manifest text. With check_files set, every referenced file must
/// exist (IoError naming the row).
Manifest parse_manifest(std::string_view text, const fs::path& root, bool check_files = true);
Manifest load_manifest(const fs::path& path);
/// Writes paths relative to the manifest's directory when they lie below it.
void save_manifest(const fs::path& path, const std::vector<ManifestRow>& rows);

// ---------------------------------------------------------------------------
// Images: 8-bit PNG or uncompressed BMP, RGB or grayscale, decoded to
// [3 x H x W] floats v / 255.
// ---------------------------------------------------------------------------

TensorF decode_image(std::span<const std::uint8_t> bytes);
TensorF decode_image(const fs::path& path);

/// Values are clamped to [0, 1] and rounded to the nearest of 256 levels.
/// One channel writes grayscale, three write RGB.
std::vector<std::uint8_t> encode_png(const TensorF& img);
std::vector<std::uint8_t> encode_bmp(const TensorF& img);
void write_image(const fs::path& path, const TensorF& img);  // by extension

// ---------------------------------------------------------------------------
// Feature volumes: "FVOL", u32 version, u32 C, H, W, f32 scale, then
// C * H * W little-endian f32 values in row-major order.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kFvolVersion = 1;

std::vector<std::uint8_t> encode_fvol(const FeatureVolume<float>& f);
/// expected_channels, when given, is checked against C (DimensionError).
FeatureVolume<float> decode_fvol(std::span<const std::uint8_t> bytes,
                                 std::optional<std::size_t> expected_channels = std::nullopt);
void save_fvol(const FeatureVolume<float>& f, const fs::path& path);
FeatureVolume<float> load_fvol(const fs::path& path, std::optional<std::size_t> expected_channels = std::nullopt);

// ---------------------------------------------------------------------------
// Evaluation.
// ---------------------------------------------------------------------------

struct EvalRow {
    std::string ref_path;
    std::string dist_path;
    double mos = 0.0;
    double score = 0.0;      // model output, normalized MOS units
    double score_raw = 0.0;  // mapped back to the MOS range
};

struct EvalOptions {
    ScaleSet scales = ScaleSet::standard();
    std::size_t patches = 1;
    std::size_t threads = 1;
};

struct EvalReport {
    std::vector<EvalRow> rows;
    double plcc = 0.0;
    double srcc = 0.0;
    double krcc = 0.0;
    double main_score = 0.0;
    nlohmann::ordered_json config;
    double seconds = 0.0;

    nlohmann::ordered_json to_json() const;
    static EvalReport from_json(const nlohmann::json& j);
};

/// Correlations of raw scores against MOS.
void fill_aggregates(EvalReport& report);

/// Scores every manifest row (rows run concurrently, results stay in
/// manifest order) and fills the aggregates.
EvalReport evaluate(const Manifest& manifest, const Checkpoint& ckpt, const EvalOptions& opts);

// ---------------------------------------------------------------------------
// Synthetic data: smooth seeded noise textures distorted by blur plus noise
// at strengths (i + 1) / n. MOS is 1 - strength, so it falls monotonically.
// Pixel values sit exactly on the 8-bit grid so PNG round trips are lossless.
// ---------------------------------------------------------------------------

struct SyntheticPair {
    TensorF ref;
    TensorF dist;
    double strength = 0.0;
    double mos = 0.0;
};

std::vector<SyntheticPair> make_synthetic(std::size_t count, std::size_t size, std::uint64_t seed);
/// Writes ref_i.png, dist_i.png and manifest.csv; returns the manifest path.
fs::path write_synthetic(const fs::path& dir, const std::vector<SyntheticPair>& pairs);

}  // namespace msfpt
