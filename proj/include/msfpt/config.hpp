#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace msfpt {

enum class Activation { relu, gelu };

/// Working scales in their fixed processing order. A scale s resamples an
/// H x W image to round(H / s) x round(W / s).
class ScaleSet {
public:
    /// [1, 2, 3, 0.5]
    static ScaleSet standard();
    /// Comma-separated list such as "1,2,3,0.5" or "1". Each entry must be
    /// one of the standard scales and appear at most once.
    static ScaleSet parse(std::string_view csv);

    explicit ScaleSet(std::vector<double> scales);

    const std::vector<double>& values() const noexcept { return scales_; }
    std::size_t size() const noexcept { return scales_.size(); }
    double operator[](std::size_t i) const { return scales_.at(i); }
    bool contains(double scale) const noexcept;
    std::string to_string() const;

    bool operator==(const ScaleSet&) const = default;

private:
    std::vector<double> scales_;
};

/// "1", "2", "3", "0.5"
std::string scale_label(double scale);
/// Parameter-group prefix: "scale1", "scale2", "scale3", "scale05".
std::string scale_group(double scale);

struct ModelConfig {
    std::size_t d_model = 64;
    std::size_t layers = 2;  // encoder and decoder each
    std::size_t heads = 4;
    std::size_t d_mlp = 256;
    std::size_t head_hidden = 64;
    Activation mlp_activation = Activation::relu;
    double ln_eps = 1e-5;

    std::size_t target_h = 7;  // canonical grid
    std::size_t target_w = 7;
    std::size_t block_channels = 32;  // per backbone tap
    std::size_t num_blocks = 6;
    std::size_t patch_size = 192;  // inference crop size
    std::vector<double> scales{1.0, 2.0, 3.0, 0.5};

    /// Desk-scale defaults: D = 64, 2 + 2 layers, 4 heads, 192 channels on a
    /// 7 x 7 grid.
    static ModelConfig desk();
    /// Reference-size shapes: 1920 channels (6 x 320) on a 21 x 21 grid,
    /// D = 128, giving 442 tokens.
    static ModelConfig paper_shape();

    std::size_t channels() const noexcept { return block_channels * num_blocks; }
    std::size_t grid_tokens() const noexcept { return target_h * target_w; }
    /// Grid tokens plus the leading quality token.
    std::size_t sequence_length() const noexcept { return 1 + grid_tokens(); }
    ScaleSet scale_set() const { return ScaleSet(scales); }

    /// Throws ConfigError naming the first invalid field.
    void validate() const;

    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);

    bool operator==(const ModelConfig&) const = default;
};

}  // namespace msfpt
