#pragma once

#include <cstddef>
#include <vector>

#include "msfpt/config.hpp"
#include "msfpt/nn.hpp"
#include "msfpt/tensor.hpp"

namespace msfpt {

/// Smallest side accepted for an input image.
inline constexpr std::size_t kMinImageSide = 32;
/// Smallest side any pyramid level may have.
inline constexpr std::size_t kMinScaledSide = 9;

enum class FeatureSource { computed, imported };

template <typename T>
struct FeatureVolume {
    Tensor<T> data;  // [C x h x w]
    double scale = 1.0;
    FeatureSource source = FeatureSource::computed;

    std::size_t channels() const { return data.dim(0); }
    std::size_t height() const { return data.dim(1); }
    std::size_t width() const { return data.dim(2); }
};

/// Checks an RGB image [3 x H x W] with values in [0, 1] and sides of at
/// least `min_side`. Throws DimensionError, InputTooSmallError or
/// ContractError (out-of-range values).
template <typename T>
void validate_image(const Tensor<T>& img, std::size_t min_side = kMinImageSide);

/// round(n / scale), e.g. 192 -> 96 at scale 2 and 384 at scale 0.5.
std::size_t scaled_size(std::size_t n, double scale);

/// Image resampled to one scale. Scale 1 returns the input itself.
template <typename T>
Tensor<T> rescale_image(const Tensor<T>& img, double scale);

/// One image per scale, in the order of `scales`. Throws
/// InputTooSmallError if any level would have a side below 9.
template <typename T>
std::vector<Tensor<T>> build_pyramid(const Tensor<T>& img, const ScaleSet& scales);

/// Rows [y, y + h) and columns [x, x + w) of every channel. No gradient.
template <typename T>
Tensor<T> crop_image(const Tensor<T>& img, std::size_t y, std::size_t x, std::size_t h, std::size_t w);

/// Stand-in backbone: num_blocks / 2 stride-2, pad-1 3x3 conv + ReLU stages
/// of 2 * block_channels maps each. Every stage contributes two taps (its
/// two channel halves); the taps are resized to the last stage's size and
/// concatenated, giving num_blocks * block_channels channels. A side of n
/// becomes ceil(n / 2) per stage, so 192 -> 24 with three stages.
template <typename T>
FeatureVolume<T> extract_features(const Tensor<T>& img, double scale, const ModelConfig& config,
                                  const ParamStore<T>& params);

/// f_ref - f_dist. Shapes and scales must match.
template <typename T>
FeatureVolume<T> diff_features(const FeatureVolume<T>& f_ref, const FeatureVolume<T>& f_dist);

/// Bilinear resize of every channel to target_h x target_w; bit-exact
/// no-op when already that size.
template <typename T>
FeatureVolume<T> to_canonical(const FeatureVolume<T>& f, std::size_t target_h, std::size_t target_w);

}  // namespace msfpt
