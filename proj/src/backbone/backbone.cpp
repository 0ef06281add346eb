#include "msfpt/backbone.hpp"

#include <cmath>
#include <string>

namespace msfpt {

template <typename T>
void validate_image(const Tensor<T>& img, std::size_t min_side) {
    if (!img.defined() || img.rank() != 3 || img.dim(0) != 3) {
        throw DimensionError("image must be [3 x H x W], got " +
                             (img.defined() ? shape_to_string(img.shape()) : std::string("undefined")));
    }
    if (img.dim(1) < min_side || img.dim(2) < min_side) {
        throw InputTooSmallError("image " + std::to_string(img.dim(1)) + "x" + std::to_string(img.dim(2)) +
                                 " is smaller than " + std::to_string(min_side) + "x" + std::to_string(min_side));
    }
    for (T v : img.data()) {
        if (!(v >= T(0) && v <= T(1))) throw ContractError("image values must lie in [0, 1]");
    }
}

std::size_t scaled_size(std::size_t n, double scale) {
    return static_cast<std::size_t>(std::llround(static_cast<double>(n) / scale));
}

template <typename T>
Tensor<T> rescale_image(const Tensor<T>& img, double scale) {
    if (img.rank() != 3) throw DimensionError("rescale_image expects [C x H x W]");
    if (scale == 1.0) return img;
    const std::size_t h = scaled_size(img.dim(1), scale);
    const std::size_t w = scaled_size(img.dim(2), scale);
    if (h < kMinScaledSide || w < kMinScaledSide) {
        throw InputTooSmallError("image " + std::to_string(img.dim(1)) + "x" + std::to_string(img.dim(2)) +
                                 " becomes " + std::to_string(h) + "x" + std::to_string(w) + " at scale " +
                                 scale_label(scale) + " (minimum " + std::to_string(kMinScaledSide) + ")");
    }
    return bilinear_resize(img, h, w);
}

template <typename T>
std::vector<Tensor<T>> build_pyramid(const Tensor<T>& img, const ScaleSet& scales) {
    // Check every level before resampling any of them.
    if (img.rank() != 3) throw DimensionError("build_pyramid expects [C x H x W]");
    for (double s : scales.values()) {
        if (scaled_size(img.dim(1), s) < kMinScaledSide || scaled_size(img.dim(2), s) < kMinScaledSide) {
            throw InputTooSmallError("image " + std::to_string(img.dim(1)) + "x" + std::to_string(img.dim(2)) +
                                     " is too small for scale " + scale_label(s));
        }
    }
    std::vector<Tensor<T>> out;
    out.reserve(scales.size());
    for (double s : scales.values()) out.push_back(rescale_image(img, s));
    return out;
}

template <typename T>
Tensor<T> crop_image(const Tensor<T>& img, std::size_t y, std::size_t x, std::size_t h, std::size_t w) {
    if (img.rank() != 3) throw DimensionError("crop_image expects [C x H x W]");
    const std::size_t c = img.dim(0), ih = img.dim(1), iw = img.dim(2);
    if (h == 0 || w == 0 || y + h > ih || x + w > iw) {
        throw DimensionError("crop " + std::to_string(h) + "x" + std::to_string(w) + " at (" + std::to_string(y) +
                             ", " + std::to_string(x) + ") exceeds image " + shape_to_string(img.shape()));
    }
    if (y == 0 && x == 0 && h == ih && w == iw) return img.detach();
    const auto src = img.data();
    std::vector<T> out(c * h * w);
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t r = 0; r < h; ++r) {
            const T* row = src.data() + (ch * ih + y + r) * iw + x;
            std::copy(row, row + w, out.begin() + static_cast<std::ptrdiff_t>((ch * h + r) * w));
        }
    }
    return Tensor<T>({c, h, w}, std::move(out));
}

template <typename T>
FeatureVolume<T> extract_features(const Tensor<T>& img, double scale, const ModelConfig& config,
                                  const ParamStore<T>& params) {
    if (img.rank() != 3 || img.dim(0) != 3) {
        throw DimensionError("backbone input must be [3 x H x W], got " + shape_to_string(img.shape()));
    }
    if (img.dim(1) < kMinScaledSide || img.dim(2) < kMinScaledSide) {
        throw InputTooSmallError("backbone input " + shape_to_string(img.shape()) + " is below " +
                                 std::to_string(kMinScaledSide) + " pixels");
    }
    const std::size_t stages = config.num_blocks / 2;
    const std::size_t half = config.block_channels;

    std::vector<Tensor<T>> stage_out;
    Tensor<T> x = img;
    for (std::size_t s = 0; s < stages; ++s) {
        const auto& w = params.at(std::string(kBackbonePrefix) + "stage" + std::to_string(s) + ".weight");
        x = relu(conv2d(x, w, 2, 1));
        stage_out.push_back(x);
    }
    const std::size_t h = x.dim(1), w = x.dim(2);
    std::vector<Tensor<T>> taps;
    for (const auto& out : stage_out) {
        const Tensor<T> resized = bilinear_resize(out, h, w);
        // [2 * half x h x w] viewed as [2 * half x h * w]; each half is one tap.
        const Tensor<T> flat = reshape(resized, {2 * half, h * w});
        taps.push_back(slice_rows(flat, 0, half));
        taps.push_back(slice_rows(flat, half, half));
    }
    return {reshape(concat_rows(taps), {config.channels(), h, w}), scale, FeatureSource::computed};
}

template <typename T>
FeatureVolume<T> diff_features(const FeatureVolume<T>& f_ref, const FeatureVolume<T>& f_dist) {
    if (f_ref.scale != f_dist.scale) {
        throw ContractError("difference of volumes from scales " + scale_label(f_ref.scale) + " and " +
                            scale_label(f_dist.scale));
    }
    if (f_ref.data.shape() != f_dist.data.shape()) {
        throw DimensionError("difference of volumes " + shape_to_string(f_ref.data.shape()) + " and " +
                             shape_to_string(f_dist.data.shape()));
    }
    const FeatureSource src = f_ref.source == FeatureSource::imported || f_dist.source == FeatureSource::imported
                                  ? FeatureSource::imported
                                  : FeatureSource::computed;
    return {sub(f_ref.data, f_dist.data), f_ref.scale, src};
}

template <typename T>
FeatureVolume<T> to_canonical(const FeatureVolume<T>& f, std::size_t target_h, std::size_t target_w) {
    if (f.data.rank() != 3) throw DimensionError("feature volume must be [C x h x w]");
    return {bilinear_resize(f.data, target_h, target_w), f.scale, f.source};
}

#define MSFPT_INSTANTIATE(T)                                                                              \
    template void validate_image(const Tensor<T>&, std::size_t);                                          \
    template Tensor<T> rescale_image(const Tensor<T>&, double);                                           \
    template std::vector<Tensor<T>> build_pyramid(const Tensor<T>&, const ScaleSet&);                     \
    template Tensor<T> crop_image(const Tensor<T>&, std::size_t, std::size_t, std::size_t, std::size_t);  \
    template FeatureVolume<T> extract_features(const Tensor<T>&, double, const ModelConfig&,              \
                                               const ParamStore<T>&);                                     \
    template FeatureVolume<T> diff_features(const FeatureVolume<T>&, const FeatureVolume<T>&);            \
    template FeatureVolume<T> to_canonical(const FeatureVolume<T>&, std::size_t, std::size_t);

MSFPT_INSTANTIATE(float)
MSFPT_INSTANTIATE(double)

}  // namespace msfpt
