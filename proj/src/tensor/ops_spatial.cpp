#include <algorithm>
#include <cmath>
#include <memory>

#include "op_support.hpp"

namespace msfpt {

namespace {

struct ConvGeometry {
    std::size_t c_in, h, w, c_out, kh, kw, stride, pad, out_h, out_w;
    std::size_t patch() const { return c_in * kh * kw; }
    std::size_t positions() const { return out_h * out_w; }
};

// cols[(c, ky, kx), (oy, ox)]; out-of-bounds taps read zero.
template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
    const std::size_t p = g.positions();
    for (std::size_t c = 0; c < g.c_in; ++c) {
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
                T* row = cols + ((c * g.kh + ky) * g.kw + kx) * p;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                    static_cast<std::ptrdiff_t>(g.pad);
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                        static_cast<std::ptrdiff_t>(g.pad);
                        const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.h) &&
                                            ix < static_cast<std::ptrdiff_t>(g.w);
                        row[oy * g.out_w + ox] =
                            inside ? x[(c * g.h + static_cast<std::size_t>(iy)) * g.w +
                                       static_cast<std::size_t>(ix)]
                                   : T(0);
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_acc(const T* cols, const ConvGeometry& g, T* dx) {
    const std::size_t p = g.positions();
    for (std::size_t c = 0; c < g.c_in; ++c) {
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
                const T* row = cols + ((c * g.kh + ky) * g.kw + kx) * p;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                    static_cast<std::ptrdiff_t>(g.pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                        static_cast<std::ptrdiff_t>(g.pad);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
                        dx[(c * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)] +=
                            row[oy * g.out_w + ox];
                    }
                }
            }
        }
    }
}

// Source sample positions for one axis under half-pixel centers.
struct AxisTaps {
    std::vector<std::size_t> lo, hi;
    std::vector<double> frac;
};

AxisTaps axis_taps(std::size_t in, std::size_t out) {
    AxisTaps t;
    t.lo.resize(out);
    t.hi.resize(out);
    t.frac.resize(out);
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t i = 0; i < out; ++i) {
        double src = (static_cast<double>(i) + 0.5) * ratio - 0.5;
        src = std::clamp(src, 0.0, static_cast<double>(in - 1));
        const auto lo = static_cast<std::size_t>(std::floor(src));
        t.lo[i] = lo;
        t.hi[i] = std::min(lo + 1, in - 1);
        t.frac[i] = src - static_cast<double>(lo);
    }
    return t;
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, std::size_t stride, std::size_t padding) {
    detail::require_defined(x, "conv2d");
    detail::require_defined(w, "conv2d");
    if (stride < 1) throw ContractError("conv2d: stride must be >= 1");
    detail::require(x.rank() == 3 && w.rank() == 4 && w.dim(1) == x.dim(0),
                    "conv2d: input " + shape_to_string(x.shape()) + " incompatible with kernel " +
                        shape_to_string(w.shape()));
    ConvGeometry g{};
    g.c_in = x.dim(0);
    g.h = x.dim(1);
    g.w = x.dim(2);
    g.c_out = w.dim(0);
    g.kh = w.dim(2);
    g.kw = w.dim(3);
    g.stride = stride;
    g.pad = padding;
    detail::require(g.kh <= g.h + 2 * padding && g.kw <= g.w + 2 * padding,
                    "conv2d: kernel " + shape_to_string(w.shape()) + " larger than padded input " +
                        shape_to_string(x.shape()));
    g.out_h = (g.h + 2 * padding - g.kh) / stride + 1;
    g.out_w = (g.w + 2 * padding - g.kw) / stride + 1;

    auto cols = std::make_shared<std::vector<T>>(g.patch() * g.positions());
    im2col(x.data().data(), g, cols->data());
    std::vector<T> out(g.c_out * g.positions(), T(0));
    detail::gemm_nn_acc(w.data().data(), cols->data(), out.data(), g.c_out, g.patch(), g.positions());

    return detail::make_result<T>(
        {g.c_out, g.out_h, g.out_w}, std::move(out), "conv2d", {&x, &w},
        [g, cols](const detail::TensorImpl<T>& o, const std::vector<detail::ImplPtr<T>>& in) {
            if (in[1]->requires_grad) {
                // dW[c_out x patch] += dY[c_out x P] . cols[patch x P]^T
                detail::gemm_nt_acc(o.grad.data(), cols->data(), in[1]->grad_buffer().data(),
                                    g.c_out, g.positions(), g.patch());
            }
            if (in[0]->requires_grad) {
                std::vector<T> dcols(g.patch() * g.positions(), T(0));
                detail::gemm_tn_acc(in[1]->data.data(), o.grad.data(), dcols.data(), g.patch(),
                                    g.c_out, g.positions());
                col2im_acc(dcols.data(), g, in[0]->grad_buffer().data());
            }
        });
}

template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
    detail::require_defined(x, "bilinear_resize");
    detail::require(x.rank() == 3, "bilinear_resize: expected C x H x W, got " + shape_to_string(x.shape()));
    detail::require(out_h >= 1 && out_w >= 1, "bilinear_resize: output size must be positive");
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const auto src = x.data();

    if (h == out_h && w == out_w) {
        return detail::make_result<T>(
            x.shape(), std::vector<T>(src.begin(), src.end()), "bilinear_resize", {&x},
            [](const detail::TensorImpl<T>& o, const std::vector<detail::ImplPtr<T>>& in) {
                auto& g = in[0]->grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
            });
    }

    auto ty = std::make_shared<AxisTaps>(axis_taps(h, out_h));
    auto tx = std::make_shared<AxisTaps>(axis_taps(w, out_w));
    std::vector<T> out(c * out_h * out_w);
    for (std::size_t ch = 0; ch < c; ++ch) {
        const T* plane = src.data() + ch * h * w;
        for (std::size_t i = 0; i < out_h; ++i) {
            const T* top = plane + ty->lo[i] * w;
            const T* bottom = plane + ty->hi[i] * w;
            const T fy = static_cast<T>(ty->frac[i]);
            for (std::size_t j = 0; j < out_w; ++j) {
                const T fx = static_cast<T>(tx->frac[j]);
                // std::lerp is exact at the endpoints and bounded by them,
                // so outputs never leave the input range.
                const T upper = std::lerp(top[tx->lo[j]], top[tx->hi[j]], fx);
                const T lower = std::lerp(bottom[tx->lo[j]], bottom[tx->hi[j]], fx);
                out[(ch * out_h + i) * out_w + j] = std::lerp(upper, lower, fy);
            }
        }
    }
    return detail::make_result<T>(
        {c, out_h, out_w}, std::move(out), "bilinear_resize", {&x},
        [c, h, w, out_h, out_w, ty, tx](const detail::TensorImpl<T>& o,
                                        const std::vector<detail::ImplPtr<T>>& in) {
            auto& g = in[0]->grad_buffer();
            for (std::size_t ch = 0; ch < c; ++ch) {
                T* plane = g.data() + ch * h * w;
                for (std::size_t i = 0; i < out_h; ++i) {
                    const T fy = static_cast<T>(ty->frac[i]);
                    T* top = plane + ty->lo[i] * w;
                    T* bottom = plane + ty->hi[i] * w;
                    for (std::size_t j = 0; j < out_w; ++j) {
                        const T fx = static_cast<T>(tx->frac[j]);
                        const T go = o.grad[(ch * out_h + i) * out_w + j];
                        top[tx->lo[j]] += go * (T(1) - fy) * (T(1) - fx);
                        top[tx->hi[j]] += go * (T(1) - fy) * fx;
                        bottom[tx->lo[j]] += go * fy * (T(1) - fx);
                        bottom[tx->hi[j]] += go * fy * fx;
                    }
                }
            }
        });
}

#define MSFPT_INSTANTIATE(T)                                                                   \
    template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t);   \
    template Tensor<T> bilinear_resize(const Tensor<T>&, std::size_t, std::size_t);

MSFPT_INSTANTIATE(float)
MSFPT_INSTANTIATE(double)
#undef MSFPT_INSTANTIATE

}  // namespace msfpt
