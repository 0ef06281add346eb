#include <algorithm>
#include <cmath>

#include "op_support.hpp"

namespace msfpt {

template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
    detail::require_defined(x, "softmax");
    const std::size_t n = x.shape().back();
    const std::size_t rows = x.numel() / n;
    const auto src = x.data();
    std::vector<T> out(src.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* in = src.data() + r * n;
        T* o = out.data() + r * n;
        const T peak = *std::max_element(in, in + n);
        T total = T(0);
        for (std::size_t j = 0; j < n; ++j) {
            o[j] = std::exp(in[j] - peak);
            total += o[j];
        }
        for (std::size_t j = 0; j < n; ++j) o[j] /= total;
    }
    return detail::make_result<T>(
        x.shape(), std::move(out), "softmax", {&x},
        [rows, n](const detail::TensorImpl<T>& o, const std::vector<detail::ImplPtr<T>>& in) {
            auto& g = in[0]->grad_buffer();
            for (std::size_t r = 0; r < rows; ++r) {
                const T* y = o.data.data() + r * n;
                const T* gy = o.grad.data() + r * n;
                T dot = T(0);
                for (std::size_t j = 0; j < n; ++j) dot += gy[j] * y[j];
                for (std::size_t j = 0; j < n; ++j) g[r * n + j] += y[j] * (gy[j] - dot);
            }
        });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
    detail::require_defined(x, "layer_norm");
    detail::require_defined(gamma, "layer_norm");
    detail::require_defined(beta, "layer_norm");
    if (!(eps > T(0))) throw ContractError("layer_norm: eps must be positive");
    const std::size_t d = x.shape().back();
    detail::require(gamma.rank() == 1 && gamma.dim(0) == d && beta.shape() == gamma.shape(),
                    "layer_norm: gamma/beta must have shape [" + std::to_string(d) + "]");
    const std::size_t rows = x.numel() / d;
    const auto src = x.data();
    const auto gm = gamma.data();
    const auto bt = beta.data();

    std::vector<T> out(src.size());
    // x_hat and 1/sigma are kept for the backward rule.
    auto x_hat = std::make_shared<std::vector<T>>(src.size());
    auto inv_std = std::make_shared<std::vector<T>>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* in = src.data() + r * d;
        T mu = T(0);
        for (std::size_t j = 0; j < d; ++j) mu += in[j];
        mu /= static_cast<T>(d);
        T var = T(0);
        for (std::size_t j = 0; j < d; ++j) var += (in[j] - mu) * (in[j] - mu);
        var /= static_cast<T>(d);
        const T is = T(1) / std::sqrt(var + eps);
        (*inv_std)[r] = is;
        for (std::size_t j = 0; j < d; ++j) {
            const T h = (in[j] - mu) * is;
            (*x_hat)[r * d + j] = h;
            out[r * d + j] = gm[j] * h + bt[j];
        }
    }
    return detail::make_result<T>(
        x.shape(), std::move(out), "layer_norm", {&x, &gamma, &beta},
        [rows, d, x_hat, inv_std](const detail::TensorImpl<T>& o,
                                  const std::vector<detail::ImplPtr<T>>& in) {
            const auto& gm = in[1]->data;
            const auto& xh = *x_hat;
            if (in[0]->requires_grad) {
                auto& g = in[0]->grad_buffer();
                const T inv_d = T(1) / static_cast<T>(d);
                for (std::size_t r = 0; r < rows; ++r) {
                    const T* gy = o.grad.data() + r * d;
                    const T* h = xh.data() + r * d;
                    T mean_dh = T(0), mean_dh_h = T(0);
                    for (std::size_t j = 0; j < d; ++j) {
                        const T dh = gy[j] * gm[j];
                        mean_dh += dh;
                        mean_dh_h += dh * h[j];
                    }
                    mean_dh *= inv_d;
                    mean_dh_h *= inv_d;
                    for (std::size_t j = 0; j < d; ++j) {
                        const T dh = gy[j] * gm[j];
                        g[r * d + j] += (*inv_std)[r] * (dh - mean_dh - h[j] * mean_dh_h);
                    }
                }
            }
            if (in[1]->requires_grad) {
                auto& g = in[1]->grad_buffer();
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t j = 0; j < d; ++j) g[j] += o.grad[r * d + j] * xh[r * d + j];
                }
            }
            if (in[2]->requires_grad) {
                auto& g = in[2]->grad_buffer();
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t j = 0; j < d; ++j) g[j] += o.grad[r * d + j];
                }
            }
        });
}

template <typename T>
Tensor<T> bias_add(const Tensor<T>& x, const Tensor<T>& b) {
    detail::require_defined(x, "bias_add");
    detail::require_defined(b, "bias_add");
    const std::size_t d = x.shape().back();
    detail::require(b.rank() == 1 && b.dim(0) == d,
                    "bias_add: bias " + shape_to_string(b.shape()) + " does not match rows of " +
                        shape_to_string(x.shape()));
    const std::size_t rows = x.numel() / d;
    const auto src = x.data();
    const auto bias = b.data();
    std::vector<T> out(src.size());
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < d; ++j) out[r * d + j] = src[r * d + j] + bias[j];
    }
    return detail::make_result<T>(
        x.shape(), std::move(out), "bias_add", {&x, &b},
        [rows, d](const detail::TensorImpl<T>& o, const std::vector<detail::ImplPtr<T>>& in) {
            if (in[0]->requires_grad) {
                auto& g = in[0]->grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
            }
            if (in[1]->requires_grad) {
                auto& g = in[1]->grad_buffer();
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t j = 0; j < d; ++j) g[j] += o.grad[r * d + j];
                }
            }
        });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    detail::require_defined(x, "sum");
    double total = 0.0;
    for (const T v : x.data()) total += static_cast<double>(v);
    return detail::make_result<T>(
        {1}, {static_cast<T>(total)}, "sum", {&x},
        [](const detail::TensorImpl<T>& o, const std::vector<detail::ImplPtr<T>>& in) {
            auto& g = in[0]->grad_buffer();
            for (auto& v : g) v += o.grad[0];
        });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
    detail::require_defined(x, "mean");
    const std::size_t n = x.numel();
    double total = 0.0;
    for (const T v : x.data()) total += static_cast<double>(v);
    return detail::make_result<T>(
        {1}, {static_cast<T>(total / static_cast<double>(n))}, "mean", {&x},
        [n](const detail::TensorImpl<T>& o, const std::vector<detail::ImplPtr<T>>& in) {
            auto& g = in[0]->grad_buffer();
            const T share = o.grad[0] / static_cast<T>(n);
            for (auto& v : g) v += share;
        });
}

#define MSFPT_INSTANTIATE(T)                                                               \
    template Tensor<T> softmax(const Tensor<T>&);                                          \
    template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T); \
    template Tensor<T> bias_add(const Tensor<T>&, const Tensor<T>&);                       \
    template Tensor<T> sum(const Tensor<T>&);                                              \
    template Tensor<T> mean(const Tensor<T>&);

MSFPT_INSTANTIATE(float)
MSFPT_INSTANTIATE(double)
#undef MSFPT_INSTANTIATE

}  // namespace msfpt
