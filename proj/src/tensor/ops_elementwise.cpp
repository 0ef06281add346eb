#include <cmath>
#include <numbers>

#include "op_support.hpp"

namespace msfpt {

namespace {

enum class Broadcast { same, left_scalar, right_scalar };

template <typename T>
Broadcast classify(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    detail::require_defined(a, op);
    detail::require_defined(b, op);
    if (a.shape() == b.shape()) return Broadcast::same;
    if (b.numel() == 1) return Broadcast::right_scalar;
    if (a.numel() == 1) return Broadcast::left_scalar;
    throw DimensionError(std::string(op) + ": incompatible shapes " + shape_to_string(a.shape()) +
                         " and " + shape_to_string(b.shape()));
}

// Applies f elementwise with the supported broadcasting. da/db are the local
// partial derivatives, evaluated at (a_i, b_i).
template <typename T, typename F, typename DA, typename DB>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, const char* op, F f, DA da, DB db) {
    const Broadcast mode = classify(a, b, op);
    const Shape shape = mode == Broadcast::left_scalar ? b.shape() : a.shape();
    const std::size_t n = shape_numel(shape);
    const auto x = a.data();
    const auto y = b.data();
    const std::size_t sa = mode == Broadcast::left_scalar ? 0 : 1;
    const std::size_t sb = mode == Broadcast::right_scalar ? 0 : 1;
    std::vector<T> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = f(x[i * sa], y[i * sb]);
    return detail::make_result<T>(
        shape, std::move(out), op, {&a, &b},
        [n, sa, sb, da, db](const detail::TensorImpl<T>& o,
                            const std::vector<detail::ImplPtr<T>>& in) {
            const auto& xa = in[0]->data;
            const auto& xb = in[1]->data;
            if (in[0]->requires_grad) {
                auto& g = in[0]->grad_buffer();
                for (std::size_t i = 0; i < n; ++i) g[i * sa] += o.grad[i] * da(xa[i * sa], xb[i * sb]);
            }
            if (in[1]->requires_grad) {
                auto& g = in[1]->grad_buffer();
                for (std::size_t i = 0; i < n; ++i) g[i * sb] += o.grad[i] * db(xa[i * sa], xb[i * sb]);
            }
        });
}

template <typename T, typename F, typename D>
Tensor<T> unary(const Tensor<T>& x, const char* op, F f, D dfdx) {
    detail::require_defined(x, op);
    const auto src = x.data();
    std::vector<T> out(src.size());
    for (std::size_t i = 0; i < src.size(); ++i) out[i] = f(src[i]);
    return detail::make_result<T>(
        x.shape(), std::move(out), op, {&x},
        [dfdx](const detail::TensorImpl<T>& o, const std::vector<detail::ImplPtr<T>>& in) {
            auto& g = in[0]->grad_buffer();
            const auto& v = in[0]->data;
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * dfdx(v[i]);
        });
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return binary(
        a, b, "add", [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
        [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return binary(
        a, b, "sub", [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
        [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return binary(
        a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y) { return y; },
        [](T x, T) { return x; });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
    return unary(
        a, "scale", [factor](T x) { return x * factor; }, [factor](T) { return factor; });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    return unary(
        x, "relu", [](T v) { return v > T(0) ? v : T(0); },
        [](T v) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
    static const T c = static_cast<T>(std::sqrt(2.0 / std::numbers::pi));
    static const T k = static_cast<T>(0.044715);
    return unary(
        x, "gelu",
        [](T v) { return T(0.5) * v * (T(1) + std::tanh(c * (v + k * v * v * v))); },
        [](T v) {
            const T u = c * (v + k * v * v * v);
            const T t = std::tanh(u);
            const T du = c * (T(1) + T(3) * k * v * v);
            return T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * du;
        });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
    return unary(
        x, "abs", [](T v) { return std::abs(v); },
        [](T v) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

#define MSFPT_INSTANTIATE(T)                                               \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);           \
    template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);           \
    template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);           \
    template Tensor<T> scale(const Tensor<T>&, T);                        \
    template Tensor<T> relu(const Tensor<T>&);                            \
    template Tensor<T> gelu(const Tensor<T>&);                            \
    template Tensor<T> abs(const Tensor<T>&);

MSFPT_INSTANTIATE(float)
MSFPT_INSTANTIATE(double)
#undef MSFPT_INSTANTIATE

}  // namespace msfpt
