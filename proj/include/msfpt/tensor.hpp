#pragma once

#include <cstddef>
#include <cstring>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "msfpt/error.hpp"

namespace msfpt {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape) noexcept;
std::string shape_to_string(const Shape& shape);

namespace detail {

template <typename T>
struct TensorImpl;

template <typename T>
using ImplPtr = std::shared_ptr<TensorImpl<T>>;

template <typename T>
using BackwardFn =
    std::function<void(const TensorImpl<T>& out, const std::vector<ImplPtr<T>>& inputs)>;

// One executed differentiable op. Holds its inputs (never its output, so the
// graph has no ownership cycles) and the rule that turns the output gradient
// into input gradients.
template <typename T>
struct Node {
    const char* op = "";
    std::vector<ImplPtr<T>> inputs;
    BackwardFn<T> backward;
};

template <typename T>
struct TensorImpl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until something accumulates into it
    bool requires_grad = false;
    std::shared_ptr<Node<T>> grad_fn;  // null for leaves

    std::vector<T>& grad_buffer() {
        if (grad.empty()) grad.assign(data.size(), T(0));
        return grad;
    }
};

}  // namespace detail

/// Dense row-major tensor with reverse-mode differentiation.
///
/// Tensor is a shared handle: copies alias the same storage. Data is fixed
/// once an op produces it; only leaves (parameters) may be mutated in place,
/// and only through mutable_data(). Gradients accumulate into leaves that
/// have requires_grad set.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape);
    Tensor(Shape shape, std::vector<T> data);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, T value);
    static Tensor ones(Shape shape) { return full(std::move(shape), T(1)); }
    static Tensor scalar(T value) { return Tensor(Shape{1}, std::vector<T>{value}); }
    static Tensor from_impl(detail::ImplPtr<T> impl);

    bool defined() const noexcept { return static_cast<bool>(impl_); }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const { return data().size(); }

    std::span<const T> data() const;
    /// Leaves only. Throws ContractError on an op output.
    std::span<T> mutable_data();
    T item() const;
    T at(std::initializer_list<std::size_t> index) const;

    bool requires_grad() const;
    Tensor& set_requires_grad(bool on);
    bool is_leaf() const;

    bool has_grad() const;
    /// Empty span when nothing has been accumulated yet.
    std::span<const T> grad() const;
    std::span<T> mutable_grad();
    void zero_grad();

    /// Deep copy of the values as a fresh leaf with no gradient.
    Tensor detach() const;

    template <typename U>
    Tensor<U> cast() const {
        const auto src = data();
        std::vector<U> out(src.begin(), src.end());
        return Tensor<U>(shape(), std::move(out));
    }

    /// Bitwise equality of shape and data.
    bool same_bytes(const Tensor& other) const;

    const detail::ImplPtr<T>& impl() const noexcept { return impl_; }

private:
    void require_defined() const;

    detail::ImplPtr<T> impl_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled() noexcept;

// ---------------------------------------------------------------------------
// Ops. Every op validates shapes (DimensionError), rejects non-finite outputs
// (NumericError), and records a backward rule when any input requires grad.
// ---------------------------------------------------------------------------

/// [m x k] . [k x n] -> [m x n]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// [m x k] . [n x k]^T -> [m x n]
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> transpose(const Tensor<T>& a);

/// Cross-correlation of x [C_in x H x W] with w [C_out x C_in x kh x kw].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, std::size_t stride, std::size_t padding);

/// Bilinear resampling of x [C x H x W] with half-pixel centers and edge
/// clamping. Exact identity when the size is unchanged.
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, std::size_t out_h, std::size_t out_w);

/// Normalizes over the last axis, then applies gamma * x_hat + beta.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps);

/// Softmax over the last axis.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x);

// Binary elementwise ops accept equal shapes, or one operand with a single
// element (scalar broadcast). Nothing else broadcasts.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);

/// Gradient is 1 where x > 0 and 0 where x <= 0.
template <typename T>
Tensor<T> relu(const Tensor<T>& x);
/// tanh approximation.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);
/// Subgradient 0 at x == 0.
template <typename T>
Tensor<T> abs(const Tensor<T>& x);

/// Adds b [D] to every length-D row of x [... x D].
template <typename T>
Tensor<T> bias_add(const Tensor<T>& x, const Tensor<T>& b);

/// Sum / mean of all elements, shape {1}.
template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

/// Rows [start, start + count) along axis 0.
template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t start, std::size_t count);

/// Columns [start, start + count) of a 2-D tensor.
template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t start, std::size_t count);

/// Concatenation along axis 0; trailing dimensions must agree.
template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts);

/// Concatenation of 2-D tensors along axis 1.
template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts);

// ---------------------------------------------------------------------------
// Differentiation.
// ---------------------------------------------------------------------------

/// The executed ops reachable from a root, in topological order (inputs
/// before consumers). Backward visits them in exact reverse order.
template <typename T>
class Graph {
public:
    explicit Graph(Tensor<T> root);

    std::size_t size() const noexcept { return order_.size(); }
    std::vector<std::string> op_names() const;

    /// Seeds d(root)/d(root) = 1 and accumulates into every leaf that
    /// requires grad. Intermediate gradients are reset on each call, leaf
    /// gradients are summed across calls.
    void backward() const;

private:
    Tensor<T> root_;
    std::vector<detail::ImplPtr<T>> order_;
};

/// Root must hold exactly one element; otherwise ContractError.
template <typename T>
void backward(const Tensor<T>& root);

/// Central differences (f(x + eps e_i) - f(x - eps e_i)) / (2 eps) for every
/// element of x. f is evaluated on detached copies with graph recording off.
template <typename T>
Tensor<T> finite_diff_grad(const std::function<T(const Tensor<T>&)>& f, const Tensor<T>& x, T eps);

}  // namespace msfpt
