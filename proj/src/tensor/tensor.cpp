#include "msfpt/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "op_support.hpp"

namespace msfpt {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t shape_numel(const Shape& shape) noexcept {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() noexcept { return g_grad_enabled; }

template <typename T>
Tensor<T>::Tensor(Shape shape) : Tensor(shape, std::vector<T>(shape_numel(shape), T(0))) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) {
    if (shape.empty()) throw DimensionError("tensor shape must have at least one axis");
    for (auto d : shape) {
        if (d == 0) throw DimensionError("zero-sized dimension in " + shape_to_string(shape));
    }
    if (shape_numel(shape) != data.size()) {
        throw DimensionError("shape " + shape_to_string(shape) + " does not match " +
                             std::to_string(data.size()) + " values");
    }
    impl_ = std::make_shared<detail::TensorImpl<T>>();
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value));
}

template <typename T>
Tensor<T> Tensor<T>::from_impl(detail::ImplPtr<T> impl) {
    Tensor t;
    t.impl_ = std::move(impl);
    return t;
}

template <typename T>
void Tensor<T>::require_defined() const {
    if (!impl_) throw ContractError("use of an undefined tensor");
}

template <typename T>
const Shape& Tensor<T>::shape() const {
    require_defined();
    return impl_->shape;
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
    const auto& s = shape();
    if (axis >= s.size()) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for " +
                             shape_to_string(s));
    }
    return s[axis];
}

template <typename T>
std::span<const T> Tensor<T>::data() const {
    require_defined();
    return impl_->data;
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
    require_defined();
    if (impl_->grad_fn) throw ContractError("cannot mutate the output of an op");
    return impl_->data;
}

template <typename T>
T Tensor<T>::item() const {
    if (numel() != 1) {
        throw ContractError("item() on tensor of shape " + shape_to_string(shape()));
    }
    return impl_->data[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<std::size_t> index) const {
    const auto& s = shape();
    if (index.size() != s.size()) throw DimensionError("index rank mismatch");
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (auto i : index) {
        if (i >= s[axis]) throw DimensionError("index out of range");
        flat = flat * s[axis] + i;
        ++axis;
    }
    return impl_->data[flat];
}

template <typename T>
bool Tensor<T>::requires_grad() const {
    return impl_ && impl_->requires_grad;
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
    require_defined();
    if (impl_->grad_fn) throw ContractError("requires_grad can only be set on leaves");
    impl_->requires_grad = on;
    return *this;
}

template <typename T>
bool Tensor<T>::is_leaf() const {
    require_defined();
    return !impl_->grad_fn;
}

template <typename T>
bool Tensor<T>::has_grad() const {
    return impl_ && !impl_->grad.empty();
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
    require_defined();
    return impl_->grad;
}

template <typename T>
std::span<T> Tensor<T>::mutable_grad() {
    require_defined();
    return impl_->grad_buffer();
}

template <typename T>
void Tensor<T>::zero_grad() {
    require_defined();
    impl_->grad.clear();
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
    require_defined();
    return Tensor(impl_->shape, impl_->data);
}

template <typename T>
bool Tensor<T>::same_bytes(const Tensor& other) const {
    if (shape() != other.shape()) return false;
    return std::memcmp(impl_->data.data(), other.impl_->data.data(), sizeof(T) * numel()) == 0;
}

// ---------------------------------------------------------------------------

template <typename T>
Graph<T>::Graph(Tensor<T> root) : root_(std::move(root)) {
    if (!root_.defined()) throw ContractError("backward from an undefined tensor");
    // Iterative post-order DFS. Inputs are pushed in declaration order, so
    // the resulting order is a deterministic function of the graph.
    std::unordered_set<const detail::TensorImpl<T>*> visited;
    struct Frame {
        detail::ImplPtr<T> impl;
        std::size_t next_input;
    };
    std::vector<Frame> stack;
    if (root_.impl()->grad_fn) {
        stack.push_back({root_.impl(), 0});
        visited.insert(root_.impl().get());
    }
    while (!stack.empty()) {
        auto& top = stack.back();
        const auto& inputs = top.impl->grad_fn->inputs;
        if (top.next_input < inputs.size()) {
            const auto& in = inputs[top.next_input++];
            if (in->grad_fn && visited.insert(in.get()).second) stack.push_back({in, 0});
        } else {
            order_.push_back(top.impl);
            stack.pop_back();
        }
    }
}

template <typename T>
std::vector<std::string> Graph<T>::op_names() const {
    std::vector<std::string> names;
    names.reserve(order_.size());
    for (const auto& impl : order_) names.emplace_back(impl->grad_fn->op);
    return names;
}

template <typename T>
void Graph<T>::backward() const {
    if (root_.numel() != 1) {
        throw ContractError("backward root must be a scalar, got " +
                            shape_to_string(root_.shape()));
    }
    if (!root_.requires_grad()) return;
    for (const auto& impl : order_) impl->grad.assign(impl->data.size(), T(0));
    if (order_.empty()) {
        // Root is itself a leaf.
        root_.impl()->grad_buffer()[0] += T(1);
        return;
    }
    order_.back()->grad[0] = T(1);
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
        const auto& impl = *it;
        impl->grad_fn->backward(*impl, impl->grad_fn->inputs);
    }
}

template <typename T>
void backward(const Tensor<T>& root) {
    Graph<T>(root).backward();
}

template <typename T>
Tensor<T> finite_diff_grad(const std::function<T(const Tensor<T>&)>& f, const Tensor<T>& x, T eps) {
    if (!(eps > T(0))) throw ContractError("finite_diff_grad: eps must be positive");
    NoGradGuard no_grad;
    Tensor<T> probe = x.detach();
    auto values = probe.mutable_data();
    std::vector<T> out(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        const T original = values[i];
        values[i] = original + eps;
        const T plus = f(probe);
        values[i] = original - eps;
        const T minus = f(probe);
        values[i] = original;
        out[i] = (plus - minus) / (T(2) * eps);
    }
    return Tensor<T>(x.shape(), std::move(out));
}

template class Tensor<float>;
template class Tensor<double>;
template class Graph<float>;
template class Graph<double>;
template void backward(const Tensor<float>&);
template void backward(const Tensor<double>&);
template Tensor<float> finite_diff_grad(const std::function<float(const Tensor<float>&)>&,
                                        const Tensor<float>&, float);
template Tensor<double> finite_diff_grad(const std::function<double(const Tensor<double>&)>&,
                                         const Tensor<double>&, double);

}  // namespace msfpt
