#pragma once

// Helpers shared by the op implementations. Not installed.

#include <cmath>
#include <initializer_list>
#include <string>
#include <vector>

#include "msfpt/tensor.hpp"

namespace msfpt::detail {

template <typename T>
void check_finite(const std::vector<T>& data, const char* op) {
    for (const T v : data) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string("non-finite value produced by ") + op);
        }
    }
}

/// Wraps freshly computed data into a tensor and, when gradients are needed,
/// attaches a graph node.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, const char* op,
                      std::initializer_list<const Tensor<T>*> inputs, BackwardFn<T> backward) {
    check_finite(data, op);
    auto impl = std::make_shared<TensorImpl<T>>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    bool needs_grad = false;
    if (grad_enabled()) {
        for (const Tensor<T>* in : inputs) needs_grad = needs_grad || in->requires_grad();
    }
    if (needs_grad) {
        auto node = std::make_shared<Node<T>>();
        node->op = op;
        node->inputs.reserve(inputs.size());
        for (const Tensor<T>* in : inputs) node->inputs.push_back(in->impl());
        node->backward = std::move(backward);
        impl->requires_grad = true;
        impl->grad_fn = std::move(node);
    }
    return Tensor<T>::from_impl(std::move(impl));
}

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, const char* op,
                      const std::vector<Tensor<T>>& inputs, BackwardFn<T> backward) {
    check_finite(data, op);
    auto impl = std::make_shared<TensorImpl<T>>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    bool needs_grad = false;
    if (grad_enabled()) {
        for (const auto& in : inputs) needs_grad = needs_grad || in.requires_grad();
    }
    if (needs_grad) {
        auto node = std::make_shared<Node<T>>();
        node->op = op;
        for (const auto& in : inputs) node->inputs.push_back(in.impl());
        node->backward = std::move(backward);
        impl->requires_grad = true;
        impl->grad_fn = std::move(node);
    }
    return Tensor<T>::from_impl(std::move(impl));
}

inline void require(bool condition, const std::string& message) {
    if (!condition) throw DimensionError(message);
}

template <typename T>
void require_defined(const Tensor<T>& t, const char* op) {
    if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor");
}

// Raw kernels, row-major, fixed summation order.

/// c[m x n] += a[m x k] . b[k x n]
template <typename T>
void gemm_nn_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n);
/// c[m x n] += a[m x k] . b[n x k]^T
template <typename T>
void gemm_nt_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n);
/// c[m x n] += a[k x m]^T . b[k x n]
template <typename T>
void gemm_tn_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n);

}  // namespace msfpt::detail
