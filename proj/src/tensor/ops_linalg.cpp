#include <cstring>

#include "op_support.hpp"

namespace msfpt {

namespace detail {

// C[m x n] += A . B with A(i, p) = a[i * a_row + p * a_col] and B row-major
// [k x n]. Every output element accumulates its k products in ascending p
// order whatever the tiling, so results do not depend on the block sizes.
template <typename T>
struct Lanes {
    typedef T vec __attribute__((vector_size(32)));
    static constexpr std::size_t width = 32 / sizeof(T);
};

template <typename T, std::size_t MR>
inline void gemm_tile(const T* a, std::size_t a_row, std::size_t a_col, const T* b, T* c, std::size_t k,
                      std::size_t n) {
    using V = typename Lanes<T>::vec;
    constexpr std::size_t W = Lanes<T>::width;
    V acc[MR][2];
    for (std::size_t r = 0; r < MR; ++r) {
        std::memcpy(&acc[r][0], c + r * n, sizeof(V));
        std::memcpy(&acc[r][1], c + r * n + W, sizeof(V));
    }
    for (std::size_t p = 0; p < k; ++p) {
        V b0, b1;
        std::memcpy(&b0, b + p * n, sizeof(V));
        std::memcpy(&b1, b + p * n + W, sizeof(V));
        for (std::size_t r = 0; r < MR; ++r) {
            const T av = a[r * a_row + p * a_col];
            acc[r][0] += av * b0;
            acc[r][1] += av * b1;
        }
    }
    for (std::size_t r = 0; r < MR; ++r) {
        std::memcpy(c + r * n, &acc[r][0], sizeof(V));
        std::memcpy(c + r * n + W, &acc[r][1], sizeof(V));
    }
}

template <typename T>
void gemm_strided(const T* a, std::size_t a_row, std::size_t a_col, const T* b, T* c, std::size_t m,
                  std::size_t k, std::size_t n) {
    constexpr std::size_t MR = 4;
    constexpr std::size_t NR = 2 * Lanes<T>::width;
    const std::size_t m_main = m - m % MR;
    const std::size_t n_main = n - n % NR;
    for (std::size_t i = 0; i < m_main; i += MR) {
        for (std::size_t j = 0; j < n_main; j += NR) {
            gemm_tile<T, MR>(a + i * a_row, a_row, a_col, b + j, c + i * n + j, k, n);
        }
    }
    for (std::size_t i = 0; i < m; ++i) {
        // Leftover columns of the tiled rows, then whole leftover rows.
        const std::size_t j0 = i < m_main ? n_main : 0;
        if (j0 == n) continue;
        T* __restrict crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = a[i * a_row + p * a_col];
            const T* __restrict brow = b + p * n;
            for (std::size_t j = j0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <typename T>
void gemm_nn_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    gemm_strided(a, k, 1, b, c, m, k, n);
}

template <typename T>
void gemm_nt_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    // Transposing b first keeps the inner loop contiguous and vectorizable.
    std::vector<T> bt(k * n);
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
    }
    gemm_nn_acc(a, bt.data(), c, m, k, n);
}

template <typename T>
void gemm_tn_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    gemm_strided(a, 1, m, b, c, m, k, n);
}

template void gemm_nn_acc(const float*, const float*, float*, std::size_t, std::size_t, std::size_t);
template void gemm_nn_acc(const double*, const double*, double*, std::size_t, std::size_t, std::size_t);
template void gemm_nt_acc(const float*, const float*, float*, std::size_t, std::size_t, std::size_t);
template void gemm_nt_acc(const double*, const double*, double*, std::size_t, std::size_t, std::size_t);
template void gemm_tn_acc(const float*, const float*, float*, std::size_t, std::size_t, std::size_t);
template void gemm_tn_acc(const double*, const double*, double*, std::size_t, std::size_t, std::size_t);

}  // namespace detail

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_defined(a, "matmul");
    detail::require_defined(b, "matmul");
    detail::require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
                    "matmul: cannot multiply " + shape_to_string(a.shape()) + " by " +
                        shape_to_string(b.shape()));
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<T> out(m * n, T(0));
    detail::gemm_nn_acc(a.data().data(), b.data().data(), out.data(), m, k, n);
    return detail::make_result<T>(
        {m, n}, std::move(out), "matmul", {&a, &b},
        [m, k, n](const detail::TensorImpl<T>& o, const std::vector<detail::ImplPtr<T>>& in) {
            // dA = dC . B^T, dB = A^T . dC
            if (in[0]->requires_grad) {
                detail::gemm_nt_acc(o.grad.data(), in[1]->data.data(),
                                    in[0]->grad_buffer().data(), m, n, k);
            }
            if (in[1]->requires_grad) {
                detail::gemm_tn_acc(in[0]->data.data(), o.grad.data(),
                                    in[1]->grad_buffer().data(), k, m, n);
            }
        });
}

template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_defined(a, "matmul_nt");
    detail::require_defined(b, "matmul_nt");
    detail::require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(1),
                    "matmul_nt: cannot multiply " + shape_to_string(a.shape()) + " by the transpose of " +
                        shape_to_string(b.shape()));
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    std::vector<T> out(m * n, T(0));
    detail::gemm_nt_acc(a.data().data(), b.data().data(), out.data(), m, k, n);
    return detail::make_result<T>(
        {m, n}, std::move(out), "matmul_nt", {&a, &b},
        [m, k, n](const detail::TensorImpl<T>& o, const std::vector<detail::ImplPtr<T>>& in) {
            // C = A B^T: dA = dC . B, dB = dC^T . A
            if (in[0]->requires_grad) {
                detail::gemm_nn_acc(o.grad.data(), in[1]->data.data(),
                                    in[0]->grad_buffer().data(), m, n, k);
            }
            if (in[1]->requires_grad) {
                detail::gemm_tn_acc(o.grad.data(), in[0]->data.data(),
                                    in[1]->grad_buffer().data(), n, m, k);
            }
        });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
    detail::require_defined(a, "transpose");
    detail::require(a.rank() == 2, "transpose: expected a 2-D tensor, got " + shape_to_string(a.shape()));
    const std::size_t r = a.dim(0), c = a.dim(1);
    const auto src = a.data();
    std::vector<T> out(r * c);
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = src[i * c + j];
    }
    return detail::make_result<T>(
        {c, r}, std::move(out), "transpose", {&a},
        [r, c](const detail::TensorImpl<T>& o, const std::vector<detail::ImplPtr<T>>& in) {
            auto& g = in[0]->grad_buffer();
            for (std::size_t i = 0; i < r; ++i) {
                for (std::size_t j = 0; j < c; ++j) g[i * c + j] += o.grad[j * r + i];
            }
        });
}

template Tensor<float> matmul(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> matmul(const Tensor<double>&, const Tensor<double>&);
template Tensor<float> matmul_nt(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> matmul_nt(const Tensor<double>&, const Tensor<double>&);
template Tensor<float> transpose(const Tensor<float>&);
template Tensor<double> transpose(const Tensor<double>&);

}  // namespace msfpt
