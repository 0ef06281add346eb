#include <algorithm>

#include "op_support.hpp"

namespace msfpt {

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    detail::require_defined(x, "reshape");
    detail::require(shape_numel(shape) == x.numel() && !shape.empty(),
                    "reshape: cannot view " + shape_to_string(x.shape()) + " as " +
                        shape_to_string(shape));
    const auto src = x.data();
    return detail::make_result<T>(
        std::move(shape), std::vector<T>(src.begin(), src.end()), "reshape", {&x},
        [](const detail::TensorImpl<T>& o, const std::vector<detail::ImplPtr<T>>& in) {
            auto& g = in[0]->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
        });
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t start, std::size_t count) {
    detail::require_defined(x, "slice_rows");
    detail::require(count > 0 && start + count <= x.dim(0),
                    "slice_rows: rows [" + std::to_string(start) + ", " +
                        std::to_string(start + count) + ") out of range for " +
                        shape_to_string(x.shape()));
    const std::size_t stride = x.numel() / x.dim(0);
    Shape shape = x.shape();
    shape[0] = count;
    const auto src = x.data();
    const std::size_t offset = start * stride;
    std::vector<T> out(src.begin() + offset, src.begin() + offset + count * stride);
    return detail::make_result<T>(
        std::move(shape), std::move(out), "slice_rows", {&x},
        [offset](const detail::TensorImpl<T>& o, const std::vector<detail::ImplPtr<T>>& in) {
            auto& g = in[0]->grad_buffer();
            for (std::size_t i = 0; i < o.grad.size(); ++i) g[offset + i] += o.grad[i];
        });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t start, std::size_t count) {
    detail::require_defined(x, "slice_cols");
    detail::require(x.rank() == 2 && count > 0 && start + count <= x.dim(1),
                    "slice_cols: columns [" + std::to_string(start) + ", " +
                        std::to_string(start + count) + ") out of range for " +
                        shape_to_string(x.shape()));
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    const auto src = x.data();
    std::vector<T> out(rows * count);
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(src.begin() + r * cols + start, count, out.begin() + r * count);
    }
    return detail::make_result<T>(
        {rows, count}, std::move(out), "slice_cols", {&x},
        [rows, cols, start, count](const detail::TensorImpl<T>& o,
                                   const std::vector<detail::ImplPtr<T>>& in) {
            auto& g = in[0]->grad_buffer();
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t j = 0; j < count; ++j) g[r * cols + start + j] += o.grad[r * count + j];
            }
        });
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw DimensionError("concat_rows: no inputs");
    for (const auto& p : parts) detail::require_defined(p, "concat_rows");
    Shape shape = parts.front().shape();
    const Shape tail(shape.begin() + 1, shape.end());
    std::size_t rows = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        detail::require(s.size() == shape.size() && Shape(s.begin() + 1, s.end()) == tail,
                        "concat_rows: " + shape_to_string(s) + " does not match " +
                            shape_to_string(shape));
        rows += s[0];
    }
    shape[0] = rows;
    std::vector<T> out;
    out.reserve(shape_numel(shape));
    std::vector<std::size_t> sizes;
    for (const auto& p : parts) {
        const auto d = p.data();
        out.insert(out.end(), d.begin(), d.end());
        sizes.push_back(d.size());
    }
    return detail::make_result<T>(
        std::move(shape), std::move(out), "concat_rows", parts,
        [sizes](const detail::TensorImpl<T>& o, const std::vector<detail::ImplPtr<T>>& in) {
            std::size_t offset = 0;
            for (std::size_t k = 0; k < in.size(); ++k) {
                if (in[k]->requires_grad) {
                    auto& g = in[k]->grad_buffer();
                    for (std::size_t i = 0; i < sizes[k]; ++i) g[i] += o.grad[offset + i];
                }
                offset += sizes[k];
            }
        });
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw DimensionError("concat_cols: no inputs");
    for (const auto& p : parts) detail::require_defined(p, "concat_cols");
    const std::size_t rows = parts.front().dim(0);
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const auto& p : parts) {
        detail::require(p.rank() == 2 && p.dim(0) == rows,
                        "concat_cols: " + shape_to_string(p.shape()) + " has the wrong row count");
        widths.push_back(p.dim(1));
        total += p.dim(1);
    }
    std::vector<T> out(rows * total);
    std::size_t col = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto d = parts[k].data();
        for (std::size_t r = 0; r < rows; ++r) {
            std::copy_n(d.begin() + r * widths[k], widths[k], out.begin() + r * total + col);
        }
        col += widths[k];
    }
    return detail::make_result<T>(
        {rows, total}, std::move(out), "concat_cols", parts,
        [rows, total, widths](const detail::TensorImpl<T>& o,
                              const std::vector<detail::ImplPtr<T>>& in) {
            std::size_t c = 0;
            for (std::size_t k = 0; k < in.size(); ++k) {
                if (in[k]->requires_grad) {
                    auto& g = in[k]->grad_buffer();
                    for (std::size_t r = 0; r < rows; ++r) {
                        for (std::size_t j = 0; j < widths[k]; ++j) {
                            g[r * widths[k] + j] += o.grad[r * total + c + j];
                        }
                    }
                }
                c += widths[k];
            }
        });
}

#define MSFPT_INSTANTIATE(T)                                                    \
    template Tensor<T> reshape(const Tensor<T>&, Shape);                        \
    template Tensor<T> slice_rows(const Tensor<T>&, std::size_t, std::size_t);  \
    template Tensor<T> slice_cols(const Tensor<T>&, std::size_t, std::size_t);  \
    template Tensor<T> concat_rows(const std::vector<Tensor<T>>&);              \
    template Tensor<T> concat_cols(const std::vector<Tensor<T>>&);

MSFPT_INSTANTIATE(float)
MSFPT_INSTANTIATE(double)
#undef MSFPT_INSTANTIATE

}  // namespace msfpt
