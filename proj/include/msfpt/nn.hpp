#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "msfpt/config.hpp"
#include "msfpt/tensor.hpp"

namespace msfpt {

/// Named, lexicographically ordered collection of model parameters.
template <typename T>
class ParamStore {
public:
    using Map = std::map<std::string, Tensor<T>, std::less<>>;

    explicit ParamStore(std::uint64_t seed = 0) : seed_(seed) {}

    /// Throws ConfigError if the name is already taken.
    void add(std::string name, Tensor<T> tensor);
    const Tensor<T>& at(std::string_view name) const;
    Tensor<T>& at(std::string_view name);
    bool contains(std::string_view name) const { return params_.find(name) != params_.end(); }

    std::size_t size() const noexcept { return params_.size(); }
    typename Map::const_iterator begin() const { return params_.begin(); }
    typename Map::const_iterator end() const { return params_.end(); }
    typename Map::iterator begin() { return params_.begin(); }
    typename Map::iterator end() { return params_.end(); }

    std::vector<std::string> names(std::string_view prefix = "") const;
    /// Total number of scalar values under `prefix`.
    std::size_t value_count(std::string_view prefix = "") const;
    std::uint64_t seed() const noexcept { return seed_; }

    /// Deep copy; requires_grad flags are kept, gradients are dropped.
    ParamStore clone() const;
    template <typename U>
    ParamStore<U> cast() const {
        ParamStore<U> out(seed_);
        for (const auto& [name, t] : params_) {
            Tensor<U> c = t.template cast<U>();
            c.set_requires_grad(t.requires_grad());
            out.add(name, std::move(c));
        }
        return out;
    }

    /// Same names, shapes and bit patterns (requires_grad is not compared).
    bool same_bytes(const ParamStore& other) const;
    void zero_grad();

private:
    Map params_;
    std::uint64_t seed_;
};

template <typename T>
struct LinearLayer {
    Tensor<T> weight;  // [D_out x D_in]
    Tensor<T> bias;    // [D_out]
};

template <typename T>
struct LayerNormParams {
    Tensor<T> gamma;
    Tensor<T> beta;
    T eps = T(1e-5);
};

template <typename T>
struct MultiHeadAttention {
    std::size_t num_heads = 1;
    // Projections are applied on the right: Q = q . w_q. Head h owns columns
    // [h * D / num_heads, (h + 1) * D / num_heads) of each projection.
    Tensor<T> w_q, w_k, w_v, w_o;  // [D x D]
};

template <typename T>
struct MlpBlock {
    LinearLayer<T> fc1;  // D -> D_mlp
    LinearLayer<T> fc2;  // D_mlp -> D
    Activation activation = Activation::relu;
};

/// Per-head attention weights [S_q x S_k], filled in when requested.
template <typename T>
struct AttentionTrace {
    std::vector<Tensor<T>> weights;
};

/// x . W^T + b over the trailing axis.
template <typename T>
Tensor<T> linear_forward(const LinearLayer<T>& layer, const Tensor<T>& x);

template <typename T>
Tensor<T> layer_norm_forward(const LayerNormParams<T>& ln, const Tensor<T>& x);

/// Unmasked scaled dot-product attention, concatenated over heads and
/// projected by w_o.
template <typename T>
Tensor<T> mha_forward(const MultiHeadAttention<T>& mha, const Tensor<T>& q, const Tensor<T>& k,
                      const Tensor<T>& v, AttentionTrace<T>* trace = nullptr);

template <typename T>
Tensor<T> mlp_forward(const MlpBlock<T>& mlp, const Tensor<T>& x);

// Views into a ParamStore using the standard naming scheme.
template <typename T>
LinearLayer<T> linear_view(const ParamStore<T>& store, const std::string& prefix);
template <typename T>
LayerNormParams<T> layer_norm_view(const ParamStore<T>& store, const std::string& prefix, double eps);
template <typename T>
MultiHeadAttention<T> mha_view(const ParamStore<T>& store, const std::string& prefix, std::size_t heads);
template <typename T>
MlpBlock<T> mlp_view(const ParamStore<T>& store, const std::string& prefix, Activation activation);

/// Fills a parameter store for `config`:
///   * weights ~ U(-a, a), a = sqrt(6 / (fan_in + fan_out)),
///   * biases and LayerNorm betas 0, LayerNorm gammas 1,
///   * quality and position embeddings ~ N(0, 0.02),
///   * backbone weights drawn like other weights but with requires_grad off.
/// Each tensor draws from its own CounterRng stream keyed by its name, so
/// the result is a pure function of (config, seed).
template <typename T>
ParamStore<T> init_params(const ModelConfig& config, std::uint64_t seed);

/// Prefix under which frozen backbone weights live.
inline constexpr std::string_view kBackbonePrefix = "backbone.";

}  // namespace msfpt
