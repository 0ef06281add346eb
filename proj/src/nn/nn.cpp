#include "msfpt/nn.hpp"

#include <cmath>
#include <cstring>

#include "msfpt/rng.hpp"

namespace msfpt {

// ---------------------------------------------------------------------------
// ParamStore

template <typename T>
void ParamStore<T>::add(std::string name, Tensor<T> tensor) {
    if (!tensor.defined()) throw ContractError("parameter '" + name + "' is undefined");
    const auto [it, inserted] = params_.emplace(std::move(name), std::move(tensor));
    if (!inserted) throw ConfigError("duplicate parameter name '" + it->first + "'");
}

template <typename T>
const Tensor<T>& ParamStore<T>::at(std::string_view name) const {
    const auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("missing parameter '" + std::string(name) + "'");
    return it->second;
}

template <typename T>
Tensor<T>& ParamStore<T>::at(std::string_view name) {
    const auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("missing parameter '" + std::string(name) + "'");
    return it->second;
}

template <typename T>
std::vector<std::string> ParamStore<T>::names(std::string_view prefix) const {
    std::vector<std::string> out;
    for (const auto& [name, t] : params_) {
        if (name.starts_with(prefix)) out.push_back(name);
    }
    return out;
}

template <typename T>
std::size_t ParamStore<T>::value_count(std::string_view prefix) const {
    std::size_t n = 0;
    for (const auto& [name, t] : params_) {
        if (name.starts_with(prefix)) n += t.numel();
    }
    return n;
}

template <typename T>
ParamStore<T> ParamStore<T>::clone() const {
    ParamStore out(seed_);
    for (const auto& [name, t] : params_) {
        Tensor<T> c = t.detach();
        c.set_requires_grad(t.requires_grad());
        out.add(name, std::move(c));
    }
    return out;
}

template <typename T>
bool ParamStore<T>::same_bytes(const ParamStore& other) const {
    if (params_.size() != other.params_.size()) return false;
    auto a = params_.begin();
    auto b = other.params_.begin();
    for (; a != params_.end(); ++a, ++b) {
        if (a->first != b->first || !a->second.same_bytes(b->second)) return false;
    }
    return true;
}

template <typename T>
void ParamStore<T>::zero_grad() {
    for (auto& [name, t] : params_) t.zero_grad();
}

// ---------------------------------------------------------------------------
// Forward passes

template <typename T>
Tensor<T> linear_forward(const LinearLayer<T>& layer, const Tensor<T>& x) {
    const std::size_t d_in = layer.weight.dim(1);
    if (x.shape().back() != d_in) {
        throw DimensionError("linear: input " + shape_to_string(x.shape()) + " does not end in " +
                             std::to_string(d_in));
    }
    const std::size_t rows = x.numel() / d_in;
    const Tensor<T> flat = x.rank() == 2 ? x : reshape(x, {rows, d_in});
    Tensor<T> y = bias_add(matmul_nt(flat, layer.weight), layer.bias);
    if (x.rank() == 2) return y;
    Shape out_shape = x.shape();
    out_shape.back() = layer.weight.dim(0);
    return reshape(y, std::move(out_shape));
}

template <typename T>
Tensor<T> layer_norm_forward(const LayerNormParams<T>& ln, const Tensor<T>& x) {
    return layer_norm(x, ln.gamma, ln.beta, ln.eps);
}

template <typename T>
Tensor<T> mha_forward(const MultiHeadAttention<T>& mha, const Tensor<T>& q, const Tensor<T>& k,
                      const Tensor<T>& v, AttentionTrace<T>* trace) {
    const std::size_t d = mha.w_q.dim(0);
    if (mha.num_heads == 0 || d % mha.num_heads != 0) {
        throw DimensionError("attention width " + std::to_string(d) + " is not divisible by " +
                             std::to_string(mha.num_heads) + " heads");
    }
    for (const Tensor<T>* t : {&q, &k, &v}) {
        if (t->rank() != 2 || t->dim(1) != d) {
            throw DimensionError("attention input " + shape_to_string(t->shape()) + " is not [S x " +
                                 std::to_string(d) + "]");
        }
    }
    if (k.dim(0) != v.dim(0)) throw DimensionError("attention keys and values differ in length");

    const std::size_t head_dim = d / mha.num_heads;
    const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(head_dim));
    const Tensor<T> queries = matmul(q, mha.w_q);
    const Tensor<T> keys = matmul(k, mha.w_k);
    const Tensor<T> values = matmul(v, mha.w_v);
    if (trace) trace->weights.clear();

    std::vector<Tensor<T>> heads;
    heads.reserve(mha.num_heads);
    for (std::size_t h = 0; h < mha.num_heads; ++h) {
        const std::size_t c0 = h * head_dim;
        const Tensor<T> qh = mha.num_heads == 1 ? queries : slice_cols(queries, c0, head_dim);
        const Tensor<T> kh = mha.num_heads == 1 ? keys : slice_cols(keys, c0, head_dim);
        const Tensor<T> vh = mha.num_heads == 1 ? values : slice_cols(values, c0, head_dim);
        const Tensor<T> weights = softmax(scale(matmul_nt(qh, kh), inv_sqrt));
        if (trace) trace->weights.push_back(weights);
        heads.push_back(matmul(weights, vh));
    }
    const Tensor<T> joined = mha.num_heads == 1 ? heads.front() : concat_cols(heads);
    return matmul(joined, mha.w_o);
}

template <typename T>
Tensor<T> mlp_forward(const MlpBlock<T>& mlp, const Tensor<T>& x) {
    const Tensor<T> hidden = linear_forward(mlp.fc1, x);
    const Tensor<T> activated = mlp.activation == Activation::relu ? relu(hidden) : gelu(hidden);
    return linear_forward(mlp.fc2, activated);
}

// ---------------------------------------------------------------------------
// Views

template <typename T>
LinearLayer<T> linear_view(const ParamStore<T>& store, const std::string& prefix) {
    return {store.at(prefix + ".weight"), store.at(prefix + ".bias")};
}

template <typename T>
LayerNormParams<T> layer_norm_view(const ParamStore<T>& store, const std::string& prefix, double eps) {
    return {store.at(prefix + ".gamma"), store.at(prefix + ".beta"), static_cast<T>(eps)};
}

template <typename T>
MultiHeadAttention<T> mha_view(const ParamStore<T>& store, const std::string& prefix, std::size_t heads) {
    return {heads, store.at(prefix + ".W_q"), store.at(prefix + ".W_k"), store.at(prefix + ".W_v"),
            store.at(prefix + ".W_o")};
}

template <typename T>
MlpBlock<T> mlp_view(const ParamStore<T>& store, const std::string& prefix, Activation activation) {
    return {linear_view(store, prefix + ".fc1"), linear_view(store, prefix + ".fc2"), activation};
}

// ---------------------------------------------------------------------------
// Initialization

namespace {

template <typename T>
class Initializer {
public:
    Initializer(ParamStore<T>& store, std::uint64_t seed) : store_(store), seed_(seed) {}

    void uniform_fan(const std::string& name, Shape shape, std::size_t fan_in, std::size_t fan_out,
                     bool trainable = true) {
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        CounterRng rng(seed_, name);
        std::vector<T> v(shape_numel(shape));
        for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
        put(name, std::move(shape), std::move(v), trainable);
    }

    void matrix(const std::string& name, std::size_t rows, std::size_t cols) {
        uniform_fan(name, {rows, cols}, cols, rows);
    }

    void normal(const std::string& name, Shape shape, double stddev) {
        CounterRng rng(seed_, name);
        std::vector<T> v(shape_numel(shape));
        for (auto& x : v) x = static_cast<T>(rng.normal(0.0, stddev));
        put(name, std::move(shape), std::move(v), true);
    }

    void constant(const std::string& name, Shape shape, T value) {
        const auto n = shape_numel(shape);
        put(name, std::move(shape), std::vector<T>(n, value), true);
    }

    void linear(const std::string& prefix, std::size_t d_out, std::size_t d_in) {
        uniform_fan(prefix + ".weight", {d_out, d_in}, d_in, d_out);
        constant(prefix + ".bias", {d_out}, T(0));
    }

    void layer_norm(const std::string& prefix, std::size_t d) {
        constant(prefix + ".gamma", {d}, T(1));
        constant(prefix + ".beta", {d}, T(0));
    }

    void attention(const std::string& prefix, std::size_t d) {
        for (const char* w : {".W_q", ".W_k", ".W_v", ".W_o"}) matrix(prefix + w, d, d);
    }

    void mlp(const std::string& prefix, std::size_t d, std::size_t hidden) {
        linear(prefix + ".fc1", hidden, d);
        linear(prefix + ".fc2", d, hidden);
    }

private:
    void put(const std::string& name, Shape shape, std::vector<T> v, bool trainable) {
        Tensor<T> t(std::move(shape), std::move(v));
        t.set_requires_grad(trainable);
        store_.add(name, std::move(t));
    }

    ParamStore<T>& store_;
    std::uint64_t seed_;
};

}  // namespace

template <typename T>
ParamStore<T> init_params(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    ParamStore<T> store(seed);
    Initializer<T> init(store, seed);

    // Frozen stand-in backbone: num_blocks / 2 stride-2 3x3 stages, each
    // 2 * block_channels wide.
    const std::size_t stage_width = 2 * config.block_channels;
    for (std::size_t s = 0; s < config.num_blocks / 2; ++s) {
        const std::size_t c_in = s == 0 ? 3 : stage_width;
        init.uniform_fan(std::string(kBackbonePrefix) + "stage" + std::to_string(s) + ".weight",
                         {stage_width, c_in, 3, 3}, c_in * 9, stage_width * 9, false);
    }

    const std::size_t d = config.d_model;
    const std::size_t c = config.channels();
    const std::size_t seq = config.sequence_length();
    for (double scale : config.scales) {
        const std::string g = scale_group(scale);
        for (const char* stream : {".enc_embed", ".dec_embed"}) {
            const std::string p = g + stream;
            init.uniform_fan(p + ".reduce", {d, c, 1, 1}, c, d);
            init.normal(p + ".quality", {1, d}, 0.02);
            init.normal(p + ".position", {seq, d}, 0.02);
        }
        for (std::size_t l = 0; l < config.layers; ++l) {
            const std::string e = g + ".encoder.layer" + std::to_string(l);
            init.attention(e + ".mha", d);
            init.layer_norm(e + ".ln1", d);
            init.mlp(e + ".mlp", d, config.d_mlp);
            init.layer_norm(e + ".ln2", d);

            const std::string dec = g + ".decoder.layer" + std::to_string(l);
            init.attention(dec + ".self_mha", d);
            init.layer_norm(dec + ".ln1", d);
            init.attention(dec + ".cross_mha", d);
            init.layer_norm(dec + ".ln2", d);
            init.mlp(dec + ".mlp", d, config.d_mlp);
            init.layer_norm(dec + ".ln3", d);
        }
        init.linear(g + ".head.fc1", config.head_hidden, d);
        init.linear(g + ".head.fc2", 1, config.head_hidden);
    }
    return store;
}

#define MSFPT_INSTANTIATE(T)                                                                         \
    template class ParamStore<T>;                                                                    \
    template Tensor<T> linear_forward(const LinearLayer<T>&, const Tensor<T>&);                      \
    template Tensor<T> layer_norm_forward(const LayerNormParams<T>&, const Tensor<T>&);              \
    template Tensor<T> mha_forward(const MultiHeadAttention<T>&, const Tensor<T>&, const Tensor<T>&, \
                                   const Tensor<T>&, AttentionTrace<T>*);                            \
    template Tensor<T> mlp_forward(const MlpBlock<T>&, const Tensor<T>&);                            \
    template LinearLayer<T> linear_view(const ParamStore<T>&, const std::string&);                   \
    template LayerNormParams<T> layer_norm_view(const ParamStore<T>&, const std::string&, double);   \
    template MultiHeadAttention<T> mha_view(const ParamStore<T>&, const std::string&, std::size_t);  \
    template MlpBlock<T> mlp_view(const ParamStore<T>&, const std::string&, Activation);             \
    template ParamStore<T> init_params<T>(const ModelConfig&, std::uint64_t);

MSFPT_INSTANTIATE(float)
MSFPT_INSTANTIATE(double)
#undef MSFPT_INSTANTIATE

}  // namespace msfpt
