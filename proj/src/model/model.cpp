#include "msfpt/model.hpp"
#include "msfpt/parallel.hpp"

#include <cmath>

namespace msfpt {

template <typename T>
EmbeddingParams<T> embedding_view(const ParamStore<T>& store, const std::string& group, const std::string& stream) {
    const std::string p = group + "." + stream;
    return {store.at(p + ".reduce"), store.at(p + ".quality"), store.at(p + ".position")};
}

template <typename T>
SequenceEmbedding<T> embed_sequence(const Tensor<T>& canonical, const EmbeddingParams<T>& emb) {
    if (canonical.rank() != 3) throw DimensionError("embedding input must be [C x h x w]");
    const std::size_t c = canonical.dim(0);
    const std::size_t n = canonical.dim(1) * canonical.dim(2);
    if (emb.reduce.rank() != 4 || emb.reduce.dim(1) != c || emb.reduce.dim(2) != 1 || emb.reduce.dim(3) != 1) {
        throw DimensionError("reduction weight " + shape_to_string(emb.reduce.shape()) + " does not fit " +
                             std::to_string(c) + " channels");
    }
    const std::size_t d = emb.reduce.dim(0);
    if (emb.position.shape() != Shape{n + 1, d}) {
        throw DimensionError("volume " + shape_to_string(canonical.shape()) + " gives " + std::to_string(n + 1) +
                             " tokens but the positional embedding is " + shape_to_string(emb.position.shape()));
    }
    if (emb.quality.shape() != Shape{1, d}) throw DimensionError("quality embedding must be [1 x D]");

    // A 1x1 convolution is a matmul over channels: [N x C] . [D x C]^T.
    const Tensor<T> grid = transpose(reshape(canonical, {c, n}));
    const Tensor<T> reduced = matmul_nt(grid, reshape(emb.reduce, {d, c}));
    return {add(concat_rows<T>({emb.quality, reduced}), emb.position)};
}

template <typename T>
Tensor<T> encode(const SequenceEmbedding<T>& seq, const ModelConfig& config, const ParamStore<T>& params,
                 const std::string& group) {
    Tensor<T> y = seq.tokens;
    for (std::size_t l = 0; l < config.layers; ++l) {
        const std::string p = group + ".encoder.layer" + std::to_string(l);
        const auto mha = mha_view(params, p + ".mha", config.heads);
        const Tensor<T> y1 = layer_norm_forward(layer_norm_view(params, p + ".ln1", config.ln_eps),
                                                add(mha_forward(mha, y, y, y), y));
        const auto mlp = mlp_view(params, p + ".mlp", config.mlp_activation);
        y = layer_norm_forward(layer_norm_view(params, p + ".ln2", config.ln_eps), add(mlp_forward(mlp, y1), y1));
    }
    return y;
}

template <typename T>
Tensor<T> decode(const SequenceEmbedding<T>& seq_ref, const Tensor<T>& enc_out, const ModelConfig& config,
                 const ParamStore<T>& params, const std::string& group) {
    if (enc_out.shape() != seq_ref.tokens.shape()) {
        throw DimensionError("encoder output " + shape_to_string(enc_out.shape()) + " does not match sequence " +
                             shape_to_string(seq_ref.tokens.shape()));
    }
    Tensor<T> z = seq_ref.tokens;
    for (std::size_t l = 0; l < config.layers; ++l) {
        const std::string p = group + ".decoder.layer" + std::to_string(l);
        const auto self_mha = mha_view(params, p + ".self_mha", config.heads);
        const Tensor<T> z1 = layer_norm_forward(layer_norm_view(params, p + ".ln1", config.ln_eps),
                                                add(mha_forward(self_mha, z, z, z), z));
        const auto cross = mha_view(params, p + ".cross_mha", config.heads);
        const Tensor<T> z2 = layer_norm_forward(layer_norm_view(params, p + ".ln2", config.ln_eps),
                                                add(mha_forward(cross, z1, enc_out, enc_out), z1));
        const auto mlp = mlp_view(params, p + ".mlp", config.mlp_activation);
        z = layer_norm_forward(layer_norm_view(params, p + ".ln3", config.ln_eps), add(mlp_forward(mlp, z2), z2));
    }
    return z;
}

template <typename T>
Tensor<T> head_score(const Tensor<T>& dec_out, const LinearLayer<T>& fc1, const LinearLayer<T>& fc2) {
    if (dec_out.rank() != 2) throw DimensionError("decoder output must be [S x D]");
    const Tensor<T> first = slice_rows(dec_out, 0, 1);
    return reshape(linear_forward(fc2, relu(linear_forward(fc1, first))), {1});
}

template <typename T>
Tensor<T> score_canonical(const Tensor<T>& ref_canonical, const Tensor<T>& diff_canonical, double scale,
                          const ModelConfig& config, const ParamStore<T>& params) {
    const std::string g = scale_group(scale);
    for (const Tensor<T>* v : {&ref_canonical, &diff_canonical}) {
        if (v->shape() != Shape{config.channels(), config.target_h, config.target_w}) {
            throw DimensionError("canonical volume " + shape_to_string(v->shape()) + " does not match the config (" +
                                 std::to_string(config.channels()) + " x " + std::to_string(config.target_h) + " x " +
                                 std::to_string(config.target_w) + ")");
        }
    }
    const auto enc_in = embed_sequence(diff_canonical, embedding_view(params, g, "enc_embed"));
    const auto dec_in = embed_sequence(ref_canonical, embedding_view(params, g, "dec_embed"));
    const Tensor<T> enc_out = encode(enc_in, config, params, g);
    const Tensor<T> dec_out = decode(dec_in, enc_out, config, params, g);
    return head_score(dec_out, linear_view(params, g + ".head.fc1"), linear_view(params, g + ".head.fc2"));
}

template <typename T>
Tensor<T> score_volumes(const FeatureVolume<T>& ref, const FeatureVolume<T>& dist, const ModelConfig& config,
                        const ParamStore<T>& params) {
    if (ref.channels() != config.channels()) {
        throw DimensionError("feature volume has " + std::to_string(ref.channels()) + " channels, config expects " +
                             std::to_string(config.channels()));
    }
    const auto diff = diff_features(ref, dist);
    const auto ref_c = to_canonical(ref, config.target_h, config.target_w);
    const auto diff_c = to_canonical(diff, config.target_h, config.target_w);
    return score_canonical(ref_c.data, diff_c.data, ref.scale, config, params);
}

template <typename T>
Tensor<T> score_scale(const Tensor<T>& ref_patch, const Tensor<T>& dist_patch, double scale,
                      const ModelConfig& config, const ParamStore<T>& params) {
    if (ref_patch.shape() != dist_patch.shape()) {
        throw DimensionError("reference " + shape_to_string(ref_patch.shape()) + " and distorted " +
                             shape_to_string(dist_patch.shape()) + " differ in size");
    }
    const auto ref = extract_features(rescale_image(ref_patch, scale), scale, config, params);
    const auto dist = extract_features(rescale_image(dist_patch, scale), scale, config, params);
    return score_volumes(ref, dist, config, params);
}

double ScaleScores::at(double scale) const {
    for (std::size_t i = 0; i < scales.size(); ++i) {
        if (scales[i] == scale) return values[i];
    }
    throw ContractError("scale " + scale_label(scale) + " was not scored");
}

double average_scores(const std::vector<double>& values) {
    if (values.empty()) throw ContractError("average of no scores");
    double total = 0.0;
    for (double v : values) total += v;
    return total / static_cast<double>(values.size());
}

namespace {

PairScore assemble(const ScaleSet& scales, std::vector<double> values) {
    PairScore out;
    out.per_scale.scales = scales.values();
    out.per_scale.values = std::move(values);
    out.final = average_scores(out.per_scale.values);
    return out;
}

}  // namespace

template <typename T>
PairScore score_pair(const Tensor<T>& ref, const Tensor<T>& dist, const ModelConfig& config,
                     const ParamStore<T>& params, const ScaleSet& scales, std::size_t threads) {
    validate_image(ref);
    validate_image(dist);
    if (ref.shape() != dist.shape()) throw DimensionError("reference and distorted images differ in size");
    build_pyramid(ref, scales);  // size check only
    std::vector<double> values(scales.size());
    parallel_for(scales.size(), threads, [&](std::size_t i) {
        values[i] = static_cast<double>(score_scale(ref, dist, scales[i], config, params).item());
    });
    return assemble(scales, std::move(values));
}

template <typename T>
PairScore score_pair_volumes(const std::vector<FeatureVolume<T>>& ref, const std::vector<FeatureVolume<T>>& dist,
                             const ModelConfig& config, const ParamStore<T>& params) {
    if (ref.empty() || ref.size() != dist.size()) {
        throw ContractError("need matching, non-empty reference and distorted volume lists");
    }
    std::vector<double> scales, values;
    for (std::size_t i = 0; i < ref.size(); ++i) {
        scales.push_back(ref[i].scale);
        values.push_back(static_cast<double>(score_volumes(ref[i], dist[i], config, params).item()));
    }
    return assemble(ScaleSet(scales), std::move(values));
}

std::vector<std::pair<std::size_t, std::size_t>> patch_grid(std::size_t height, std::size_t width,
                                                            std::size_t patch, std::size_t m) {
    if (m == 0) throw ContractError("patch count must be at least 1");
    if (height < patch || width < patch) {
        throw InputTooSmallError("image " + std::to_string(height) + "x" + std::to_string(width) +
                                 " is smaller than the " + std::to_string(patch) + " pixel patch");
    }
    const auto cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(m))));
    const std::size_t rows = (m + cols - 1) / cols;
    auto offsets = [patch](std::size_t extent, std::size_t count) {
        std::vector<std::size_t> out(count);
        const std::size_t span = extent - patch;
        for (std::size_t i = 0; i < count; ++i) {
            out[i] = count == 1 ? span / 2 : (i * span * 2 + (count - 1)) / (2 * (count - 1));
        }
        return out;
    };
    const auto ys = offsets(height, rows);
    const auto xs = offsets(width, cols);
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t r = 0; r < rows && out.size() < m; ++r) {
        for (std::size_t c = 0; c < cols && out.size() < m; ++c) out.emplace_back(ys[r], xs[c]);
    }
    return out;
}

template <typename T>
PairScore ensemble_pair(const Tensor<T>& ref, const Tensor<T>& dist, std::size_t m, const ModelConfig& config,
                        const ParamStore<T>& params, const ScaleSet& scales, std::size_t threads) {
    if (ref.shape() != dist.shape()) throw DimensionError("reference and distorted images differ in size");
    if (ref.rank() != 3) throw DimensionError("images must be [3 x H x W]");
    const std::size_t p = config.patch_size;
    std::vector<double> finals;
    std::vector<std::vector<double>> by_scale(scales.size());
    for (const auto& [y, x] : patch_grid(ref.dim(1), ref.dim(2), p, m)) {
        const PairScore s =
            score_pair(crop_image(ref, y, x, p, p), crop_image(dist, y, x, p, p), config, params, scales, threads);
        finals.push_back(s.final);
        for (std::size_t i = 0; i < scales.size(); ++i) by_scale[i].push_back(s.per_scale.values[i]);
    }
    PairScore out;
    out.final = average_scores(finals);
    out.per_scale.scales = scales.values();
    for (const auto& v : by_scale) out.per_scale.values.push_back(average_scores(v));
    return out;
}

template <typename T>
double ensemble_score(const Tensor<T>& ref, const Tensor<T>& dist, std::size_t m, const ModelConfig& config,
                      const ParamStore<T>& params, const ScaleSet& scales, std::size_t threads) {
    return ensemble_pair(ref, dist, m, config, params, scales, threads).final;
}

#define MSFPT_INSTANTIATE(T)                                                                                    \
    template EmbeddingParams<T> embedding_view(const ParamStore<T>&, const std::string&, const std::string&);   \
    template SequenceEmbedding<T> embed_sequence(const Tensor<T>&, const EmbeddingParams<T>&);                  \
    template Tensor<T> encode(const SequenceEmbedding<T>&, const ModelConfig&, const ParamStore<T>&,            \
                              const std::string&);                                                              \
    template Tensor<T> decode(const SequenceEmbedding<T>&, const Tensor<T>&, const ModelConfig&,                \
                              const ParamStore<T>&, const std::string&);                                        \
    template Tensor<T> head_score(const Tensor<T>&, const LinearLayer<T>&, const LinearLayer<T>&);              \
    template Tensor<T> score_canonical(const Tensor<T>&, const Tensor<T>&, double, const ModelConfig&,          \
                                       const ParamStore<T>&);                                                   \
    template Tensor<T> score_volumes(const FeatureVolume<T>&, const FeatureVolume<T>&, const ModelConfig&,      \
                                     const ParamStore<T>&);                                                     \
    template Tensor<T> score_scale(const Tensor<T>&, const Tensor<T>&, double, const ModelConfig&,              \
                                   const ParamStore<T>&);                                                       \
    template PairScore score_pair(const Tensor<T>&, const Tensor<T>&, const ModelConfig&, const ParamStore<T>&, \
                                  const ScaleSet&, std::size_t);                                                \
    template PairScore score_pair_volumes(const std::vector<FeatureVolume<T>>&,                                 \
                                          const std::vector<FeatureVolume<T>>&, const ModelConfig&,             \
                                          const ParamStore<T>&);                                                \
    template PairScore ensemble_pair(const Tensor<T>&, const Tensor<T>&, std::size_t, const ModelConfig&,       \
                                     const ParamStore<T>&, const ScaleSet&, std::size_t);                       \
    template double ensemble_score(const Tensor<T>&, const Tensor<T>&, std::size_t, const ModelConfig&,         \
                                   const ParamStore<T>&, const ScaleSet&, std::size_t);

MSFPT_INSTANTIATE(float)
MSFPT_INSTANTIATE(double)

}  // namespace msfpt
