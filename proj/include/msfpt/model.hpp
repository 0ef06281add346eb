#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "msfpt/backbone.hpp"
#include "msfpt/config.hpp"
#include "msfpt/nn.hpp"

namespace msfpt {

/// Token sequence [(1 + N) x D]: quality token in row 0, grid tokens in
/// row-major order (row y * w + x), positional embedding already added.
template <typename T>
struct SequenceEmbedding {
    Tensor<T> tokens;
};

template <typename T>
struct EmbeddingParams {
    Tensor<T> reduce;    // [D x C x 1 x 1]
    Tensor<T> quality;   // [1 x D]
    Tensor<T> position;  // [(1 + N) x D]
};

/// `stream` is "enc_embed" or "dec_embed".
template <typename T>
EmbeddingParams<T> embedding_view(const ParamStore<T>& store, const std::string& group, const std::string& stream);

/// 1x1 reduction to D channels, flatten, prepend the quality token, add the
/// positional embedding. `canonical` must be [C x h x w] with (1 + h * w)
/// positional rows.
template <typename T>
SequenceEmbedding<T> embed_sequence(const Tensor<T>& canonical, const EmbeddingParams<T>& emb);

/// Post-LN encoder: y' = LN(MHA(y, y, y) + y), y = LN(MLP(y') + y').
template <typename T>
Tensor<T> encode(const SequenceEmbedding<T>& seq, const ModelConfig& config, const ParamStore<T>& params,
                 const std::string& group);

/// Post-LN decoder: self-attention, cross-attention on enc_out, MLP.
template <typename T>
Tensor<T> decode(const SequenceEmbedding<T>& seq_ref, const Tensor<T>& enc_out, const ModelConfig& config,
                 const ParamStore<T>& params, const std::string& group);

/// fc2(relu(fc1(dec_out[0]))), shape {1}.
template <typename T>
Tensor<T> head_score(const Tensor<T>& dec_out, const LinearLayer<T>& fc1, const LinearLayer<T>& fc2);

/// Transformer for one scale, fed canonical reference and difference
/// volumes. Shape {1}.
template <typename T>
Tensor<T> score_canonical(const Tensor<T>& ref_canonical, const Tensor<T>& diff_canonical, double scale,
                          const ModelConfig& config, const ParamStore<T>& params);

/// Same, starting from native-size volumes of one scale.
template <typename T>
Tensor<T> score_volumes(const FeatureVolume<T>& ref, const FeatureVolume<T>& dist, const ModelConfig& config,
                        const ParamStore<T>& params);

/// Full pipeline for one scale: rescale, extract, diff, canonicalize,
/// encode the difference, decode the reference, head.
template <typename T>
Tensor<T> score_scale(const Tensor<T>& ref_patch, const Tensor<T>& dist_patch, double scale,
                      const ModelConfig& config, const ParamStore<T>& params);

struct ScaleScores {
    std::vector<double> scales;
    std::vector<double> values;

    /// Throws ContractError for a scale that was not scored.
    double at(double scale) const;
};

struct PairScore {
    double final = 0.0;
    ScaleScores per_scale;
};

/// Arithmetic mean, summed in the given order.
double average_scores(const std::vector<double>& values);

/// Scores every scale in `scales` (processing order as given) and averages
/// them. With threads > 1 scales run concurrently; results do not depend on
/// the thread count.
template <typename T>
PairScore score_pair(const Tensor<T>& ref, const Tensor<T>& dist, const ModelConfig& config,
                     const ParamStore<T>& params, const ScaleSet& scales, std::size_t threads = 1);

/// As score_pair, from per-scale volumes (e.g. imported .fvol files) given in
/// matching order.
template <typename T>
PairScore score_pair_volumes(const std::vector<FeatureVolume<T>>& ref, const std::vector<FeatureVolume<T>>& dist,
                             const ModelConfig& config, const ParamStore<T>& params);

/// Top-left corners of M patch x patch crops. The corners lie on a grid of
/// ceil(sqrt(M)) columns and ceil(M / columns) rows, evenly spaced with the
/// outermost crops touching the image border (a single row or column is
/// centered); the first M in row-major order are used. M = 1 is the center.
std::vector<std::pair<std::size_t, std::size_t>> patch_grid(std::size_t height, std::size_t width,
                                                            std::size_t patch, std::size_t m);

/// Crop-wise means over the M crops of patch_grid: final is the mean of the
/// crop finals, each per-scale entry the mean of that scale's crop scores.
template <typename T>
PairScore ensemble_pair(const Tensor<T>& ref, const Tensor<T>& dist, std::size_t m, const ModelConfig& config,
                        const ParamStore<T>& params, const ScaleSet& scales, std::size_t threads = 1);

/// ensemble_pair(...).final
template <typename T>
double ensemble_score(const Tensor<T>& ref, const Tensor<T>& dist, std::size_t m, const ModelConfig& config,
                      const ParamStore<T>& params, const ScaleSet& scales, std::size_t threads = 1);

}  // namespace msfpt
