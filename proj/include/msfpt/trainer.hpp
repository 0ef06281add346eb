#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "msfpt/checkpoint.hpp"
#include "msfpt/config.hpp"
#include "msfpt/nn.hpp"
#include "msfpt/rng.hpp"

namespace msfpt {

struct TrainConfig {
    double lr0 = 2e-4;
    double weight_decay = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t batch_size = 16;
    std::size_t total_steps = 0;  // required in JSON
    std::size_t patch_size = 192;
    std::uint64_t seed = 0;
    bool augment = true;
    std::size_t log_every = 1;
    std::size_t threads = 1;  // scale groups trained concurrently

    void validate() const;
    nlohmann::json to_json() const;
    /// Unknown keys and a missing total_steps are ConfigErrors.
    static TrainConfig from_json(const nlohmann::json& j);
};

/// mean(|pred - target|) over equal-length 1-D tensors. Subgradient 0 at
/// exact ties.
template <typename T>
Tensor<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target);

/// lr0 * (1 + cos(pi * step / total_steps)) / 2.
double cosine_lr(std::size_t step, std::size_t total_steps, double lr0);

template <typename T>
struct AdamState {
    std::uint64_t step = 0;
    std::map<std::string, std::vector<T>, std::less<>> first_moment;
    std::map<std::string, std::vector<T>, std::less<>> second_moment;
};

/// One Adam update of every trainable parameter under `prefix` that holds a
/// gradient: decoupled decay p -= lr * wd * p, then the bias-corrected Adam
/// step. Parameters with requires_grad off (the backbone) are never
/// touched. Moments are created on first use.
template <typename T>
void adam_step(ParamStore<T>& params, AdamState<T>& state, double lr, const TrainConfig& cfg,
               std::string_view prefix = "");

// Geometric transforms of [C x H x W] images.
template <typename T>
Tensor<T> flip_vertical(const Tensor<T>& img);
template <typename T>
Tensor<T> flip_horizontal(const Tensor<T>& img);
/// Counter-clockwise rotation by k * 90 degrees.
template <typename T>
Tensor<T> rotate90(const Tensor<T>& img, unsigned k);

/// Random patch crop, vertical flip, horizontal flip and k * 90 degree
/// rotation, drawn once and applied to both images. With `enabled` false
/// both images get the center crop and rng is not consumed.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> augment(const Tensor<T>& ref, const Tensor<T>& dist, std::size_t patch,
                                        CounterRng& rng, bool enabled);

struct TrainSample {
    TensorF ref;
    TensorF dist;
    double mos = 0.0;
};

struct LossRecord {
    std::size_t step = 0;  // updates applied so far
    double lr = 0.0;       // rate used for that update
    double loss = 0.0;     // sum over scales of the batch L1 loss
};

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<LossRecord> history;
};

/// Joint training of the per-scale models on shared batches. Targets are
/// MOS values min-max normalized over `data`; the constants go into the
/// checkpoint metadata. Loss lines "step,lr,loss" go to `log` every
/// cfg.log_every steps. Results do not depend on cfg.threads.
TrainResult train(const std::vector<TrainSample>& data, const TrainConfig& cfg, const ModelConfig& model_cfg,
                  std::ostream* log = nullptr);

/// Normalized-to-raw MOS mapping stored by train().
struct MosScale {
    double min = 0.0;
    double max = 1.0;

    double normalize(double mos) const;
    double denormalize(double score) const;
    static MosScale from_metadata(const nlohmann::json& metadata);
};

}  // namespace msfpt
