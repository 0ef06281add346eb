#include "msfpt/trainer.hpp"
#include "msfpt/parallel.hpp"

#include <cmath>
#include <iomanip>
#include <numbers>
#include <numeric>

#include "msfpt/backbone.hpp"
#include "msfpt/model.hpp"

namespace msfpt {

void TrainConfig::validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("train config: " + m); };
    if (!(lr0 > 0) || !std::isfinite(lr0)) fail("lr0 must be positive");
    if (!(weight_decay >= 0)) fail("weight_decay must be non-negative");
    if (!(beta1 >= 0 && beta1 < 1)) fail("beta1 must lie in [0, 1)");
    if (!(beta2 >= 0 && beta2 < 1)) fail("beta2 must lie in [0, 1)");
    if (!(adam_eps > 0)) fail("adam_eps must be positive");
    if (batch_size == 0) fail("batch_size must be at least 1");
    if (patch_size < kMinImageSide) fail("patch_size must be at least " + std::to_string(kMinImageSide));
    if (log_every == 0) fail("log_every must be at least 1");
}

nlohmann::json TrainConfig::to_json() const {
    return {{"lr0", lr0},
            {"weight_decay", weight_decay},
            {"beta1", beta1},
            {"beta2", beta2},
            {"adam_eps", adam_eps},
            {"batch_size", batch_size},
            {"total_steps", total_steps},
            {"patch_size", patch_size},
            {"seed", seed},
            {"augment", augment},
            {"log_every", log_every},
            {"threads", threads}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("train config must be a JSON object");
    if (!j.contains("total_steps")) throw ConfigError("train config: total_steps is required");
    TrainConfig c;
    for (const auto& [key, value] : j.items()) {
        try {
            if (key == "lr0") c.lr0 = value.get<double>();
            else if (key == "weight_decay") c.weight_decay = value.get<double>();
            else if (key == "beta1") c.beta1 = value.get<double>();
            else if (key == "beta2") c.beta2 = value.get<double>();
            else if (key == "adam_eps") c.adam_eps = value.get<double>();
            else if (key == "batch_size") c.batch_size = value.get<std::size_t>();
            else if (key == "total_steps") c.total_steps = value.get<std::size_t>();
            else if (key == "patch_size") c.patch_size = value.get<std::size_t>();
            else if (key == "seed") c.seed = value.get<std::uint64_t>();
            else if (key == "augment") c.augment = value.get<bool>();
            else if (key == "log_every") c.log_every = value.get<std::size_t>();
            else if (key == "threads") c.threads = value.get<std::size_t>();
            else throw ConfigError("train config: unknown field '" + key + "'");
        } catch (const nlohmann::json::exception&) {
            throw ConfigError("train config: field '" + key + "' has the wrong type");
        }
    }
    c.validate();
    return c;
}

template <typename T>
Tensor<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target) {
    if (pred.rank() != 1 || pred.shape() != target.shape()) {
        throw DimensionError("l1_loss needs equal 1-D shapes, got " + shape_to_string(pred.shape()) + " and " +
                             shape_to_string(target.shape()));
    }
    return mean(abs(sub(pred, target)));
}

double cosine_lr(std::size_t step, std::size_t total_steps, double lr0) {
    if (total_steps == 0) throw ConfigError("cosine schedule needs total_steps > 0");
    if (step > total_steps) throw ContractError("step " + std::to_string(step) + " is past the schedule end");
    if (step == total_steps) return 0.0;
    const double phase = std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps);
    return lr0 * (1.0 + std::cos(phase)) / 2.0;
}

template <typename T>
void adam_step(ParamStore<T>& params, AdamState<T>& state, double lr, const TrainConfig& cfg,
               std::string_view prefix) {
    if (!(lr >= 0) || !std::isfinite(lr)) throw ContractError("learning rate must be finite and non-negative");
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double correct1 = 1.0 - std::pow(cfg.beta1, t);
    const double correct2 = 1.0 - std::pow(cfg.beta2, t);
    for (auto& [name, p] : params) {
        if (!name.starts_with(prefix) || !p.requires_grad() || !p.has_grad()) continue;
        const auto g = p.grad();
        auto w = p.mutable_data();
        auto& m = state.first_moment[name];
        auto& v = state.second_moment[name];
        if (m.empty()) {
            m.assign(w.size(), T(0));
            v.assign(w.size(), T(0));
        }
        if (m.size() != w.size() || v.size() != w.size()) {
            throw DimensionError("optimizer moments for '" + name + "' do not match the parameter");
        }
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double gi = static_cast<double>(g[i]);
            const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * gi;
            const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * gi * gi;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            double wi = static_cast<double>(w[i]);
            wi -= lr * cfg.weight_decay * wi;
            wi -= lr * (mi / correct1) / (std::sqrt(vi / correct2) + cfg.adam_eps);
            w[i] = static_cast<T>(wi);
        }
    }
}

namespace {

template <typename T, typename Index>
Tensor<T> remap(const Tensor<T>& img, std::size_t out_h, std::size_t out_w, const Index& source) {
    if (img.rank() != 3) throw DimensionError("expected [C x H x W], got " + shape_to_string(img.shape()));
    const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
    const auto src = img.data();
    std::vector<T> out(c * out_h * out_w);
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t y = 0; y < out_h; ++y) {
            for (std::size_t x = 0; x < out_w; ++x) {
                const auto [sy, sx] = source(y, x, h, w);
                out[(ch * out_h + y) * out_w + x] = src[(ch * h + sy) * w + sx];
            }
        }
    }
    return Tensor<T>({c, out_h, out_w}, std::move(out));
}

}  // namespace

template <typename T>
Tensor<T> flip_vertical(const Tensor<T>& img) {
    return remap(img, img.dim(1), img.dim(2), [](std::size_t y, std::size_t x, std::size_t h, std::size_t) {
        return std::pair{h - 1 - y, x};
    });
}

template <typename T>
Tensor<T> flip_horizontal(const Tensor<T>& img) {
    return remap(img, img.dim(1), img.dim(2), [](std::size_t y, std::size_t x, std::size_t, std::size_t w) {
        return std::pair{y, w - 1 - x};
    });
}

template <typename T>
Tensor<T> rotate90(const Tensor<T>& img, unsigned k) {
    k %= 4;
    if (k == 0) return img.detach();
    Tensor<T> out = img;
    for (unsigned i = 0; i < k; ++i) {
        // Counter-clockwise: out(y, x) = in(x, W - 1 - y), output is W x H.
        out = remap(out, out.dim(2), out.dim(1), [](std::size_t y, std::size_t x, std::size_t, std::size_t w) {
            return std::pair{x, w - 1 - y};
        });
    }
    return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> augment(const Tensor<T>& ref, const Tensor<T>& dist, std::size_t patch,
                                        CounterRng& rng, bool enabled) {
    if (ref.shape() != dist.shape()) throw DimensionError("augment: reference and distorted images differ in size");
    if (ref.rank() != 3) throw DimensionError("augment: expected [C x H x W]");
    const std::size_t h = ref.dim(1), w = ref.dim(2);
    if (h < patch || w < patch) {
        throw InputTooSmallError("image " + std::to_string(h) + "x" + std::to_string(w) + " is smaller than the " +
                                 std::to_string(patch) + " pixel patch");
    }
    if (!enabled) {
        const std::size_t y = (h - patch) / 2, x = (w - patch) / 2;
        return {crop_image(ref, y, x, patch, patch), crop_image(dist, y, x, patch, patch)};
    }
    const std::size_t y = rng.below(h - patch + 1);
    const std::size_t x = rng.below(w - patch + 1);
    const bool vflip = rng.below(2) == 1;
    const bool hflip = rng.below(2) == 1;
    const auto turns = static_cast<unsigned>(rng.below(4));
    auto transform = [&](const Tensor<T>& img) {
        Tensor<T> out = crop_image(img, y, x, patch, patch);
        if (vflip) out = flip_vertical(out);
        if (hflip) out = flip_horizontal(out);
        return rotate90(out, turns);
    };
    return {transform(ref), transform(dist)};
}

double MosScale::normalize(double mos) const { return max > min ? (mos - min) / (max - min) : 0.0; }

double MosScale::denormalize(double score) const { return max > min ? min + score * (max - min) : min; }

MosScale MosScale::from_metadata(const nlohmann::json& metadata) {
    MosScale s;
    if (metadata.contains("mos_min") && metadata.contains("mos_max")) {
        s.min = metadata.at("mos_min").get<double>();
        s.max = metadata.at("mos_max").get<double>();
    }
    return s;
}

namespace {

// Canonical reference and difference volumes for one (sample, scale).
struct ScaleInputs {
    TensorF ref;
    TensorF diff;
};

ScaleInputs prepare(const TensorF& ref, const TensorF& dist, double scale, const ModelConfig& mc,
                    const ParamStore<float>& params) {
    NoGradGuard ng;
    const auto fr = extract_features(rescale_image(ref, scale), scale, mc, params);
    const auto fd = extract_features(rescale_image(dist, scale), scale, mc, params);
    return {to_canonical(fr, mc.target_h, mc.target_w).data,
            to_canonical(diff_features(fr, fd), mc.target_h, mc.target_w).data};
}

// Epoch-wise shuffled index stream.
class Sampler {
public:
    Sampler(std::size_t n, std::uint64_t seed) : rng_(seed, "train.sampler"), order_(n), pos_(n) {}

    std::size_t next() {
        if (pos_ == order_.size()) {
            std::iota(order_.begin(), order_.end(), 0);
            for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[rng_.below(i)]);
            pos_ = 0;
        }
        return order_[pos_++];
    }

private:
    CounterRng rng_;
    std::vector<std::size_t> order_;
    std::size_t pos_;
};

}  // namespace

TrainResult train(const std::vector<TrainSample>& data, const TrainConfig& cfg, const ModelConfig& model_cfg,
                  std::ostream* log) {
    cfg.validate();
    if (data.empty()) throw ContractError("training set is empty");
    ModelConfig mc = model_cfg;
    mc.patch_size = cfg.patch_size;
    mc.validate();
    const ScaleSet scales = mc.scale_set();

    MosScale mos{data.front().mos, data.front().mos};
    for (const auto& s : data) {
        if (!std::isfinite(s.mos)) throw ContractError("training MOS values must be finite");
        if (s.ref.shape() != s.dist.shape()) throw DimensionError("training pair with mismatched image sizes");
        validate_image(s.ref);
        validate_image(s.dist);
        mos.min = std::min(mos.min, s.mos);
        mos.max = std::max(mos.max, s.mos);
    }

    ParamStore<float> params = init_params<float>(mc, cfg.seed);
    std::vector<AdamState<float>> optim(scales.size());
    std::vector<std::string> groups;
    for (double s : scales.values()) groups.push_back(scale_group(s) + ".");

    // Without augmentation every crop is the same center crop, so the
    // frozen backbone only has to run once per (sample, scale).
    std::vector<std::vector<ScaleInputs>> cache;
    if (!cfg.augment) {
        cache.resize(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) {
            CounterRng unused(0, 0);
            const auto [r, d] = augment(data[i].ref, data[i].dist, cfg.patch_size, unused, false);
            for (double s : scales.values()) cache[i].push_back(prepare(r, d, s, mc, params));
        }
    }

    Sampler sampler(data.size(), cfg.seed);
    CounterRng aug_rng(cfg.seed, "train.augment");
    TrainResult result;
    if (log) *log << "step,lr,loss\n";

    for (std::size_t step = 0; step < cfg.total_steps; ++step) {
        const double lr = cosine_lr(step, cfg.total_steps, cfg.lr0);
        std::vector<std::size_t> batch(cfg.batch_size);
        for (auto& b : batch) b = sampler.next();

        std::vector<std::vector<ScaleInputs>> inputs(batch.size());
        for (std::size_t k = 0; k < batch.size(); ++k) {
            const std::size_t i = batch[k];
            if (!cfg.augment) {
                inputs[k] = cache[i];
                continue;
            }
            const auto [r, d] = augment(data[i].ref, data[i].dist, cfg.patch_size, aug_rng, true);
            for (double s : scales.values()) inputs[k].push_back(prepare(r, d, s, mc, params));
        }
        std::vector<float> targets(batch.size());
        for (std::size_t k = 0; k < batch.size(); ++k) targets[k] = static_cast<float>(mos.normalize(data[batch[k]].mos));
        const TensorF target({batch.size()}, targets);

        std::vector<double> group_loss(scales.size());
        try {
            parallel_for(scales.size(), cfg.threads, [&](std::size_t g) {
                for (const auto& name : params.names(groups[g])) params.at(name).zero_grad();
                std::vector<TensorF> scores;
                for (std::size_t k = 0; k < batch.size(); ++k) {
                    scores.push_back(score_canonical(inputs[k][g].ref, inputs[k][g].diff, scales[g], mc, params));
                }
                const TensorF loss = l1_loss(concat_rows(scores), target);
                backward(loss);
                adam_step(params, optim[g], lr, cfg, groups[g]);
                group_loss[g] = static_cast<double>(loss.item());
            });
        } catch (const NumericError& e) {
            throw NumericError("step " + std::to_string(step + 1) + ": " + e.what());
        }
        double total = 0.0;
        for (double l : group_loss) total += l;
        if (!std::isfinite(total)) throw NumericError("step " + std::to_string(step + 1) + ": loss is not finite");
        result.history.push_back({step + 1, lr, total});
        if (log && ((step + 1) % cfg.log_every == 0 || step + 1 == cfg.total_steps)) {
            *log << step + 1 << ',' << std::setprecision(9) << lr << ',' << total << '\n';
        }
    }

    params.zero_grad();
    result.checkpoint.config = mc;
    result.checkpoint.params = std::move(params);
    // threads is left out so checkpoints do not depend on it.
    nlohmann::json train_json = cfg.to_json();
    train_json.erase("threads");
    result.checkpoint.metadata = {{"mos_min", mos.min},
                                  {"mos_max", mos.max},
                                  {"train", train_json},
                                  {"samples", data.size()}};
    if (cfg.total_steps > 0) {
        OptimizerSnapshot snap;
        snap.step = optim.front().step;
        for (const auto& st : optim) {
            for (const auto& [name, m] : st.first_moment) {
                const Shape& shape = result.checkpoint.params.at(name).shape();
                snap.first_moment.emplace(name, TensorF(shape, m));
                snap.second_moment.emplace(name, TensorF(shape, st.second_moment.at(name)));
            }
        }
        result.checkpoint.optimizer = std::move(snap);
    }
    return result;
}

#define MSFPT_INSTANTIATE(T)                                                                                 \
    template Tensor<T> l1_loss(const Tensor<T>&, const Tensor<T>&);                                          \
    template void adam_step(ParamStore<T>&, AdamState<T>&, double, const TrainConfig&, std::string_view);    \
    template Tensor<T> flip_vertical(const Tensor<T>&);                                                      \
    template Tensor<T> flip_horizontal(const Tensor<T>&);                                                    \
    template Tensor<T> rotate90(const Tensor<T>&, unsigned);                                                 \
    template std::pair<Tensor<T>, Tensor<T>> augment(const Tensor<T>&, const Tensor<T>&, std::size_t,        \
                                                     CounterRng&, bool);

MSFPT_INSTANTIATE(float)
MSFPT_INSTANTIATE(double)

}  // namespace msfpt
