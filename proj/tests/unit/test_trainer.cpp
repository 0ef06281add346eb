#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "grad_check.hpp"
#include "msfpt/model.hpp"
#include "msfpt/trainer.hpp"

using namespace msfpt;
using test_support::check_gradients;
using test_support::random_away_from_zero;
using test_support::random_tensor;

namespace {

ModelConfig tiny() {
    ModelConfig c = ModelConfig::desk();
    c.d_model = 8;
    c.heads = 2;
    c.d_mlp = 16;
    c.head_hidden = 8;
    c.layers = 1;
    c.block_channels = 4;
    c.target_h = c.target_w = 3;
    c.patch_size = 32;
    return c;
}

TensorD random_image(std::size_t h, std::size_t w, std::uint64_t seed) {
    CounterRng rng(seed, "image");
    return random_tensor({3, h, w}, rng, 0.0, 1.0);
}

std::vector<TrainSample> tiny_set(std::size_t n, std::size_t side = 40) {
    std::vector<TrainSample> out;
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back({random_image(side, side, 10 + i).cast<float>(), random_image(side, side, 50 + i).cast<float>(),
                       1.0 + static_cast<double>(i)});
    }
    return out;
}

TrainConfig quick_config(std::size_t steps) {
    TrainConfig c;
    c.total_steps = steps;
    c.batch_size = 3;
    c.patch_size = 32;
    c.lr0 = 1e-3;
    c.seed = 7;
    return c;
}

}  // namespace

TEST(L1Loss, Examples) {
    const TensorD a({3}, {0.5, -1, 2});
    EXPECT_EQ(l1_loss(a, a).item(), 0.0);
    EXPECT_EQ(l1_loss(TensorD({2}, {0, 2}), TensorD({2}, {1, 1})).item(), 1.0);
    EXPECT_THROW(l1_loss(TensorD({2}, {0, 2}), TensorD({3}, {1, 1, 1})), DimensionError);
}

TEST(L1Loss, GradientIsSignOverN) {
    CounterRng rng(1, "l1");
    const TensorD pred = random_tensor({5}, rng);
    TensorD leaf = pred.detach();
    leaf.set_requires_grad(true);
    const TensorD target = random_tensor({5}, rng);
    backward(l1_loss(leaf, target));
    for (std::size_t i = 0; i < 5; ++i) {
        const double d = pred.data()[i] - target.data()[i];
        EXPECT_EQ(leaf.grad()[i], (d > 0 ? 1.0 : -1.0) / 5.0);
    }
}

TEST(L1Loss, GradientMatchesFiniteDifferences) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        CounterRng rng(seed, "l1.fd");
        const std::size_t n = 1 + rng.below(8);
        const TensorD target = random_tensor({n}, rng);
        // pred = target + offset with |offset| >= 0.05 keeps clear of the kink.
        const TensorD offset = random_away_from_zero({n}, rng);
        const TensorD pred = add(target, offset);
        const auto op = [&](const std::vector<TensorD>& in) { return l1_loss(in[0], target); };
        EXPECT_LT(check_gradients(op, {pred}, seed), 1e-4) << seed;
    }
}

TEST(CosineLr, ClosedForms) {
    const double lr0 = 2e-4;
    EXPECT_EQ(cosine_lr(0, 1000, lr0), lr0);
    EXPECT_EQ(cosine_lr(500, 1000, lr0), lr0 / 2);
    EXPECT_EQ(cosine_lr(1000, 1000, lr0), 0.0);
    EXPECT_NEAR(cosine_lr(250, 1000, lr0), lr0 * (1 + std::cos(std::numbers::pi / 4)) / 2, 1e-20);
    double prev = lr0;
    for (std::size_t s = 0; s <= 777; ++s) {
        const double v = cosine_lr(s, 777, lr0);
        EXPECT_LE(v, prev);
        prev = v;
    }
    EXPECT_THROW(cosine_lr(0, 0, lr0), ConfigError);
    EXPECT_THROW(cosine_lr(11, 10, lr0), ContractError);
}

TEST(Adam, FirstStepMagnitudeIsLr) {
    TrainConfig cfg;
    cfg.weight_decay = 0;
    for (double lr : {2e-4, 1e-3, 0.05}) {
        ParamStore<double> p;
        p.add("w", TensorD::scalar(0.7).set_requires_grad(true));
        p.at("w").mutable_grad()[0] = 1.0;
        AdamState<double> st;
        adam_step(p, st, lr, cfg);
        EXPECT_NEAR(0.7 - p.at("w").item(), lr, 1e-9);
        EXPECT_EQ(st.step, 1u);
    }
}

TEST(Adam, ZeroGradientNoDecayIsNoop) {
    TrainConfig cfg;
    cfg.weight_decay = 0;
    ParamStore<double> p;
    CounterRng rng(1, "adam");
    p.add("a", random_tensor({3, 4}, rng).set_requires_grad(true));
    const auto before = p.clone();
    p.at("a").mutable_grad();
    AdamState<double> st;
    for (int i = 0; i < 3; ++i) adam_step(p, st, 1e-3, cfg);
    EXPECT_TRUE(p.same_bytes(before));
}

TEST(Adam, MatchesReferenceRecurrence) {
    TrainConfig cfg;
    cfg.weight_decay = 0.01;
    ParamStore<double> p;
    p.add("w", TensorD({2}, {0.5, -0.25}).set_requires_grad(true));
    AdamState<double> st;
    double w[2] = {0.5, -0.25}, m[2] = {0, 0}, v[2] = {0, 0};
    CounterRng rng(3, "adam.ref");
    for (int t = 1; t <= 5; ++t) {
        const double lr = 0.01 * t;
        const double g[2] = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
        p.at("w").zero_grad();
        auto pg = p.at("w").mutable_grad();
        pg[0] = g[0];
        pg[1] = g[1];
        adam_step(p, st, lr, cfg);
        for (int i = 0; i < 2; ++i) {
            w[i] *= 1 - lr * cfg.weight_decay;
            m[i] = 0.9 * m[i] + 0.1 * g[i];
            v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
            const double mh = m[i] / (1 - std::pow(0.9, t));
            const double vh = v[i] / (1 - std::pow(0.999, t));
            w[i] -= lr * mh / (std::sqrt(vh) + 1e-8);
            EXPECT_NEAR(p.at("w").data()[i], w[i], 1e-14);
        }
    }
}

TEST(Adam, FrozenAndOtherGroupsUntouched) {
    const ModelConfig c = tiny();
    auto p = init_params<float>(c, 3);
    const auto before = p.clone();
    const TensorF ref = random_image(32, 32, 1).cast<float>(), dist = random_image(32, 32, 2).cast<float>();
    backward(score_scale(ref, dist, 1.0, c, p));
    AdamState<float> st;
    adam_step(p, st, 1e-2, TrainConfig{}, "scale1.");
    std::size_t changed = 0;
    for (const auto& [name, t] : p) {
        const bool same = t.same_bytes(before.at(name));
        if (name.starts_with("scale1.")) {
            changed += !same;
        } else {
            EXPECT_TRUE(same) << name;
        }
    }
    EXPECT_GT(changed, 0u);
}

TEST(Augment, GeometricPrimitives) {
    const TensorD img = random_image(4, 6, 3);
    TensorD r = img;
    for (int i = 0; i < 4; ++i) r = rotate90(r, 1);
    EXPECT_TRUE(r.same_bytes(img));
    EXPECT_EQ(rotate90(img, 1).shape(), (Shape{3, 6, 4}));
    EXPECT_TRUE(rotate90(img, 2).same_bytes(flip_vertical(flip_horizontal(img))));
    EXPECT_TRUE(flip_vertical(flip_vertical(img)).same_bytes(img));
    // Counter-clockwise: the top-right pixel moves to the top-left.
    EXPECT_EQ(rotate90(img, 1).at({0, 0, 0}), img.at({0, 0, 5}));
}

TEST(Augment, DisabledIsCenterCrop) {
    const TensorD ref = random_image(40, 50, 4), dist = random_image(40, 50, 5);
    CounterRng rng(1, "aug");
    const auto [a, b] = augment(ref, dist, 32, rng, false);
    EXPECT_TRUE(a.same_bytes(crop_image(ref, 4, 9, 32, 32)));
    EXPECT_TRUE(b.same_bytes(crop_image(dist, 4, 9, 32, 32)));
    EXPECT_EQ(rng.counter(), 0u);
}

TEST(Augment, SharedTransform) {
    const TensorD ref = random_image(45, 41, 6);
    std::vector<double> inv;
    for (double v : ref.data()) inv.push_back(1.0 - v);
    const TensorD dist(ref.shape(), inv);
    CounterRng rng(2, "aug");
    for (int t = 0; t < 20; ++t) {
        const auto [a, b] = augment(ref, dist, 32, rng, true);
        ASSERT_EQ(a.shape(), (Shape{3, 32, 32}));
        for (std::size_t i = 0; i < a.numel(); ++i) ASSERT_EQ(b.data()[i], 1.0 - a.data()[i]);
        const auto [c, d] = augment(ref, ref, 32, rng, true);
        EXPECT_TRUE(c.same_bytes(d));
    }
    EXPECT_THROW(augment(random_image(20, 40, 1), random_image(20, 40, 1), 32, rng, true), InputTooSmallError);
}

TEST(TrainConfigJson, RoundTripAndErrors) {
    TrainConfig c = quick_config(12);
    c.augment = false;
    const TrainConfig back = TrainConfig::from_json(c.to_json());
    EXPECT_EQ(back.to_json(), c.to_json());
    EXPECT_THROW(TrainConfig::from_json({{"lr0", 1e-3}}), ConfigError);
    EXPECT_THROW(TrainConfig::from_json({{"total_steps", 5}, {"bogus", 1}}), ConfigError);
    EXPECT_THROW(TrainConfig::from_json({{"total_steps", 5}, {"batch_size", 0}}), ConfigError);
    EXPECT_THROW(TrainConfig::from_json({{"total_steps", 5}, {"lr0", "fast"}}), ConfigError);
}

TEST(MosScaleTest, Mapping) {
    const MosScale s{2.0, 6.0};
    EXPECT_EQ(s.normalize(4.0), 0.5);
    EXPECT_EQ(s.denormalize(0.25), 3.0);
    const MosScale flat{3.0, 3.0};
    EXPECT_EQ(flat.normalize(3.0), 0.0);
    EXPECT_EQ(MosScale::from_metadata({{"mos_min", 1.0}, {"mos_max", 5.0}}).max, 5.0);
}

TEST(Train, ZeroStepsKeepsInitialization) {
    const auto r = train(tiny_set(2), quick_config(0), tiny());
    EXPECT_TRUE(r.history.empty());
    ModelConfig c = tiny();
    EXPECT_TRUE(r.checkpoint.params.same_bytes(init_params<float>(c, 7)));
    EXPECT_FALSE(r.checkpoint.optimizer.has_value());
    EXPECT_EQ(r.checkpoint.metadata.at("mos_min"), 1.0);
    EXPECT_EQ(r.checkpoint.metadata.at("mos_max"), 2.0);
}

TEST(Train, DeterministicAcrossRunsAndThreads) {
    const auto data = tiny_set(3);
    for (bool aug : {false, true}) {
        TrainConfig cfg = quick_config(4);
        cfg.augment = aug;
        std::ostringstream log_a, log_b;
        const auto a = train(data, cfg, tiny(), &log_a);
        cfg.threads = 4;
        const auto b = train(data, cfg, tiny(), &log_b);
        ASSERT_EQ(a.history.size(), 4u);
        for (std::size_t i = 0; i < 4; ++i) {
            EXPECT_EQ(a.history[i].loss, b.history[i].loss);
            EXPECT_EQ(a.history[i].lr, b.history[i].lr);
        }
        EXPECT_EQ(log_a.str(), log_b.str());
        // Thread count is part of the echoed train config, so compare the
        // parameter and optimizer records rather than whole files.
        Checkpoint ca = a.checkpoint, cb = b.checkpoint;
        ca.metadata = cb.metadata = {};
        EXPECT_EQ(encode_checkpoint(ca), encode_checkpoint(cb));
    }
}

TEST(Train, LogFormatAndBackboneFrozen) {
    std::ostringstream log;
    TrainConfig cfg = quick_config(5);
    cfg.log_every = 2;
    const auto r = train(tiny_set(2), cfg, tiny(), &log);
    std::istringstream lines(log.str());
    std::string line;
    std::vector<std::string> rows;
    while (std::getline(lines, line)) rows.push_back(line);
    ASSERT_EQ(rows.size(), 4u);
    EXPECT_EQ(rows[0], "step,lr,loss");
    EXPECT_TRUE(rows[1].starts_with("2,"));
    EXPECT_TRUE(rows[3].starts_with("5,"));
    EXPECT_EQ(r.history[0].lr, cfg.lr0);

    const auto init = init_params<float>(r.checkpoint.config, cfg.seed);
    for (const auto& name : init.names(kBackbonePrefix)) {
        EXPECT_TRUE(init.at(name).same_bytes(r.checkpoint.params.at(name))) << name;
    }
    EXPECT_FALSE(init.same_bytes(r.checkpoint.params));
    EXPECT_EQ(r.checkpoint.optimizer->step, 5u);
}

TEST(Train, LossDecreases) {
    TrainConfig cfg = quick_config(60);
    cfg.augment = false;
    cfg.batch_size = 4;
    cfg.lr0 = 3e-3;
    const auto r = train(tiny_set(4), cfg, tiny());
    double first = 0, last = 0;
    for (std::size_t i = 0; i < 5; ++i) {
        first += r.history[i].loss;
        last += r.history[r.history.size() - 1 - i].loss;
    }
    EXPECT_LT(last, 0.5 * first);
}

TEST(Train, DivergenceReportsStep) {
    TrainConfig cfg = quick_config(20);
    cfg.lr0 = 1e35;
    cfg.augment = false;
    try {
        train(tiny_set(2), cfg, tiny());
        FAIL() << "expected a numeric error";
    } catch (const NumericError& e) {
        EXPECT_TRUE(std::string(e.what()).starts_with("step ")) << e.what();
    }
}

TEST(Train, RejectsBadInputs) {
    EXPECT_THROW(train({}, quick_config(1), tiny()), ContractError);
    auto data = tiny_set(1);
    data[0].mos = NAN;
    EXPECT_THROW(train(data, quick_config(1), tiny()), ContractError);
    EXPECT_THROW(train(tiny_set(1, 30), quick_config(1), tiny()), InputTooSmallError);
}
