#include <gtest/gtest.h>

#include <filesystem>

#include "grad_check.hpp"
#include "msfpt/checkpoint.hpp"
#include "msfpt/model.hpp"

using namespace msfpt;
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

SequenceEmbedding<double> random_sequence(const ModelConfig& c, std::uint64_t seed) {
    CounterRng rng(seed, "seq");
    return {random_tensor({c.sequence_length(), c.d_model}, rng)};
}

const std::vector<double> kScales{1.0, 2.0, 3.0, 0.5};

}  // namespace

TEST(Embed, DeskAndPaperShapes) {
    const ModelConfig desk = ModelConfig::desk();
    const auto p = init_params<float>(desk, 1);
    CounterRng rng(1, "vol");
    const auto seq = embed_sequence(random_tensor({192, 7, 7}, rng).cast<float>(), embedding_view(p, "scale1", "enc_embed"));
    EXPECT_EQ(seq.tokens.shape(), (Shape{50, 64}));

    const ModelConfig paper = ModelConfig::paper_shape();
    EXPECT_EQ(paper.sequence_length(), 442u);
    const EmbeddingParams<float> emb{TensorF::full({128, 1920, 1, 1}, 0.001f), TensorF::zeros({1, 128}),
                                     TensorF::zeros({442, 128})};
    EXPECT_EQ(embed_sequence(TensorF::ones({1920, 21, 21}), emb).tokens.shape(), (Shape{442, 128}));
}

TEST(Embed, ZeroInputGivesPositions) {
    const ModelConfig c = tiny();
    const auto p = init_params<double>(c, 2);
    EmbeddingParams<double> emb = embedding_view(p, "scale2", "dec_embed");
    emb.quality = TensorD::zeros({1, c.d_model});
    const auto seq = embed_sequence(TensorD::zeros({c.channels(), 3, 3}), emb);
    EXPECT_TRUE(seq.tokens.same_bytes(emb.position));
}

TEST(Embed, RowMajorTokensMatchDirectSum) {
    const ModelConfig c = tiny();
    const auto p = init_params<double>(c, 3);
    const auto emb = embedding_view(p, "scale1", "enc_embed");
    CounterRng rng(3, "vol");
    const TensorD vol = random_tensor({c.channels(), 3, 3}, rng);
    const TensorD tokens = embed_sequence(vol, emb).tokens;
    for (std::size_t y = 0; y < 3; ++y) {
        for (std::size_t x = 0; x < 3; ++x) {
            for (std::size_t d = 0; d < c.d_model; ++d) {
                double s = emb.position.at({1 + y * 3 + x, d});
                for (std::size_t ch = 0; ch < c.channels(); ++ch) s += emb.reduce.at({d, ch, 0, 0}) * vol.at({ch, y, x});
                EXPECT_NEAR(tokens.at({1 + y * 3 + x, d}), s, 1e-12);
            }
        }
    }
    for (std::size_t d = 0; d < c.d_model; ++d) {
        EXPECT_EQ(tokens.at({0, d}), emb.quality.at({0, d}) + emb.position.at({0, d}));
    }
}

TEST(Embed, WrongGridRejected) {
    const ModelConfig c = tiny();
    const auto p = init_params<double>(c, 2);
    EXPECT_THROW(embed_sequence(TensorD::zeros({c.channels(), 4, 3}), embedding_view(p, "scale1", "enc_embed")),
                 DimensionError);
    EXPECT_THROW(embed_sequence(TensorD::zeros({c.channels() + 1, 3, 3}), embedding_view(p, "scale1", "enc_embed")),
                 DimensionError);
}

TEST(Encoder, ShapePreservedAndZeroLayersIdentity) {
    ModelConfig c = tiny();
    c.layers = 2;
    const auto p = init_params<double>(c, 4);
    const auto seq = random_sequence(c, 1);
    EXPECT_EQ(encode(seq, c, p, "scale1").shape(), seq.tokens.shape());
    EXPECT_EQ(decode(seq, encode(seq, c, p, "scale1"), c, p, "scale1").shape(), seq.tokens.shape());
    c.layers = 0;
    EXPECT_TRUE(encode(seq, c, p, "scale1").same_bytes(seq.tokens));
    const auto other = random_sequence(c, 2);
    EXPECT_TRUE(decode(seq, other.tokens, c, p, "scale1").same_bytes(seq.tokens));
}

TEST(Encoder, PermutationEquivariance) {
    const ModelConfig c = tiny();
    const auto p = init_params<double>(c, 5);
    const auto seq = random_sequence(c, 3);
    const std::size_t n = c.sequence_length();
    // Reverse the grid rows 1..N, keep the quality token in place.
    std::vector<std::size_t> perm(n);
    perm[0] = 0;
    for (std::size_t i = 1; i < n; ++i) perm[i] = n - i;
    std::vector<TensorD> rows;
    for (std::size_t i : perm) rows.push_back(slice_rows(seq.tokens, i, 1));
    const SequenceEmbedding<double> permuted{concat_rows(rows)};
    const TensorD a = encode(seq, c, p, "scale3");
    const TensorD b = encode(permuted, c, p, "scale3");
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t d = 0; d < c.d_model; ++d) EXPECT_NEAR(b.at({i, d}), a.at({perm[i], d}), 1e-12);
    }
}

TEST(Decoder, GradientReachesBothInputs) {
    const ModelConfig c = tiny();
    const auto p = init_params<double>(c, 6);
    TensorD ref = random_sequence(c, 4).tokens.detach();
    TensorD enc = random_sequence(c, 5).tokens.detach();
    ref.set_requires_grad(true);
    enc.set_requires_grad(true);
    CounterRng rng(1, "w");
    const TensorD w = random_tensor(ref.shape(), rng);
    backward(sum(mul(decode({ref}, enc, c, p, "scale1"), w)));
    auto nonzero = [](std::span<const double> g) {
        return std::any_of(g.begin(), g.end(), [](double v) { return v != 0.0; });
    };
    EXPECT_TRUE(nonzero(ref.grad()));
    EXPECT_TRUE(nonzero(enc.grad()));
}

TEST(Decoder, MismatchedEncoderOutput) {
    const ModelConfig c = tiny();
    const auto p = init_params<double>(c, 6);
    EXPECT_THROW(decode(random_sequence(c, 1), TensorD::zeros({3, c.d_model}), c, p, "scale1"), DimensionError);
}

TEST(Head, ClosedForms) {
    const std::size_t d = 5;
    CounterRng rng(7, "head");
    const TensorD dec = random_tensor({4, d}, rng);
    const LinearLayer<double> zero1{TensorD::zeros({3, d}), TensorD::zeros({3})};
    const LinearLayer<double> zero2{TensorD::zeros({1, 3}), TensorD::zeros({1})};
    EXPECT_EQ(head_score(dec, zero1, zero2).item(), 0.0);

    TensorD eye({d, d});
    for (std::size_t i = 0; i < d; ++i) eye.mutable_data()[i * d + i] = 1.0;
    const LinearLayer<double> fc1{eye, TensorD::zeros({d})};
    const LinearLayer<double> fc2{TensorD::ones({1, d}), TensorD::zeros({1})};
    double expected = 0.0;
    for (std::size_t j = 0; j < d; ++j) expected += std::max(0.0, dec.at({0, j}));
    EXPECT_NEAR(head_score(dec, fc1, fc2).item(), expected, 1e-15);
}

TEST(Head, OnlyRowZeroMatters) {
    const ModelConfig c = tiny();
    const auto p = init_params<double>(c, 8);
    const auto fc1 = linear_view(p, "scale1.head.fc1");
    const auto fc2 = linear_view(p, "scale1.head.fc2");
    const TensorD dec = random_sequence(c, 6).tokens;
    const TensorD other = random_sequence(c, 7).tokens;
    const TensorD mixed = concat_rows<double>({slice_rows(dec, 0, 1), slice_rows(other, 1, c.grid_tokens())});
    EXPECT_EQ(head_score(dec, fc1, fc2).item(), head_score(mixed, fc1, fc2).item());
}

TEST(ScoreScale, DeterministicAndGroupsDisjoint) {
    const ModelConfig c = tiny();
    const auto p = init_params<double>(c, 9);
    const TensorD ref = random_image(32, 32, 1), dist = random_image(32, 32, 2);
    const double a = score_scale(ref, dist, 2.0, c, p).item();
    EXPECT_EQ(a, score_scale(ref, dist, 2.0, c, p).item());
    EXPECT_TRUE(std::isfinite(score_scale(ref, ref, 1.0, c, p).item()));

    backward(score_scale(ref, dist, 2.0, c, p));
    for (const auto& [name, t] : p) {
        const bool own = name.starts_with("scale2.");
        if (!own) {
            EXPECT_FALSE(t.has_grad()) << name;
        }
    }
}

TEST(ScorePair, MeanOfScalesAndSubsets) {
    const ModelConfig c = tiny();
    const auto p = init_params<double>(c, 10);
    const TensorD ref = random_image(36, 36, 3), dist = random_image(36, 36, 4);
    const PairScore all = score_pair(ref, dist, c, p, ScaleSet::standard());
    ASSERT_EQ(all.per_scale.values.size(), 4u);
    const auto& v = all.per_scale.values;
    EXPECT_EQ(all.final, (v[0] + v[1] + v[2] + v[3]) / 4.0);
    for (double s : kScales) {
        const PairScore single = score_pair(ref, dist, c, p, ScaleSet({s}));
        EXPECT_EQ(single.final, all.per_scale.at(s));
        EXPECT_EQ(single.final, score_scale(ref, dist, s, c, p).item());
    }
    const PairScore threaded = score_pair(ref, dist, c, p, ScaleSet::standard(), 4);
    EXPECT_EQ(threaded.final, all.final);
    EXPECT_EQ(threaded.per_scale.values, all.per_scale.values);
    EXPECT_THROW(all.per_scale.at(4.0), ContractError);
}

TEST(ScorePair, AverageArithmetic) {
    EXPECT_EQ(average_scores({1, 2, 3, 4}), 2.5);
    EXPECT_EQ(average_scores({0.7, 0.7, 0.7, 0.7}), 0.7);
    EXPECT_THROW(average_scores({}), ContractError);
}

TEST(ScorePair, VolumesPathMatchesImages) {
    const ModelConfig c = tiny();
    const auto p = init_params<double>(c, 11);
    const TensorD ref = random_image(32, 32, 5), dist = random_image(32, 32, 6);
    std::vector<FeatureVolume<double>> fr, fd;
    for (double s : kScales) {
        fr.push_back(extract_features(rescale_image(ref, s), s, c, p));
        fd.push_back(extract_features(rescale_image(dist, s), s, c, p));
    }
    const PairScore a = score_pair_volumes(fr, fd, c, p);
    const PairScore b = score_pair(ref, dist, c, p, ScaleSet::standard());
    EXPECT_EQ(a.per_scale.values, b.per_scale.values);
    EXPECT_EQ(a.final, b.final);
}

TEST(PatchGrid, Layout) {
    using P = std::pair<std::size_t, std::size_t>;
    EXPECT_EQ(patch_grid(64, 80, 32, 1), (std::vector<P>{{16, 24}}));
    EXPECT_EQ(patch_grid(64, 80, 32, 4), (std::vector<P>{{0, 0}, {0, 48}, {32, 0}, {32, 48}}));
    const auto nine = patch_grid(100, 100, 32, 9);
    ASSERT_EQ(nine.size(), 9u);
    EXPECT_EQ(nine[4], (P{34, 34}));
    EXPECT_EQ(nine[8], (P{68, 68}));
    EXPECT_EQ(patch_grid(32, 32, 32, 5).size(), 5u);
    EXPECT_THROW(patch_grid(31, 40, 32, 1), InputTooSmallError);
    EXPECT_THROW(patch_grid(64, 64, 32, 0), ContractError);
}

TEST(Ensemble, Properties) {
    const ModelConfig c = tiny();
    const auto p = init_params<double>(c, 12);
    const TensorD ref = random_image(32, 32, 7), dist = random_image(32, 32, 8);
    const auto scales = ScaleSet::standard();
    EXPECT_EQ(ensemble_score(ref, dist, 1, c, p, scales), score_pair(ref, dist, c, p, scales).final);

    const TensorD flat_ref = TensorD::full({3, 48, 40}, 0.25), flat_dist = TensorD::full({3, 48, 40}, 0.5);
    const double single = score_pair(crop_image(flat_ref, 0, 0, 32, 32), crop_image(flat_dist, 0, 0, 32, 32), c, p,
                                     scales).final;
    EXPECT_NEAR(ensemble_score(flat_ref, flat_dist, 4, c, p, scales), single, 1e-12);

    const TensorD big_ref = random_image(48, 44, 9), big_dist = random_image(48, 44, 10);
    double lo = 1e300, hi = -1e300;
    for (const auto& [y, x] : patch_grid(48, 44, 32, 4)) {
        const double s = score_pair(crop_image(big_ref, y, x, 32, 32), crop_image(big_dist, y, x, 32, 32), c, p,
                                    scales).final;
        lo = std::min(lo, s);
        hi = std::max(hi, s);
    }
    const double e = ensemble_score(big_ref, big_dist, 4, c, p, scales);
    EXPECT_GE(e, lo);
    EXPECT_LE(e, hi);
}

TEST(Ensemble, PerScaleMeans) {
    const ModelConfig c = tiny();
    const auto p = init_params<double>(c, 14);
    const TensorD ref = random_image(40, 48, 15), dist = random_image(40, 48, 16);
    const auto scales = ScaleSet::parse("1,0.5");
    std::vector<double> s1, s05;
    for (const auto& [y, x] : patch_grid(40, 48, 32, 3)) {
        const PairScore s = score_pair(crop_image(ref, y, x, 32, 32), crop_image(dist, y, x, 32, 32), c, p, scales);
        s1.push_back(s.per_scale.at(1.0));
        s05.push_back(s.per_scale.at(0.5));
    }
    const PairScore e = ensemble_pair(ref, dist, 3, c, p, scales);
    EXPECT_EQ(e.per_scale.scales, scales.values());
    EXPECT_EQ(e.per_scale.at(1.0), average_scores(s1));
    EXPECT_EQ(e.per_scale.at(0.5), average_scores(s05));
    EXPECT_EQ(e.final, ensemble_score(ref, dist, 3, c, p, scales));
}

TEST(Model, CheckpointPreservesOutputs) {
    const ModelConfig c = tiny();
    const auto p = init_params<float>(c, 13);
    const TensorF ref = random_image(32, 32, 11).cast<float>(), dist = random_image(32, 32, 12).cast<float>();
    const PairScore before = score_pair(ref, dist, c, p, ScaleSet::standard());
    const auto path = std::filesystem::temp_directory_path() / "msfpt_test_model.ckpt";
    save_checkpoint(path, Checkpoint{c, p, std::nullopt, {}});
    const Checkpoint loaded = load_checkpoint(path);
    std::filesystem::remove(path);
    const PairScore after = score_pair(ref, dist, loaded.config, loaded.params, ScaleSet::standard());
    EXPECT_EQ(before.per_scale.values, after.per_scale.values);
    EXPECT_EQ(before.final, after.final);
}

TEST(Model, NoDeadParameters) {
    const ModelConfig c = tiny();
    const auto p = init_params<double>(c, 14);
    for (std::uint64_t i = 0; i < 4; ++i) {
        const TensorD ref = random_image(32, 32, 100 + i), dist = random_image(32, 32, 200 + i);
        for (double s : kScales) backward(score_scale(ref, dist, s, c, p));
    }
    for (const auto& [name, t] : p) {
        if (name.starts_with(kBackbonePrefix)) {
            EXPECT_FALSE(t.has_grad()) << name;
            continue;
        }
        ASSERT_TRUE(t.has_grad()) << name;
        // Individual entries may be idle (dead ReLU units, channels the
        // random backbone never activates); whole tensors may not.
        const auto g = t.grad();
        EXPECT_TRUE(std::any_of(g.begin(), g.end(), [](double v) { return v != 0.0; })) << name;
    }
}
