#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "grad_check.hpp"
#include "msfpt/tensor.hpp"

using namespace msfpt;
using msfpt::test_support::check_gradients;
using msfpt::test_support::random_away_from_zero;
using msfpt::test_support::random_tensor;

namespace {

constexpr int kSeeds = 20;
constexpr double kGradTol = 1e-4;

TensorD mat(std::size_t r, std::size_t c, std::vector<double> v) { return TensorD({r, c}, std::move(v)); }

std::size_t pick(CounterRng& rng, std::size_t lo, std::size_t hi) {
    return lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
}

}  // namespace

TEST(Tensor, ConstructionValidatesShape) {
    EXPECT_THROW(TensorD({2, 2}, {1, 2, 3}), DimensionError);
    EXPECT_THROW(TensorD(Shape{0, 3}), DimensionError);
    EXPECT_THROW(TensorD(Shape{}), DimensionError);
    TensorD t({2, 3});
    EXPECT_EQ(t.numel(), 6u);
    EXPECT_TRUE(t.is_leaf());
}

TEST(Matmul, IdentityIsNeutral) {
    CounterRng rng(1, "matmul.identity");
    const TensorD x = random_tensor({3, 3}, rng);
    const TensorD eye = mat(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    EXPECT_TRUE(matmul(eye, x).same_bytes(x));
}

TEST(Matmul, TwoByTwoProduct) {
    const TensorD c = matmul(mat(2, 2, {1, 2, 3, 4}), mat(2, 2, {5, 6, 7, 8}));
    EXPECT_EQ(std::vector<double>(c.data().begin(), c.data().end()),
              (std::vector<double>{19, 22, 43, 50}));
}

TEST(Matmul, GradientOfSumIsOnesTimesBTransposed) {
    CounterRng rng(2, "matmul.sum_grad");
    TensorD a = random_tensor({3, 4}, rng).set_requires_grad(true);
    const TensorD b = random_tensor({4, 5}, rng);
    backward(sum(matmul(a, b)));
    // (ones[3x5] . B^T)[i][p] = sum_j B[p][j]
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t p = 0; p < 4; ++p) {
            double row = 0;
            for (std::size_t j = 0; j < 5; ++j) row += b.at({p, j});
            EXPECT_NEAR(a.grad()[i * 4 + p], row, 1e-12);
        }
    }
    const auto fd = finite_diff_grad<double>([&](const TensorD& x) { return sum(matmul(x, b)).item(); }, a, 1e-4);
    EXPECT_LT(test_support::max_rel_error(a.grad(), fd.data()), 1e-4);
}

TEST(Matmul, ShapeMismatchThrows) {
    EXPECT_THROW(matmul(TensorD({2, 3}), TensorD({2, 3})), DimensionError);
    EXPECT_THROW(matmul(TensorD({6}), TensorD({6, 1})), DimensionError);
    EXPECT_THROW(matmul_nt(TensorD({2, 3}), TensorD({3, 2})), DimensionError);
}

TEST(Matmul, GradientOracleRandomShapes) {
    for (int s = 0; s < kSeeds; ++s) {
        CounterRng rng(s, "matmul.oracle");
        const auto m = pick(rng, 1, 6), k = pick(rng, 1, 6), n = pick(rng, 1, 6);
        const std::vector<TensorD> in{random_tensor({m, k}, rng), random_tensor({k, n}, rng)};
        EXPECT_LT(check_gradients([](const auto& x) { return matmul(x[0], x[1]); }, in, s), kGradTol);
        const std::vector<TensorD> in_nt{random_tensor({m, k}, rng), random_tensor({n, k}, rng)};
        EXPECT_LT(check_gradients([](const auto& x) { return matmul_nt(x[0], x[1]); }, in_nt, s), kGradTol);
        EXPECT_LT(check_gradients([](const auto& x) { return transpose(x[0]); }, {in[0]}, s), kGradTol);
    }
}

TEST(Conv2d, UnitKernelIsIdentity) {
    CounterRng rng(3, "conv.identity");
    const TensorD x = random_tensor({1, 5, 4}, rng);
    const TensorD w = TensorD::ones({1, 1, 1, 1});
    EXPECT_TRUE(conv2d(x, w, 1, 0).same_bytes(x));
}

TEST(Conv2d, AllOnesSum) {
    const TensorD y = conv2d(TensorD::ones({1, 3, 3}), TensorD::ones({1, 1, 3, 3}), 1, 0);
    EXPECT_EQ(y.shape(), (Shape{1, 1, 1}));
    EXPECT_EQ(y.item(), 9.0);
}

TEST(Conv2d, OutputShapeAndGradients) {
    CounterRng rng(4, "conv.shape");
    // A 2x3x5x5 batch, convolved one image at a time.
    const TensorD w = random_tensor({4, 3, 3, 3}, rng);
    for (int image = 0; image < 2; ++image) {
        const TensorD x = random_tensor({3, 5, 5}, rng);
        EXPECT_EQ(conv2d(x, w, 1, 0).shape(), (Shape{4, 3, 3}));
        EXPECT_EQ(conv2d(x, w, 2, 1).shape(), (Shape{4, 3, 3}));
        EXPECT_LT(check_gradients([](const auto& v) { return conv2d(v[0], v[1], 1, 0); }, {x, w}, 4 + image),
                  kGradTol);
    }
}

TEST(Conv2d, KernelLargerThanPaddedInputThrows) {
    EXPECT_THROW(conv2d(TensorD({1, 2, 2}), TensorD({1, 1, 3, 3}), 1, 0), DimensionError);
    EXPECT_NO_THROW(conv2d(TensorD({1, 2, 2}), TensorD({1, 1, 3, 3}), 1, 1));
    EXPECT_THROW(conv2d(TensorD({2, 4, 4}), TensorD({1, 3, 3, 3}), 1, 0), DimensionError);
    EXPECT_THROW(conv2d(TensorD({1, 4, 4}), TensorD({1, 1, 3, 3}), 0, 0), ContractError);
}

TEST(Conv2d, GradientOracleRandomShapes) {
    for (int s = 0; s < kSeeds; ++s) {
        CounterRng rng(s, "conv.oracle");
        const auto cin = pick(rng, 1, 3), cout = pick(rng, 1, 3);
        const auto k = pick(rng, 1, 3), stride = pick(rng, 1, 2), pad = pick(rng, 0, 1);
        const auto h = pick(rng, k, 6), w = pick(rng, k, 6);
        const std::vector<TensorD> in{random_tensor({cin, h, w}, rng), random_tensor({cout, cin, k, k}, rng)};
        EXPECT_LT(check_gradients([=](const auto& v) { return conv2d(v[0], v[1], stride, pad); }, in, s),
                  kGradTol)
            << "seed " << s;
    }
}

TEST(BilinearResize, IdentityAtSameSize) {
    CounterRng rng(5, "resize.identity");
    const TensorD x = random_tensor({4, 21, 21}, rng);
    EXPECT_TRUE(bilinear_resize(x, 21, 21).same_bytes(x));
}

TEST(BilinearResize, ConstantStaysConstant) {
    const TensorD x = TensorD::full({2, 9, 7}, 0.3);
    for (auto [h, w] : {std::pair<std::size_t, std::size_t>{21, 21}, {3, 4}, {1, 1}, {40, 5}}) {
        const TensorD y = bilinear_resize(x, h, w);
        EXPECT_TRUE(std::all_of(y.data().begin(), y.data().end(), [](double v) { return v == 0.3; }));
    }
}

TEST(BilinearResize, UpsampledValuesStayInInputRange) {
    for (int s = 0; s < kSeeds; ++s) {
        CounterRng rng(s, "resize.range");
        const TensorD x = random_tensor({3, 9, 9}, rng, -5.0, 5.0);
        const auto [lo, hi] = std::minmax_element(x.data().begin(), x.data().end());
        const TensorD y = bilinear_resize(x, 21, 21);
        for (double v : y.data()) {
            EXPECT_GE(v, *lo);
            EXPECT_LE(v, *hi);
        }
    }
}

TEST(BilinearResize, HalfPixelSampling) {
    // 1x2 -> 1x4: source coordinates -0.25 (clamped to 0), 0.25, 0.75, 1.25 (clamped to 1).
    const TensorD x({1, 1, 2}, {0.0, 4.0});
    const TensorD y = bilinear_resize(x, 1, 4);
    EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()), (std::vector<double>{0, 1, 3, 4}));
}

TEST(BilinearResize, GradientOracleRandomShapes) {
    for (int s = 0; s < kSeeds; ++s) {
        CounterRng rng(s, "resize.oracle");
        const auto c = pick(rng, 1, 3), h = pick(rng, 1, 7), w = pick(rng, 1, 7);
        const auto oh = pick(rng, 1, 9), ow = pick(rng, 1, 9);
        EXPECT_LT(check_gradients([=](const auto& v) { return bilinear_resize(v[0], oh, ow); },
                                  {random_tensor({c, h, w}, rng)}, s),
                  kGradTol);
    }
}

TEST(LayerNorm, ZeroVarianceRowMapsToZero) {
    const TensorD y = layer_norm(TensorD::ones({1, 3}), TensorD::ones({3}), TensorD::zeros({3}), 1e-5);
    for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, UnitVarianceRowIsUnchangedUpToEps) {
    const double eps = 1e-5;
    const TensorD y = layer_norm(TensorD({1, 2}, {-1, 1}), TensorD::ones({2}), TensorD::zeros({2}), eps);
    const double expected = 1.0 / std::sqrt(1.0 + eps);
    EXPECT_NEAR(y.data()[0], -expected, 1e-15);
    EXPECT_NEAR(y.data()[1], expected, 1e-15);
}

TEST(LayerNorm, RowsAreStandardized) {
    CounterRng rng(6, "ln.rows");
    const TensorD y = layer_norm(random_tensor({4, 8}, rng, -3, 3), TensorD::ones({8}), TensorD::zeros({8}), 1e-5);
    for (std::size_t r = 0; r < 4; ++r) {
        double mu = 0, var = 0;
        for (std::size_t j = 0; j < 8; ++j) mu += y.at({r, j});
        mu /= 8;
        for (std::size_t j = 0; j < 8; ++j) var += (y.at({r, j}) - mu) * (y.at({r, j}) - mu);
        var /= 8;
        EXPECT_LT(std::abs(mu), 1e-6);
        EXPECT_LT(std::abs(var - 1), 1e-3);
    }
}

TEST(LayerNorm, ParameterShapeMismatchThrows) {
    EXPECT_THROW(layer_norm(TensorD({2, 4}), TensorD::ones({3}), TensorD::zeros({3}), 1e-5), DimensionError);
    EXPECT_THROW(layer_norm(TensorD({2, 4}), TensorD::ones({4}), TensorD::zeros({4}), 0.0), ContractError);
}

TEST(LayerNorm, GradientOracleRandomShapes) {
    for (int s = 0; s < kSeeds; ++s) {
        CounterRng rng(s, "ln.oracle");
        const auto rows = pick(rng, 1, 5), d = pick(rng, 2, 8);
        const std::vector<TensorD> in{random_tensor({rows, d}, rng, -2, 2), random_tensor({d}, rng),
                                      random_tensor({d}, rng)};
        EXPECT_LT(check_gradients([](const auto& v) { return layer_norm(v[0], v[1], v[2], 1e-5); }, in, s),
                  kGradTol);
    }
}

TEST(Softmax, UniformOnEqualInputs) {
    const TensorD y = softmax(TensorD({1, 3}, {0, 0, 0}));
    for (double v : y.data()) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
}

TEST(Softmax, StableForLargeLogits) {
    const TensorD y = softmax(TensorD({1, 2}, {1000, 0}));
    EXPECT_NEAR(y.data()[0], 1.0, 1e-12);
    EXPECT_NEAR(y.data()[1], 0.0, 1e-12);
}

TEST(Softmax, RowsSumToOne) {
    for (int s = 0; s < kSeeds; ++s) {
        CounterRng rng(s, "softmax.rows");
        const auto rows = pick(rng, 1, 6), n = pick(rng, 1, 12);
        const TensorD y = softmax(random_tensor({rows, n}, rng, -30, 30));
        for (std::size_t r = 0; r < rows; ++r) {
            double total = 0;
            for (std::size_t j = 0; j < n; ++j) {
                EXPECT_GE(y.at({r, j}), 0.0);
                total += y.at({r, j});
            }
            EXPECT_NEAR(total, 1.0, 1e-9);
        }
    }
}

TEST(Softmax, GradientOracleRandomShapes) {
    for (int s = 0; s < kSeeds; ++s) {
        CounterRng rng(s, "softmax.oracle");
        const auto rows = pick(rng, 1, 5), n = pick(rng, 1, 8);
        EXPECT_LT(check_gradients([](const auto& v) { return softmax(v[0]); },
                                  {random_tensor({rows, n}, rng, -3, 3)}, s),
                  kGradTol);
    }
}

TEST(Elementwise, SubtractSelfIsExactlyZero) {
    CounterRng rng(7, "sub.self");
    const TensorD x = random_tensor({3, 4}, rng, -1e6, 1e6);
    const TensorD z = sub(x, x);
    for (double v : z.data()) EXPECT_EQ(v, 0.0);
}

TEST(Elementwise, ReluValuesAndSubgradient) {
    const TensorD y = relu(TensorD({3}, {-1, 0, 2}));
    EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()), (std::vector<double>{0, 0, 2}));

    TensorD x = TensorD({2}, {-1, 2}).set_requires_grad(true);
    backward(sum(relu(x)));
    EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{0, 1}));

    TensorD at_zero = TensorD({1}, {0.0}).set_requires_grad(true);
    backward(sum(relu(at_zero)));
    EXPECT_EQ(at_zero.grad()[0], 0.0);
}

TEST(Elementwise, ScalarBroadcastOnly) {
    const TensorD y = add(TensorD::ones({2, 2}), TensorD::scalar(2.0));
    for (double v : y.data()) EXPECT_EQ(v, 3.0);
    const TensorD z = sub(TensorD::scalar(1.0), TensorD::ones({3}));
    EXPECT_EQ(z.shape(), (Shape{3}));
    EXPECT_THROW(add(TensorD({2, 3}), TensorD({3})), DimensionError);
    EXPECT_THROW(mul(TensorD({2, 3}), TensorD({3, 2})), DimensionError);
}

TEST(Elementwise, GradientOracleRandomShapes) {
    for (int s = 0; s < kSeeds; ++s) {
        CounterRng rng(s, "elementwise.oracle");
        const Shape shape{pick(rng, 1, 4), pick(rng, 1, 5)};
        const TensorD a = random_tensor(shape, rng), b = random_tensor(shape, rng);
        const TensorD scalar = random_tensor({1}, rng);
        const TensorD kinked = random_away_from_zero(shape, rng);
        EXPECT_LT(check_gradients([](const auto& v) { return add(v[0], v[1]); }, {a, b}, s), kGradTol);
        EXPECT_LT(check_gradients([](const auto& v) { return sub(v[0], v[1]); }, {a, b}, s), kGradTol);
        EXPECT_LT(check_gradients([](const auto& v) { return mul(v[0], v[1]); }, {a, b}, s), kGradTol);
        EXPECT_LT(check_gradients([](const auto& v) { return mul(v[0], v[1]); }, {a, scalar}, s), kGradTol);
        EXPECT_LT(check_gradients([](const auto& v) { return sub(v[1], v[0]); }, {a, scalar}, s), kGradTol);
        EXPECT_LT(check_gradients([](const auto& v) { return scale(v[0], -2.5); }, {a}, s), kGradTol);
        EXPECT_LT(check_gradients([](const auto& v) { return relu(v[0]); }, {kinked}, s), kGradTol);
        EXPECT_LT(check_gradients([](const auto& v) { return abs(v[0]); }, {kinked}, s), kGradTol);
        EXPECT_LT(check_gradients([](const auto& v) { return gelu(v[0]); }, {a}, s), kGradTol);
        EXPECT_LT(check_gradients([](const auto& v) { return bias_add(v[0], v[1]); },
                                  {a, random_tensor({shape[1]}, rng)}, s),
                  kGradTol);
    }
}

TEST(ShapeOps, GradientOracleRandomShapes) {
    for (int s = 0; s < kSeeds; ++s) {
        CounterRng rng(s, "shape.oracle");
        const auto r = pick(rng, 2, 5), c = pick(rng, 2, 5);
        const TensorD a = random_tensor({r, c}, rng), b = random_tensor({1, c}, rng);
        const TensorD tall = random_tensor({r, 1}, rng);
        EXPECT_LT(check_gradients([=](const auto& v) { return reshape(v[0], {c, r}); }, {a}, s), kGradTol);
        EXPECT_LT(check_gradients([=](const auto& v) { return slice_rows(v[0], 1, r - 1); }, {a}, s), kGradTol);
        EXPECT_LT(check_gradients([=](const auto& v) { return slice_cols(v[0], 1, c - 1); }, {a}, s), kGradTol);
        EXPECT_LT(check_gradients([](const auto& v) { return concat_rows<double>({v[1], v[0], v[1]}); }, {a, b}, s),
                  kGradTol);
        EXPECT_LT(check_gradients([](const auto& v) { return concat_cols<double>({v[0], v[1]}); }, {a, tall}, s),
                  kGradTol);
        EXPECT_LT(check_gradients([](const auto& v) { return mean(v[0]); }, {a}, s), kGradTol);
    }
}

TEST(Backward, SumGivesOnes) {
    TensorD x = TensorD({2, 3}, {1, 2, 3, 4, 5, 6}).set_requires_grad(true);
    backward(sum(x));
    for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, SquareGivesTwiceInput) {
    TensorD x = TensorD({3}, {1, 2, 3}).set_requires_grad(true);
    backward(sum(mul(x, x)));
    EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{2, 4, 6}));
}

TEST(Backward, SharedLeafAccumulatesAcrossConsumers) {
    TensorD x = TensorD({2}, {1.5, -2}).set_requires_grad(true);
    // d/dx [sum(3x) + sum(x*x)] = 3 + 2x
    backward(add(sum(scale(x, 3.0)), sum(mul(x, x))));
    EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
    EXPECT_DOUBLE_EQ(x.grad()[1], -1.0);
}

TEST(Backward, NonScalarRootIsContractError) {
    TensorD x = TensorD::ones({2}).set_requires_grad(true);
    EXPECT_THROW(backward(scale(x, 2.0)), ContractError);
}

TEST(Backward, VisitsNodesInReverseTopologicalOrder) {
    TensorD x = TensorD::ones({2, 2}).set_requires_grad(true);
    const TensorD y = relu(matmul(x, x));
    const TensorD root = sum(softmax(y));
    const Graph<double> graph(root);
    EXPECT_EQ(graph.op_names(), (std::vector<std::string>{"matmul", "relu", "softmax", "sum"}));
}

TEST(Backward, ReplayIsBitIdentical) {
    CounterRng rng(8, "replay");
    const TensorD a = random_tensor({5, 7}, rng), b = random_tensor({7, 3}, rng);
    auto run = [&] {
        TensorD la = a.detach().set_requires_grad(true);
        const TensorD out = softmax(layer_norm(matmul(la, b), TensorD::ones({3}), TensorD::zeros({3}), 1e-5));
        backward(sum(mul(out, out)));
        return std::make_pair(out, la);
    };
    const auto [o1, g1] = run();
    const auto [o2, g2] = run();
    EXPECT_TRUE(o1.same_bytes(o2));
    EXPECT_EQ(std::memcmp(g1.grad().data(), g2.grad().data(), g1.numel() * sizeof(double)), 0);
}

TEST(Backward, NoGradGuardSkipsGraph) {
    TensorD x = TensorD::ones({2}).set_requires_grad(true);
    NoGradGuard guard;
    const TensorD y = scale(x, 2.0);
    EXPECT_FALSE(y.requires_grad());
    EXPECT_TRUE(y.is_leaf());
}

TEST(Numerics, NonFiniteOutputIsReported) {
    const TensorD big = TensorD::full({2}, 1e300);
    EXPECT_THROW(mul(big, big), NumericError);
    const TensorF bigf = TensorF::full({2}, 1e30f);
    EXPECT_THROW(matmul(reshape(bigf, {1, 2}), reshape(bigf, {2, 1})), NumericError);
}

TEST(FiniteDiff, SumGivesOnes) {
    CounterRng rng(9, "fd.sum");
    const TensorD x = random_tensor({4, 3}, rng);
    const double eps = 1e-4;
    const TensorD g = finite_diff_grad<double>([](const TensorD& v) { return sum(v).item(); }, x, eps);
    for (double v : g.data()) EXPECT_NEAR(v, 1.0, eps * eps);
}

TEST(FiniteDiff, SquareAtThree) {
    const TensorD g = finite_diff_grad<double>([](const TensorD& v) { return sum(mul(v, v)).item(); },
                                               TensorD({1}, {3.0}), 1e-4);
    EXPECT_NEAR(g.item(), 6.0, 1e-6);
}

TEST(FiniteDiff, RejectsNonPositiveEps) {
    EXPECT_THROW(finite_diff_grad<double>([](const TensorD& v) { return sum(v).item(); }, TensorD({1}), 0.0),
                 ContractError);
}

TEST(Determinism, FloatKernelsAreBitStable) {
    CounterRng rng(10, "float.det");
    std::vector<float> v(3 * 16 * 16);
    for (auto& x : v) x = static_cast<float>(rng.uniform(-1, 1));
    const TensorF img({3, 16, 16}, v);
    std::vector<float> k(8 * 3 * 9);
    for (auto& x : k) x = static_cast<float>(rng.uniform(-1, 1));
    const TensorF w({8, 3, 3, 3}, k);
    const TensorF a = bilinear_resize(conv2d(img, w, 2, 1), 11, 5);
    const TensorF b = bilinear_resize(conv2d(img, w, 2, 1), 11, 5);
    EXPECT_TRUE(a.same_bytes(b));
}
