#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "graphx/gradcheck.hpp"
#include "graphx/optim.hpp"
#include "graphx/tensor.hpp"

using namespace graphx;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, bool rg = true) {
    return Tensor::randn({r, c}, rng, 1.0, rg);
}

}  // namespace

TEST(Matmul, IdentityLeavesMatrix) {
    Tensor m = Tensor::matrix({{3, 4}, {5, 6}});
    Tensor out = matmul(Tensor::identity(2), m);
    EXPECT_EQ(out.shape(), m.shape());
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(out[i], m[i]);
}

TEST(Matmul, RowTimesColumn) {
    Tensor out = matmul(Tensor::matrix({{1, 2}}), Tensor::matrix({{3}, {4}}));
    EXPECT_EQ(out.shape(), (Shape{1, 1}));
    EXPECT_DOUBLE_EQ(out.item(), 11.0);
}

TEST(Matmul, MatchesTripleLoop) {
    std::mt19937_64 rng(7);
    Tensor a = random_matrix(3, 4, rng), b = random_matrix(4, 2, rng);
    Tensor c = matmul(a, b);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 2; ++j) {
            double s = 0;
            for (std::size_t k = 0; k < 4; ++k) s += a.at(i, k) * b.at(k, j);
            EXPECT_NEAR(c.at(i, j), s, 1e-12);
        }
}

TEST(Matmul, ShapeMismatchNamesShapes) {
    try {
        matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
        FAIL();
    } catch (const DimensionError& e) {
        EXPECT_NE(std::string(e.what()).find("[2x3]"), std::string::npos);
    }
}

TEST(Matmul, Associative) {
    std::mt19937_64 rng(3);
    for (int t = 0; t < 5; ++t) {
        Tensor a = random_matrix(3, 4, rng), b = random_matrix(4, 5, rng), c = random_matrix(5, 2, rng);
        Tensor l = matmul(matmul(a, b), c), r = matmul(a, matmul(b, c));
        for (std::size_t i = 0; i < l.size(); ++i) EXPECT_NEAR(l[i], r[i], 1e-9);
    }
}

TEST(Activate, ScalarValues) {
    EXPECT_DOUBLE_EQ(sigmoid(Tensor::scalar(0)).item(), 0.5);
    EXPECT_DOUBLE_EQ(relu(Tensor::scalar(-1.5)).item(), 0.0);
    EXPECT_NEAR(sigmoid(Tensor::scalar(2)).item(), 1.0 / (1.0 + std::exp(-2.0)), 1e-15);
    EXPECT_NEAR(sigmoid(Tensor::scalar(2)).item(), 0.880797, 1e-6);
    EXPECT_DOUBLE_EQ(activate(Tensor::scalar(-2), Activation::leaky_relu(0.2)).item(), -0.4);
    EXPECT_DOUBLE_EQ(activate(Tensor::scalar(0.3), Activation::tanh()).item(), std::tanh(0.3));
}

TEST(RowSoftmax, Examples) {
    Tensor u = row_softmax(Tensor::matrix({{0, 0}}), Tensor::matrix({{1, 1}}));
    EXPECT_DOUBLE_EQ(u[0], 0.5);
    EXPECT_DOUBLE_EQ(u[1], 0.5);
    Tensor m = row_softmax(Tensor::matrix({{10, 10, 10}}), Tensor::matrix({{1, 0, 1}}));
    EXPECT_DOUBLE_EQ(m[0], 0.5);
    EXPECT_DOUBLE_EQ(m[1], 0.0);
    EXPECT_DOUBLE_EQ(m[2], 0.5);
    Tensor s = row_softmax(Tensor::matrix({{1, 2}}), Tensor::matrix({{1, 1}}));
    EXPECT_NEAR(s[0], 0.26894, 1e-5);
    EXPECT_NEAR(s[1], 0.73106, 1e-5);
}

TEST(RowSoftmax, FullyMaskedRowThrows) {
    EXPECT_THROW(row_softmax(Tensor::matrix({{1, 2}}), Tensor::matrix({{0, 0}})), ValidationError);
    EXPECT_THROW(row_softmax(Tensor::matrix({{1, 2}}), Tensor::matrix({{0.5, 1}})), ValidationError);
}

TEST(Losses, Mse) {
    EXPECT_DOUBLE_EQ(mse_loss(Tensor::vector({1, 2}), Tensor::vector({1, 2})).item(), 0.0);
    EXPECT_DOUBLE_EQ(mse_loss(Tensor::vector({0, 0}), Tensor::vector({1, 1})).item(), 1.0);
    EXPECT_NEAR(mse_loss(Tensor::vector({1, 2, 3}), Tensor::vector({2, 2, 5})).item(), 5.0 / 3.0, 1e-15);
    EXPECT_THROW(mse_loss(Tensor::vector({1}), Tensor::vector({1, 2})), DimensionError);
}

TEST(Losses, Bce) {
    EXPECT_LE(bce_loss(Tensor::vector({1, 1, 1}), Tensor::vector({1, 1, 1})).item(), 1.2e-7);
    EXPECT_NEAR(bce_loss(Tensor::vector({0.5, 0.5}), Tensor::vector({0, 1})).item(), std::log(2.0), 1e-12);
    EXPECT_NEAR(bce_loss(Tensor::vector({0.9, 0.2}), Tensor::vector({1, 0})).item(),
                -(std::log(0.9) + std::log(0.8)) / 2.0, 1e-12);
    EXPECT_NEAR(bce_loss(Tensor::vector({0.9, 0.2}), Tensor::vector({1, 0})).item(), 0.164252, 1e-6);
    EXPECT_THROW(bce_loss(Tensor::vector({0.5}), Tensor::vector({0.5})), ValidationError);
}

TEST(Backward, SumGivesOnes) {
    Tensor x = Tensor::zeros({2, 2}, true);
    sum(x).backward();
    for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 1.0);
}

TEST(Backward, LinearScalarChainRule) {
    Tensor w = Tensor::scalar(2, true);
    Tensor loss = mse_loss(mul(w, Tensor::scalar(3)), Tensor::scalar(5));
    loss.backward();
    EXPECT_DOUBLE_EQ(w.grad()[0], 6.0);
}

TEST(Backward, FanOutAccumulates) {
    Tensor x = Tensor::vector({1.5, -2.0}, true);
    // y = x*x + 3x, dy/dx = 2x + 3
    sum(add(mul(x, x), scale(x, 3.0))).backward();
    EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
    EXPECT_DOUBLE_EQ(x.grad()[1], -1.0);
}

TEST(Backward, NonScalarThrows) {
    Tensor x = Tensor::zeros({2}, true);
    EXPECT_THROW(scale(x, 2).backward(), DimensionError);
}

TEST(Backward, NoGradGuardRecordsNothing) {
    Tensor x = Tensor::vector({1, 2}, true);
    NoGradGuard guard;
    Tensor y = scale(x, 2);
    EXPECT_TRUE(y.is_leaf());
    EXPECT_FALSE(y.requires_grad());
}

TEST(GradCheck, QuadraticAndConstant) {
    std::mt19937_64 rng(1);
    Tensor p = Tensor::randn({3, 2}, rng, 1.0, true);
    EXPECT_LT(grad_check([&] { return scale(sum(mul(p, p)), 0.5); }, {p}), 1e-8);
    auto r = grad_check_detailed([] { return Tensor::scalar(4.0); }, {p});
    EXPECT_EQ(r.max_rel_error, 0.0);
}

TEST(GradCheck, NanIsFailure) {
    Tensor p = Tensor::vector({1.0}, true);
    EXPECT_TRUE(std::isinf(grad_check([&] { return scale(sum(p), std::nan("")); }, {p})));
}

TEST(GradCheck, GradScaleInjectsFault) {
    Tensor p = Tensor::vector({0.3, -0.7}, true);
    EXPECT_GT(grad_check([&] { return sum(mul(grad_scale(p, 1.5), p)); }, {p}), 1e-2);
}

// Every primitive against finite differences over 20 seeds.
TEST(GradCheck, Primitives) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(seed);
        Tensor a = random_matrix(3, 4, rng), b = random_matrix(4, 3, rng), c = random_matrix(3, 4, rng);
        Tensor bias = Tensor::randn({4}, rng, 1.0, true);
        Tensor mask = Tensor::matrix({{1, 0, 1}, {1, 1, 0}, {0, 1, 1}});
        Tensor labels = Tensor::matrix({{1, 0, 1, 0}, {0, 0, 1, 1}, {1, 1, 0, 0}});
        Tensor adj = Tensor::matrix({{0.5, 0.5, 0}, {0.5, 0.25, 0.25}, {0, 0.25, 0.75}});
        Tensor s = random_matrix(6, 1, rng), t = random_matrix(6, 1, rng);
        Tensor fixed = random_matrix(6, 2, rng, false);
        std::vector<std::pair<std::string, std::function<Tensor()>>> cases = {
            {"matmul", [&] { return sum(matmul(a, b)); }},
            {"transpose", [&] { return sum(mul(transpose(a), b)); }},
            {"add_sub_mul", [&] { return sum(mul(sub(add(a, c), a), c)); }},
            {"add_bias", [&] { return sum(mul(add_bias(a, bias), c)); }},
            {"sigmoid", [&] { return sum(mul(sigmoid(a), c)); }},
            {"tanh", [&] { return sum(mul(activate(a, Activation::tanh()), c)); }},
            {"relu", [&] { return sum(mul(relu(a), c)); }},
            {"leaky", [&] { return sum(mul(activate(a, Activation::leaky_relu()), c)); }},
            {"softmax", [&] { return sum(mul(row_softmax(matmul(a, b), mask), matmul(c, b))); }},
            {"mse", [&] { return mse_loss(a, c); }},
            {"mae", [&] { return mae_loss(a, c); }},
            {"bce", [&] { return bce_loss(sigmoid(a), labels); }},
            {"slices", [&] { return sum(mul(concat_rows({slice_rows(a, 1, 3), slice_rows(c, 0, 1)}), c)); }},
            {"concat_cols", [&] { return sum(mul(concat_cols({a, c}), concat_cols({c, a}))); }},
            {"propagate", [&] { return sum(mul(propagate(adj, a), c)); }},
            {"gram", [&] { return sum(mul(gram(fixed, 3), gram(concat_rows({a, c}), 3))); }},
            {"outer_sum", [&] { return sum(mul(outer_sum(s, t, 3), outer_sum(t, s, 3))); }},
            {"blocks", [&] { return sum(mul(concat_blocks(slice_blocks(a, 1, 0, 1), 1, c, 1), concat_rows({c, a}))); }},
            {"pool_mean", [&] { return sum(mul(pool({a, c}, Pooling::mean), a)); }},
            {"pool_max", [&] { return sum(mul(pool({a, c}, Pooling::max), a)); }},
        };
        for (auto& [name, fn] : cases) {
            EXPECT_LT(grad_check(fn, {a, b, c, bias, s, t}), 1e-4) << name << " seed " << seed;
        }
    }
}

TEST(Pool, Examples) {
    Tensor m = Tensor::matrix({{1, 2}, {3, 4}});
    Tensor single = pool({m}, Pooling::mean);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(single[i], m[i]);
    Tensor half = pool({Tensor::zeros({2, 2}), m}, Pooling::mean);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(half[i], m[i] / 2);
    EXPECT_THROW(pool({}, Pooling::mean), DimensionError);
}

TEST(Adam, ZeroGradientLeavesParams) {
    Tensor p = Tensor::vector({1.0, 2.0}, true);
    std::vector<Tensor> params{p};
    AdamState st;
    adam_step(params, {{0.0, 0.0}}, st);
    EXPECT_EQ(p[0], 1.0);
    EXPECT_EQ(p[1], 2.0);
    EXPECT_EQ(st.step_count, 1u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
    Tensor p = Tensor::scalar(0.5, true);
    std::vector<Tensor> params{p};
    AdamState st;
    adam_step(params, {{1.0}}, st);
    EXPECT_NEAR(0.5 - p.item(), 1e-3, 1e-10);
}

TEST(Adam, Deterministic) {
    auto run = [] {
        std::mt19937_64 rng(5);
        Tensor p = Tensor::randn({4}, rng, 1.0, true);
        Adam opt({p});
        for (int i = 0; i < 10; ++i) {
            opt.zero_grad();
            sum(mul(p, p)).backward();
            opt.step();
        }
        return std::vector<double>(p.values().begin(), p.values().end());
    };
    EXPECT_EQ(run(), run());
}
