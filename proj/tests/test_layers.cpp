#include <gtest/gtest.h>

#include <numeric>
#include <random>

#include "graphx/gradcheck.hpp"
#include "graphx/layers.hpp"

using namespace graphx;

namespace {

Tensor random_adjacency(std::size_t n, double density, std::mt19937_64& rng) {
    std::bernoulli_distribution edge(density);
    Tensor a = Tensor::identity(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (edge(rng)) a.at(i, j) = a.at(j, i) = 1.0;
    return a;
}

LayerWeights weights(LayerSpec spec, std::map<std::string, Tensor> blocks) {
    return LayerWeights(spec, std::move(blocks));
}

LayerSpec spec(LayerKind kind, std::size_t in, std::size_t out, Activation act = Activation::identity(),
               std::size_t heads = 1) {
    LayerSpec s;
    s.kind = kind;
    s.in_dim = in;
    s.out_dim = out;
    s.activation = act;
    s.heads = heads;
    return s;
}

}  // namespace

TEST(LayerBlocks, ShapesPerKind) {
    auto gat = layer_blocks(spec(LayerKind::gat, 3, 4, Activation::relu(), 2));
    ASSERT_EQ(gat.size(), 4u);
    EXPECT_EQ(gat[0].name, "W0");
    EXPECT_EQ(gat[0].shape, (Shape{3, 2}));
    EXPECT_EQ(gat[2].name, "a0");
    EXPECT_EQ(gat[2].shape, (Shape{4}));
    EXPECT_EQ(layer_param_count(spec(LayerKind::gin, 2, 3)), 2u * 3 + 3 * 3 + 3 + 3);
    EXPECT_THROW(spec(LayerKind::gat, 3, 5, Activation::relu(), 2).validate(), ConfigError);
}

TEST(LayerWeightsCheck, RejectsWrongShapes) {
    auto s = spec(LayerKind::gcn, 2, 3);
    EXPECT_THROW(weights(s, {{"W", Tensor::zeros({3, 2})}, {"b", Tensor::zeros({3})}}), DimensionError);
    EXPECT_THROW(weights(s, {{"W", Tensor::zeros({2, 3})}}), DimensionError);
}

TEST(Gcn, IdentityCase) {
    auto s = spec(LayerKind::gcn, 2, 2);
    Tensor h = Tensor::matrix({{1, 2}, {3, 4}, {5, 6}});
    Tensor out = gcn_layer(Tensor::identity(3), h, weights(s, {{"W", Tensor::identity(2)}, {"b", Tensor::zeros({2})}}),
                           Activation::identity());
    for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(out[i], h[i]);
}

TEST(Gcn, TwoNodeClique) {
    auto s = spec(LayerKind::gcn, 1, 1);
    Tensor an = normalize_adjacency(Tensor::matrix({{1, 1}, {1, 1}}));
    Tensor out = gcn_layer(an, Tensor::matrix({{1}, {3}}),
                           weights(s, {{"W", Tensor::matrix({{1}})}, {"b", Tensor::zeros({1})}}), Activation::identity());
    EXPECT_DOUBLE_EQ(out[0], 2.0);
    EXPECT_DOUBLE_EQ(out[1], 2.0);
}

TEST(Gin, IsolatedAndPath) {
    auto s = spec(LayerKind::gin, 1, 1);
    auto w = weights(s, {{"W1", Tensor::matrix({{1}})},
                         {"W2", Tensor::matrix({{1}})},
                         {"b1", Tensor::zeros({1})},
                         {"b2", Tensor::zeros({1})}});
    Tensor h = Tensor::matrix({{1}, {2}});
    Tensor iso = gin_layer(Tensor::identity(2), h, w, 0.0, Activation::identity());
    EXPECT_EQ(iso[0], 1.0);
    EXPECT_EQ(iso[1], 2.0);
    Tensor path = gin_layer(Tensor::matrix({{1, 1}, {1, 1}}), h, w, 0.0, Activation::identity());
    EXPECT_EQ(path[0], 3.0);
    EXPECT_EQ(path[1], 3.0);
    Tensor eps = gin_layer(Tensor::matrix({{1, 1}, {1, 1}}), h, w, 0.5, Activation::identity());
    EXPECT_DOUBLE_EQ(eps[0], 1.5 * 1 + 2);
}

TEST(Gat, SingleNodeAndDisconnected) {
    auto s = spec(LayerKind::gat, 2, 2, Activation::relu());
    std::mt19937_64 rng(3);
    auto w = LayerWeights::init(s, rng);
    Tensor h = Tensor::matrix({{0.4, -1.2}});
    Tensor out = gat_layer(Tensor::identity(1), h, w, 1, Activation::relu());
    Tensor expect = relu(matmul(h, w.at("W0")));
    for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(out[i], expect[i], 1e-15);

    Tensor h2 = Tensor::matrix({{0.4, -1.2}, {2.0, 0.3}});
    auto res = gat_layer_with_attention(Tensor::identity(2), h2, w, 1, Activation::relu());
    EXPECT_EQ(res.attention[0].at(0, 0), 1.0);
    EXPECT_EQ(res.attention[0].at(0, 1), 0.0);
    EXPECT_EQ(res.attention[0].at(1, 1), 1.0);
}

TEST(Gat, AttentionRowsAreDistributions) {
    std::mt19937_64 rng(12);
    auto s = spec(LayerKind::gat, 3, 4, Activation::relu(), 2);
    for (int t = 0; t < 10; ++t) {
        auto w = LayerWeights::init(s, rng);
        Tensor a = random_adjacency(7, 0.3, rng);
        auto res = gat_layer_with_attention(a, Tensor::randn({7, 3}, rng), w, 2);
        for (const auto& alpha : res.attention) {
            for (std::size_t i = 0; i < 7; ++i) {
                double row = 0;
                for (std::size_t j = 0; j < 7; ++j) {
                    EXPECT_GE(alpha.at(i, j), 0.0);
                    if (a.at(i, j) == 0.0) {
                        EXPECT_EQ(alpha.at(i, j), 0.0);
                    }
                    row += alpha.at(i, j);
                }
                EXPECT_NEAR(row, 1.0, 1e-9);
            }
        }
        EXPECT_TRUE(all_finite(res.features));
    }
}

TEST(Mlp, Examples) {
    auto s = spec(LayerKind::mlp, 2, 2);
    Tensor h = Tensor::matrix({{1, -2}});
    Tensor same = mlp_forward(h, {s}, {weights(s, {{"W", Tensor::identity(2)}, {"b", Tensor::zeros({2})}})});
    EXPECT_EQ(same[0], 1.0);
    EXPECT_EQ(same[1], -2.0);
    auto s1 = spec(LayerKind::mlp, 1, 1);
    Tensor out = mlp_forward(Tensor::matrix({{3}}), {s1},
                             {weights(s1, {{"W", Tensor::matrix({{2}})}, {"b", Tensor::vector({1})}})});
    EXPECT_EQ(out.item(), 7.0);
    EXPECT_THROW(mlp_forward(h, {s, s1}, {}), DimensionError);
}

TEST(Layers, GradientsMatchFiniteDifferences) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        std::mt19937_64 rng(100 + seed);
        Tensor a = random_adjacency(5, 0.5, rng);
        GraphInput g = GraphInput::from(a);
        Tensor h = Tensor::randn({5, 3}, rng, 1.0, true);
        Tensor target = Tensor::randn({5, 4}, rng);
        for (auto kind : {LayerKind::gcn, LayerKind::gin, LayerKind::gat, LayerKind::mlp}) {
            auto s = spec(kind, 3, 4, Activation::tanh(), kind == LayerKind::gat ? 2 : 1);
            auto w = LayerWeights::init(s, rng);
            std::vector<Tensor> params = w.tensors();
            params.push_back(h);
            double err = grad_check([&] { return mse_loss(apply_layer(s, g, h, w), target); }, params);
            EXPECT_LT(err, 1e-4) << layer_kind_name(kind) << " seed " << seed;
        }
    }
}

TEST(Layers, PermutationEquivariance) {
    std::mt19937_64 rng(21);
    for (int t = 0; t < 20; ++t) {
        const std::size_t n = 4 + t % 5;
        Tensor a = random_adjacency(n, 0.4, rng);
        Tensor h = Tensor::randn({n, 3}, rng);
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        Tensor pa = permute_matrix(a, perm), ph = permute_rows(h, perm);
        for (auto kind : {LayerKind::gcn, LayerKind::gin}) {
            auto s = spec(kind, 3, 2, Activation::relu());
            auto w = LayerWeights::init(s, rng);
            Tensor base = permute_rows(apply_layer(s, GraphInput::from(a), h, w), perm);
            Tensor moved = apply_layer(s, GraphInput::from(pa), ph, w);
            for (std::size_t i = 0; i < base.size(); ++i) EXPECT_NEAR(base[i], moved[i], 1e-9);
        }
    }
}

TEST(Layers, StackedBlocksMatchSeparateGraphs) {
    std::mt19937_64 rng(4);
    Tensor a1 = random_adjacency(4, 0.5, rng), a2 = random_adjacency(4, 0.5, rng);
    Tensor h1 = Tensor::randn({4, 2}, rng), h2 = Tensor::randn({4, 2}, rng);
    for (auto kind : {LayerKind::gcn, LayerKind::gin, LayerKind::gat}) {
        auto s = spec(kind, 2, 2, Activation::relu());
        auto w = LayerWeights::init(s, rng);
        Tensor both = apply_layer(s, GraphInput::from(concat_rows({a1, a2})), concat_rows({h1, h2}), w);
        Tensor first = apply_layer(s, GraphInput::from(a1), h1, w);
        Tensor second = apply_layer(s, GraphInput::from(a2), h2, w);
        for (std::size_t i = 0; i < 8; ++i) {
            EXPECT_EQ(both[i], first[i]);
            EXPECT_EQ(both[8 + i], second[i]);
        }
    }
}

TEST(Layers, Stateless) {
    std::mt19937_64 rng(6);
    auto s = spec(LayerKind::gat, 2, 2, Activation::relu());
    auto w = LayerWeights::init(s, rng);
    Tensor a = random_adjacency(5, 0.5, rng);
    Tensor h = Tensor::randn({5, 2}, rng);
    Tensor x = gat_layer(a, h, w, 1), y = gat_layer(a, h, w, 1);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(x[i], y[i]);
}
