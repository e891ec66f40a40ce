#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "graphx/metrics.hpp"

using namespace graphx;

TEST(Mse, HandComputed) {
    std::vector<double> p{1, 2, 3}, t{1, 0, 6};
    EXPECT_NEAR(mse_metric(p, t), 13.0 / 3.0, 1e-12);
    EXPECT_EQ(mse_metric(p, p), 0.0);
    EXPECT_THROW(mse_metric(p, std::vector<double>{1, 2}), DimensionError);
}

TEST(Pcc, HandComputed) {
    std::vector<double> x{1, 2, 3, 4, 5}, y{2, 4, 5, 4, 5};
    // r = 6 / sqrt(10 * 6)
    EXPECT_NEAR(pcc_metric(x, y).value, 6.0 / std::sqrt(60.0), 1e-12);
    std::vector<double> neg{-2, -4, -6, -8, -10};
    EXPECT_NEAR(pcc_metric(x, neg).value, -1.0, 1e-12);
}

TEST(Pcc, ConstantInputIsUndefined) {
    std::vector<double> x{1, 2, 3}, c{4, 4, 4};
    auto r = pcc_metric(x, c);
    EXPECT_FALSE(r.defined);
    EXPECT_EQ(r.value, 0.0);
    EXPECT_FALSE(std::isnan(r.value));
    EXPECT_THROW(pcc_metric(std::vector<double>{1}, std::vector<double>{1}), ValidationError);
}

TEST(Pcc, InvariantToAffineRescaling) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g;
    std::vector<double> x(50), y(50), z(50);
    for (std::size_t i = 0; i < 50; ++i) {
        x[i] = g(rng);
        y[i] = x[i] + g(rng);
        z[i] = 3.5 * y[i] - 7.0;
    }
    EXPECT_NEAR(pcc_metric(x, y).value, pcc_metric(x, z).value, 1e-12);
}

TEST(Auc, PairCounting) {
    EXPECT_DOUBLE_EQ(auc_metric({0.9, 0.8}, {0.1, 0.2}), 1.0);
    EXPECT_DOUBLE_EQ(auc_metric({0.1}, {0.9}), 0.0);
    EXPECT_DOUBLE_EQ(auc_metric({0.5}, {0.5}), 0.5);
    // pairs: (0.8>0.3),(0.8>0.6),(0.4>0.3),(0.4<0.6) -> 3/4
    EXPECT_DOUBLE_EQ(auc_metric({0.8, 0.4}, {0.3, 0.6}), 0.75);
    EXPECT_THROW(auc_metric({}, {0.1}), ValidationError);
}

TEST(Metrics, RandomPairsMatchLoopOracles) {
    std::mt19937_64 rng(17);
    std::normal_distribution<double> g;
    std::uniform_int_distribution<int> len(2, 40);
    for (int trial = 0; trial < 100; ++trial) {
        const auto n = static_cast<std::size_t>(len(rng));
        std::vector<double> a(n), b(n);
        for (std::size_t i = 0; i < n; ++i) {
            a[i] = g(rng);
            b[i] = 0.5 * a[i] + g(rng);
        }
        double se = 0.0;
        for (std::size_t i = 0; i < n; ++i) se += (a[i] - b[i]) * (a[i] - b[i]);
        EXPECT_NEAR(mse_metric(a, b), se / static_cast<double>(n), 1e-12);

        double sa = 0, sb = 0, sab = 0, saa = 0, sbb = 0;
        for (std::size_t i = 0; i < n; ++i) {
            sa += a[i];
            sb += b[i];
            sab += a[i] * b[i];
            saa += a[i] * a[i];
            sbb += b[i] * b[i];
        }
        const double nn = static_cast<double>(n);
        const double cov = sab - sa * sb / nn;
        const double r = cov / std::sqrt((saa - sa * sa / nn) * (sbb - sb * sb / nn));
        EXPECT_NEAR(pcc_metric(a, b).value, r, 1e-12);
    }
}
