#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "graphx/errors.hpp"

namespace graphx {

inline double mse_metric(std::span<const double> pred, std::span<const double> truth) {
    if (pred.size() != truth.size()) {
        throw DimensionError("mse_metric: lengths " + std::to_string(pred.size()) + " and " +
                             std::to_string(truth.size()) + " differ");
    }
    if (pred.empty()) throw ValidationError("mse_metric: empty input");
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - truth[i]) * (pred[i] - truth[i]);
    return s / static_cast<double>(pred.size());
}

struct PccResult {
    double value = 0.0;
    bool defined = false;  // false when either input has zero variance; value is then 0
};

/// Sample Pearson correlation.
inline PccResult pcc_metric(std::span<const double> pred, std::span<const double> truth) {
    if (pred.size() != truth.size()) throw DimensionError("pcc_metric: length mismatch");
    if (pred.size() < 2) throw ValidationError("pcc_metric: needs at least two entries");
    const double n = static_cast<double>(pred.size());
    double mp = 0.0, mt = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        mp += pred[i];
        mt += truth[i];
    }
    mp /= n;
    mt /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double a = pred[i] - mp, b = truth[i] - mt;
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
    }
    if (sxx == 0.0 || syy == 0.0) return {0.0, false};
    return {std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0), true};
}

/// Probability that a random positive outscores a random negative (ties count half).
inline double auc_metric(std::vector<double> positives, std::vector<double> negatives) {
    if (positives.empty() || negatives.empty()) throw ValidationError("auc_metric: needs both classes");
    std::sort(negatives.begin(), negatives.end());
    double wins = 0.0;
    for (double s : positives) {
        const auto lo = std::lower_bound(negatives.begin(), negatives.end(), s);
        const auto hi = std::upper_bound(negatives.begin(), negatives.end(), s);
        wins += static_cast<double>(lo - negatives.begin()) + 0.5 * static_cast<double>(hi - lo);
    }
    return wins / (static_cast<double>(positives.size()) * static_cast<double>(negatives.size()));
}

}  // namespace graphx
