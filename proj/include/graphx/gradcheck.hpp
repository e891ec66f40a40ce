#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "graphx/tensor.hpp"

namespace graphx {

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t entries_checked = 0;
    std::size_t worst_param = 0;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

/// Compares reverse-mode gradients of `loss_fn` against central differences.
///
/// `loss_fn` must rebuild the loss from the current parameter values on every call.
/// The relative error of an entry is |analytic - numeric| / max(1, |numeric|). A
/// non-finite loss anywhere yields an infinite error.
inline GradCheckResult grad_check_detailed(const std::function<Tensor()>& loss_fn,
                                           std::vector<Tensor> params, double h = 1e-5) {
    if (!(h > 0)) throw ConfigError("grad_check: step h must be positive");
    for (auto& p : params) p.zero_grad();
    std::vector<std::vector<double>> analytic;
    {
        Tensor loss = loss_fn();
        if (!std::isfinite(loss.item())) {
            GradCheckResult r;
            r.max_rel_error = std::numeric_limits<double>::infinity();
            return r;
        }
        loss.backward();
        for (const auto& p : params) analytic.push_back(p.grad());
    }
    GradCheckResult result;
    NoGradGuard no_grad;
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto values = params[k].mutable_values();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            values[i] = saved + h;
            const double up = loss_fn().item();
            values[i] = saved - h;
            const double down = loss_fn().item();
            values[i] = saved;
            const double numeric = (up - down) / (2.0 * h);
            double err = std::abs(analytic[k][i] - numeric) / std::max(1.0, std::abs(numeric));
            if (!std::isfinite(up) || !std::isfinite(down) || !std::isfinite(err)) {
                err = std::numeric_limits<double>::infinity();
            }
            ++result.entries_checked;
            if (err > result.max_rel_error || !std::isfinite(err)) {
                result.max_rel_error = err;
                result.worst_param = k;
                result.worst_index = i;
                result.worst_analytic = analytic[k][i];
                result.worst_numeric = numeric;
            }
        }
    }
    for (auto& p : params) p.zero_grad();
    return result;
}

inline double grad_check(const std::function<Tensor()>& loss_fn, std::vector<Tensor> params,
                         double h = 1e-5) {
    return grad_check_detailed(loss_fn, std::move(params), h).max_rel_error;
}

}  // namespace graphx
