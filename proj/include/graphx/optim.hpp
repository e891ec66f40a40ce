#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "graphx/tensor.hpp"

namespace graphx {

struct AdamOptions {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamState {
    std::vector<std::vector<double>> first_moment;
    std::vector<std::vector<double>> second_moment;
    std::uint64_t step_count = 0;
    AdamOptions options;
};

/// One bias-corrected Adam update of `params` (in place) from `grads`.
inline void adam_step(std::vector<Tensor>& params, const std::vector<std::vector<double>>& grads,
                      AdamState& state) {
    if (grads.size() != params.size()) {
        throw DimensionError("adam_step: " + std::to_string(params.size()) + " params but " +
                             std::to_string(grads.size()) + " gradients");
    }
    if (state.first_moment.empty()) {
        for (const auto& p : params) {
            state.first_moment.emplace_back(p.size(), 0.0);
            state.second_moment.emplace_back(p.size(), 0.0);
        }
    }
    if (state.first_moment.size() != params.size()) {
        throw DimensionError("adam_step: optimizer state does not match parameter list");
    }
    ++state.step_count;
    const auto& o = state.options;
    const double t = static_cast<double>(state.step_count);
    const double bc1 = 1.0 - std::pow(o.beta1, t);
    const double bc2 = 1.0 - std::pow(o.beta2, t);
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto values = params[k].mutable_values();
        const auto& g = grads[k];
        auto& m = state.first_moment[k];
        auto& v = state.second_moment[k];
        if (g.size() != values.size() || m.size() != values.size()) {
            throw DimensionError("adam_step: gradient shape mismatch for parameter " +
                                 std::to_string(k));
        }
        for (std::size_t i = 0; i < values.size(); ++i) {
            m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * g[i];
            v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            values[i] -= o.learning_rate * mhat / (std::sqrt(vhat) + o.epsilon);
        }
    }
}

/// Adam bound to a fixed parameter list; reads gradients from the tensors.
class Adam {
   public:
    Adam(std::vector<Tensor> params, AdamOptions options = {}) : params_(std::move(params)) {
        state_.options = options;
    }

    void step() {
        std::vector<std::vector<double>> grads;
        grads.reserve(params_.size());
        for (const auto& p : params_) grads.push_back(p.grad());
        adam_step(params_, grads, state_);
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    const AdamState& state() const { return state_; }

   private:
    std::vector<Tensor> params_;
    AdamState state_;
};

class Sgd {
   public:
    Sgd(std::vector<Tensor> params, double learning_rate)
        : params_(std::move(params)), learning_rate_(learning_rate) {}

    void step() {
        for (auto& p : params_) {
            if (!p.has_grad()) continue;
            const auto g = p.grad();
            auto values = p.mutable_values();
            for (std::size_t i = 0; i < values.size(); ++i) values[i] -= learning_rate_ * g[i];
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

   private:
    std::vector<Tensor> params_;
    double learning_rate_;
};

}  // namespace graphx
