#pragma once

// Dense row-major tensors with define-by-run reverse-mode differentiation.
//
// A Tensor is a cheap handle onto a node of the computation graph. Every
// differentiable op records its parents and a backward rule when gradient
// recording is enabled and at least one input requires a gradient. Calling
// backward() on a scalar sorts the reachable nodes topologically and runs
// each rule exactly once, accumulating into parent gradients.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "graphx/errors.hpp"

namespace graphx {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;  // empty until a gradient reaches this node
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    std::vector<double>& grad_buffer() {
        if (grad.empty()) grad.assign(values.size(), 0.0);
        return grad;
    }
};

inline thread_local bool grad_enabled = true;

}  // namespace detail

/// Disables tape recording for the current thread while alive.
class NoGradGuard {
   public:
    NoGradGuard() : previous_(detail::grad_enabled) { detail::grad_enabled = false; }
    ~NoGradGuard() { detail::grad_enabled = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

   private:
    bool previous_;
};

inline bool grad_recording() { return detail::grad_enabled; }

class Tensor {
   public:
    Tensor() : Tensor(Shape{0}, std::vector<double>{}) {}

    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
        : node_(std::make_shared<detail::Node>()) {
        if (shape_size(shape) != values.size()) {
            throw DimensionError("tensor shape " + shape_string(shape) + " does not match " +
                                 std::to_string(values.size()) + " values");
        }
        node_->shape = std::move(shape);
        node_->values = std::move(values);
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        const std::size_t n = shape_size(shape);
        return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
    }

    static Tensor full(Shape shape, double value) {
        const std::size_t n = shape_size(shape);
        return Tensor(std::move(shape), std::vector<double>(n, value));
    }

    static Tensor scalar(double value, bool requires_grad = false) {
        return Tensor(Shape{}, {value}, requires_grad);
    }

    static Tensor vector(std::vector<double> values, bool requires_grad = false) {
        const std::size_t n = values.size();
        return Tensor(Shape{n}, std::move(values), requires_grad);
    }

    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
        const std::size_t r = rows.size();
        const std::size_t c = r ? rows.begin()->size() : 0;
        std::vector<double> values;
        values.reserve(r * c);
        for (const auto& row : rows) {
            if (row.size() != c) throw DimensionError("ragged matrix literal");
            values.insert(values.end(), row.begin(), row.end());
        }
        return Tensor(Shape{r, c}, std::move(values));
    }

    static Tensor identity(std::size_t n) {
        Tensor t = zeros({n, n});
        for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
        return t;
    }

    static Tensor randn(Shape shape, std::mt19937_64& rng, double stddev = 1.0,
                        bool requires_grad = false) {
        std::normal_distribution<double> dist(0.0, stddev);
        std::vector<double> values(shape_size(shape));
        for (double& v : values) v = dist(rng);
        return Tensor(std::move(shape), std::move(values), requires_grad);
    }

    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t size() const { return node_->values.size(); }
    std::size_t rows() const { return rank() == 0 ? 1 : node_->shape[0]; }
    std::size_t cols() const { return rank() < 2 ? 1 : node_->shape[1]; }

    std::span<const double> values() const { return node_->values; }
    /// Direct write access; only safe on leaves or outside any pending backward pass.
    std::span<double> mutable_values() { return node_->values; }

    double item() const {
        if (size() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape()));
        return node_->values[0];
    }
    double operator[](std::size_t i) const { return node_->values[i]; }
    double at(std::size_t r, std::size_t c) const { return node_->values[r * cols() + c]; }
    double& at(std::size_t r, std::size_t c) { return node_->values[r * cols() + c]; }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool flag) {
        node_->requires_grad = flag;
        return *this;
    }

    bool has_grad() const { return !node_->grad.empty(); }
    /// Gradient after backward(); all zeros if nothing reached this tensor.
    std::vector<double> grad() const {
        return has_grad() ? node_->grad : std::vector<double>(size(), 0.0);
    }
    void zero_grad() { node_->grad.clear(); }

    const char* op() const { return node_->op; }
    bool is_leaf() const { return node_->parents.empty(); }
    bool same_node(const Tensor& other) const { return node_ == other.node_; }

    /// Copy of the values cut off from the tape.
    Tensor detach() const { return Tensor(shape(), node_->values); }

    Tensor reshaped(Shape shape) const;

    void backward() const {
        if (size() != 1) {
            throw DimensionError("backward() needs a scalar loss, got shape " +
                                 shape_string(shape()));
        }
        std::vector<detail::Node*> order;
        std::unordered_set<detail::Node*> visited;
        std::vector<std::pair<detail::Node*, std::size_t>> stack;
        stack.emplace_back(node_.get(), 0);
        visited.insert(node_.get());
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (next < node->parents.size()) {
                detail::Node* parent = node->parents[next++].get();
                if (parent->requires_grad && visited.insert(parent).second) {
                    stack.emplace_back(parent, 0);
                }
            } else {
                order.push_back(node);
                stack.pop_back();
            }
        }
        node_->grad_buffer()[0] += 1.0;
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            detail::Node* node = *it;
            if (node->backward && !node->grad.empty()) node->backward(*node);
        }
    }

    // Used by op implementations.
    const std::shared_ptr<detail::Node>& node() const { return node_; }

   private:
    std::shared_ptr<detail::Node> node_;
};

namespace detail {

inline bool any_requires_grad(std::initializer_list<const Tensor*> inputs) {
    return std::any_of(inputs.begin(), inputs.end(),
                       [](const Tensor* t) { return t->requires_grad(); });
}

/// Builds an op result; records parents and the backward rule only when needed.
inline Tensor make_result(Shape shape, std::vector<double> values, const char* op,
                          std::vector<Tensor> inputs, std::function<void(Node&)> backward) {
    Tensor out(std::move(shape), std::move(values));
    if (!grad_enabled) return out;
    const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                   [](const Tensor& t) { return t.requires_grad(); });
    if (!needs) return out;
    Node& n = *out.node();
    n.requires_grad = true;
    n.op = op;
    n.parents.reserve(inputs.size());
    for (auto& t : inputs) n.parents.push_back(t.node());
    n.backward = std::move(backward);
    return out;
}

inline void require_rank2(const Tensor& t, const char* op) {
    if (t.rank() != 2) {
        throw DimensionError(std::string(op) + " expects a matrix, got shape " +
                             shape_string(t.shape()));
    }
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                             " vs " + shape_string(b.shape()));
    }
}

// Accumulate `g` into the parent's gradient if it participates.
inline void accumulate(Node& parent, const std::vector<double>& g) {
    if (!parent.requires_grad) return;
    auto& buf = parent.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

// C += op(A) * op(B) for row-major buffers. Shapes: A r×k, B k×c.
inline void gemm_acc(const double* a, const double* b, double* c, std::size_t r, std::size_t k,
                     std::size_t cols) {
    for (std::size_t i = 0; i < r; ++i) {
        double* crow = c + i * cols;
        const double* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = b + p * cols;
            for (std::size_t j = 0; j < cols; ++j) crow[j] += av * brow[j];
        }
    }
}

// C += A * B^T. A r×k, B c×k.
inline void gemm_abt_acc(const double* a, const double* b, double* c, std::size_t r,
                         std::size_t k, std::size_t cols) {
    for (std::size_t i = 0; i < r; ++i) {
        const double* arow = a + i * k;
        for (std::size_t j = 0; j < cols; ++j) {
            const double* brow = b + j * k;
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
            c[i * cols + j] += s;
        }
    }
}

// C += A^T * B. A k×r, B k×c.
inline void gemm_atb_acc(const double* a, const double* b, double* c, std::size_t k,
                         std::size_t r, std::size_t cols) {
    for (std::size_t p = 0; p < k; ++p) {
        const double* arow = a + p * r;
        const double* brow = b + p * cols;
        for (std::size_t i = 0; i < r; ++i) {
            const double av = arow[i];
            if (av == 0.0) continue;
            double* crow = c + i * cols;
            for (std::size_t j = 0; j < cols; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace detail

inline Tensor Tensor::reshaped(Shape new_shape) const {
    if (shape_size(new_shape) != size()) {
        throw DimensionError("cannot reshape " + shape_string(shape()) + " to " +
                             shape_string(new_shape));
    }
    auto src = node_;
    return detail::make_result(std::move(new_shape), node_->values, "reshape", {*this},
                               [src](detail::Node& out) { detail::accumulate(*src, out.grad); });
}

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::require_rank2(a, "matmul");
    detail::require_rank2(b, "matmul");
    const std::size_t r = a.rows(), k = a.cols(), c = b.cols();
    if (b.rows() != k) {
        throw DimensionError("matmul: inner dimensions differ, " + shape_string(a.shape()) +
                             " x " + shape_string(b.shape()));
    }
    std::vector<double> out(r * c, 0.0);
    detail::gemm_acc(a.values().data(), b.values().data(), out.data(), r, k, c);
    auto an = a.node(), bn = b.node();
    return detail::make_result({r, c}, std::move(out), "matmul", {a, b},
                               [an, bn, r, k, c](detail::Node& o) {
                                   if (an->requires_grad) {
                                       auto& ga = an->grad_buffer();
                                       detail::gemm_abt_acc(o.grad.data(), bn->values.data(),
                                                            ga.data(), r, c, k);
                                   }
                                   if (bn->requires_grad) {
                                       auto& gb = bn->grad_buffer();
                                       detail::gemm_atb_acc(an->values.data(), o.grad.data(),
                                                            gb.data(), r, k, c);
                                   }
                               });
}

inline Tensor transpose(const Tensor& a) {
    detail::require_rank2(a, "transpose");
    const std::size_t r = a.rows(), c = a.cols();
    std::vector<double> out(r * c);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a.values()[i * c + j];
    auto an = a.node();
    return detail::make_result({c, r}, std::move(out), "transpose", {a},
                               [an, r, c](detail::Node& o) {
                                   auto& g = an->grad_buffer();
                                   for (std::size_t i = 0; i < r; ++i)
                                       for (std::size_t j = 0; j < c; ++j)
                                           g[i * c + j] += o.grad[j * r + i];
                               });
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "add");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    auto an = a.node(), bn = b.node();
    return detail::make_result(a.shape(), std::move(out), "add", {a, b},
                               [an, bn](detail::Node& o) {
                                   detail::accumulate(*an, o.grad);
                                   detail::accumulate(*bn, o.grad);
                               });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "sub");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    auto an = a.node(), bn = b.node();
    return detail::make_result(a.shape(), std::move(out), "sub", {a, b},
                               [an, bn](detail::Node& o) {
                                   detail::accumulate(*an, o.grad);
                                   if (bn->requires_grad) {
                                       auto& g = bn->grad_buffer();
                                       for (std::size_t i = 0; i < g.size(); ++i) g[i] -= o.grad[i];
                                   }
                               });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "mul");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    auto an = a.node(), bn = b.node();
    return detail::make_result(a.shape(), std::move(out), "mul", {a, b},
                               [an, bn](detail::Node& o) {
                                   if (an->requires_grad) {
                                       auto& g = an->grad_buffer();
                                       for (std::size_t i = 0; i < g.size(); ++i)
                                           g[i] += o.grad[i] * bn->values[i];
                                   }
                                   if (bn->requires_grad) {
                                       auto& g = bn->grad_buffer();
                                       for (std::size_t i = 0; i < g.size(); ++i)
                                           g[i] += o.grad[i] * an->values[i];
                                   }
                               });
}

inline Tensor scale(const Tensor& a, double factor) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * factor;
    auto an = a.node();
    return detail::make_result(a.shape(), std::move(out), "scale", {a},
                               [an, factor](detail::Node& o) {
                                   auto& g = an->grad_buffer();
                                   for (std::size_t i = 0; i < g.size(); ++i)
                                       g[i] += o.grad[i] * factor;
                               });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

/// x (r×c) + bias (c), bias broadcast over rows.
inline Tensor add_bias(const Tensor& x, const Tensor& bias) {
    detail::require_rank2(x, "add_bias");
    const std::size_t r = x.rows(), c = x.cols();
    if (bias.size() != c) {
        throw DimensionError("add_bias: bias " + shape_string(bias.shape()) +
                             " does not fit columns of " + shape_string(x.shape()));
    }
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x.values()[i * c + j] + bias[j];
    auto xn = x.node(), bn = bias.node();
    return detail::make_result(x.shape(), std::move(out), "add_bias", {x, bias},
                               [xn, bn, r, c](detail::Node& o) {
                                   detail::accumulate(*xn, o.grad);
                                   if (bn->requires_grad) {
                                       auto& g = bn->grad_buffer();
                                       for (std::size_t i = 0; i < r; ++i)
                                           for (std::size_t j = 0; j < c; ++j)
                                               g[j] += o.grad[i * c + j];
                                   }
                               });
}

/// Identity in the forward pass; multiplies the incoming gradient by `factor`.
inline Tensor grad_scale(const Tensor& x, double factor) {
    auto xn = x.node();
    return detail::make_result(x.shape(), std::vector<double>(x.values().begin(), x.values().end()),
                               "grad_scale", {x}, [xn, factor](detail::Node& o) {
                                   auto& g = xn->grad_buffer();
                                   for (std::size_t i = 0; i < g.size(); ++i)
                                       g[i] += factor * o.grad[i];
                               });
}

// ---------------------------------------------------------------------------
// Activations

struct Activation {
    enum class Kind { identity, relu, leaky_relu, sigmoid, tanh };
    Kind kind = Kind::identity;
    double alpha = 0.2;  // leaky_relu slope

    static Activation identity() { return {Kind::identity, 0.0}; }
    static Activation relu() { return {Kind::relu, 0.0}; }
    static Activation leaky_relu(double alpha = 0.2) { return {Kind::leaky_relu, alpha}; }
    static Activation sigmoid() { return {Kind::sigmoid, 0.0}; }
    static Activation tanh() { return {Kind::tanh, 0.0}; }

    static Activation parse(const std::string& name) {
        if (name == "identity" || name == "linear") return identity();
        if (name == "relu") return relu();
        if (name == "leaky_relu") return leaky_relu();
        if (name == "sigmoid") return sigmoid();
        if (name == "tanh") return tanh();
        throw ConfigError("unknown activation '" + name + "'");
    }

    std::string name() const {
        switch (kind) {
            case Kind::identity: return "identity";
            case Kind::relu: return "relu";
            case Kind::leaky_relu: return "leaky_relu";
            case Kind::sigmoid: return "sigmoid";
            case Kind::tanh: return "tanh";
        }
        return "identity";
    }

    bool operator==(const Activation&) const = default;
};

inline double sigmoid_scalar(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline Tensor activate(const Tensor& x, Activation act) {
    using K = Activation::Kind;
    if (act.kind == K::identity) return x;
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = x[i];
        switch (act.kind) {
            case K::relu: out[i] = v > 0 ? v : 0.0; break;
            case K::leaky_relu: out[i] = v > 0 ? v : act.alpha * v; break;
            case K::sigmoid: out[i] = sigmoid_scalar(v); break;
            case K::tanh: out[i] = std::tanh(v); break;
            case K::identity: out[i] = v; break;
        }
    }
    auto xn = x.node();
    // Derivatives are expressed through the input for relu variants and the output otherwise.
    auto y = std::make_shared<std::vector<double>>(out);
    return detail::make_result(x.shape(), std::move(out), "activate", {x},
                               [xn, act, y](detail::Node& o) {
                                   auto& g = xn->grad_buffer();
                                   for (std::size_t i = 0; i < g.size(); ++i) {
                                       const double v = xn->values[i];
                                       double d = 1.0;
                                       switch (act.kind) {
                                           case K::relu: d = v > 0 ? 1.0 : 0.0; break;
                                           case K::leaky_relu: d = v > 0 ? 1.0 : act.alpha; break;
                                           case K::sigmoid: d = (*y)[i] * (1.0 - (*y)[i]); break;
                                           case K::tanh: d = 1.0 - (*y)[i] * (*y)[i]; break;
                                           case K::identity: break;
                                       }
                                       g[i] += o.grad[i] * d;
                                   }
                               });
}

inline Tensor sigmoid(const Tensor& x) { return activate(x, Activation::sigmoid()); }
inline Tensor relu(const Tensor& x) { return activate(x, Activation::relu()); }

/// Softmax over each row restricted to entries where mask == 1.
///
/// `mask` may have fewer rows than `x` as long as it divides them; it is then tiled
/// down the rows (one mask block per stacked graph).
inline Tensor row_softmax(const Tensor& x, const Tensor& mask) {
    detail::require_rank2(x, "row_softmax");
    detail::require_rank2(mask, "row_softmax");
    const std::size_t r = x.rows(), c = x.cols(), mr = mask.rows();
    if (mask.cols() != c || mr == 0 || r % mr != 0) {
        throw DimensionError("row_softmax: mask " + shape_string(mask.shape()) +
                             " incompatible with " + shape_string(x.shape()));
    }
    std::vector<double> out(r * c, 0.0);
    for (std::size_t i = 0; i < r; ++i) {
        const double* m = mask.values().data() + (i % mr) * c;
        const double* xi = x.values().data() + i * c;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < c; ++j) {
            if (m[j] != 0.0 && m[j] != 1.0) throw ValidationError("row_softmax: mask must be 0/1");
            if (m[j] == 1.0) mx = std::max(mx, xi[j]);
        }
        if (mx == -std::numeric_limits<double>::infinity()) {
            throw ValidationError("row_softmax: row " + std::to_string(i) + " is fully masked");
        }
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            if (m[j] == 1.0) {
                out[i * c + j] = std::exp(xi[j] - mx);
                s += out[i * c + j];
            }
        }
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= s;
    }
    auto xn = x.node();
    auto y = std::make_shared<std::vector<double>>(out);
    return detail::make_result(x.shape(), std::move(out), "row_softmax", {x},
                               [xn, y, r, c](detail::Node& o) {
                                   auto& g = xn->grad_buffer();
                                   for (std::size_t i = 0; i < r; ++i) {
                                       double dot = 0.0;
                                       for (std::size_t j = 0; j < c; ++j)
                                           dot += o.grad[i * c + j] * (*y)[i * c + j];
                                       for (std::size_t j = 0; j < c; ++j)
                                           g[i * c + j] += (*y)[i * c + j] * (o.grad[i * c + j] - dot);
                                   }
                               });
}

// ---------------------------------------------------------------------------
// Reductions and losses

inline Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.values()) s += v;
    auto xn = x.node();
    return detail::make_result({}, {s}, "sum", {x}, [xn](detail::Node& o) {
        auto& g = xn->grad_buffer();
        for (double& v : g) v += o.grad[0];
    });
}

inline Tensor mean(const Tensor& x) {
    if (x.size() == 0) throw DimensionError("mean of empty tensor");
    return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

/// Mean of squared differences; with a mask, the mean runs over entries where mask == 1.
inline Tensor mse_loss(const Tensor& pred, const Tensor& target) {
    detail::require_same_shape(pred, target, "mse_loss");
    if (pred.size() == 0) throw DimensionError("mse_loss on empty tensors");
    const double n = static_cast<double>(pred.size());
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - target[i];
        s += d * d;
    }
    auto pn = pred.node(), tn = target.node();
    return detail::make_result({}, {s / n}, "mse_loss", {pred, target},
                               [pn, tn, n](detail::Node& o) {
                                   const double g0 = o.grad[0] * 2.0 / n;
                                   if (pn->requires_grad) {
                                       auto& g = pn->grad_buffer();
                                       for (std::size_t i = 0; i < g.size(); ++i)
                                           g[i] += g0 * (pn->values[i] - tn->values[i]);
                                   }
                                   if (tn->requires_grad) {
                                       auto& g = tn->grad_buffer();
                                       for (std::size_t i = 0; i < g.size(); ++i)
                                           g[i] -= g0 * (pn->values[i] - tn->values[i]);
                                   }
                               });
}

inline Tensor mse_loss(const Tensor& pred, const Tensor& target, const Tensor& mask) {
    detail::require_same_shape(pred, target, "mse_loss");
    detail::require_same_shape(pred, mask, "mse_loss");
    double n = 0.0, s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (mask[i] == 0.0) continue;
        const double d = pred[i] - target[i];
        s += d * d;
        n += 1.0;
    }
    if (n == 0.0) throw ValidationError("mse_loss: mask selects no entries");
    auto pn = pred.node(), tn = target.node(), mn = mask.node();
    return detail::make_result({}, {s / n}, "mse_loss", {pred, target},
                               [pn, tn, mn, n](detail::Node& o) {
                                   const double g0 = o.grad[0] * 2.0 / n;
                                   for (auto* node : {pn.get(), tn.get()}) {
                                       if (!node->requires_grad) continue;
                                       const double sign = node == pn.get() ? 1.0 : -1.0;
                                       auto& g = node->grad_buffer();
                                       for (std::size_t i = 0; i < g.size(); ++i)
                                           if (mn->values[i] != 0.0)
                                               g[i] += sign * g0 * (pn->values[i] - tn->values[i]);
                                   }
                               });
}

inline Tensor mae_loss(const Tensor& pred, const Tensor& target) {
    detail::require_same_shape(pred, target, "mae_loss");
    if (pred.size() == 0) throw DimensionError("mae_loss on empty tensors");
    const double n = static_cast<double>(pred.size());
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - target[i]);
    auto pn = pred.node(), tn = target.node();
    return detail::make_result({}, {s / n}, "mae_loss", {pred, target},
                               [pn, tn, n](detail::Node& o) {
                                   const double g0 = o.grad[0] / n;
                                   for (auto* node : {pn.get(), tn.get()}) {
                                       if (!node->requires_grad) continue;
                                       const double sign = node == pn.get() ? 1.0 : -1.0;
                                       auto& g = node->grad_buffer();
                                       for (std::size_t i = 0; i < g.size(); ++i) {
                                           const double d = pn->values[i] - tn->values[i];
                                           g[i] += sign * g0 * (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0));
                                       }
                                   }
                               });
}

inline constexpr double kBceEpsilon = 1e-7;

namespace detail {

inline Tensor bce_impl(const Tensor& probs, const Tensor& labels, const Tensor* mask) {
    require_same_shape(probs, labels, "bce_loss");
    if (mask) require_same_shape(probs, *mask, "bce_loss");
    double n = 0.0, s = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const double y = labels[i];
        if (y != 0.0 && y != 1.0) {
            throw ValidationError("bce_loss: label " + std::to_string(y) + " outside {0,1}");
        }
        if (mask && (*mask)[i] == 0.0) continue;
        const double p = std::clamp(probs[i], kBceEpsilon, 1.0 - kBceEpsilon);
        s -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
        n += 1.0;
    }
    if (n == 0.0) throw ValidationError("bce_loss: no entries selected");
    auto pn = probs.node(), ln = labels.node();
    std::shared_ptr<Node> mn = mask ? mask->node() : nullptr;
    return make_result({}, {s / n}, "bce_loss", {probs}, [pn, ln, mn, n](Node& o) {
        auto& g = pn->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (mn && mn->values[i] == 0.0) continue;
            const double raw = pn->values[i];
            if (raw < kBceEpsilon || raw > 1.0 - kBceEpsilon) continue;  // clamp is flat here
            const double y = ln->values[i];
            g[i] += o.grad[0] * (-(y / raw) + (1.0 - y) / (1.0 - raw)) / n;
        }
    });
}

}  // namespace detail

/// Mean binary cross entropy, probabilities clamped to [1e-7, 1 - 1e-7].
inline Tensor bce_loss(const Tensor& probs, const Tensor& labels) {
    return detail::bce_impl(probs, labels, nullptr);
}

/// Masked variant: averages only over entries where mask == 1.
inline Tensor bce_loss(const Tensor& probs, const Tensor& labels, const Tensor& mask) {
    return detail::bce_impl(probs, labels, &mask);
}

// ---------------------------------------------------------------------------
// Structural ops

inline Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
    detail::require_rank2(x, "slice_rows");
    if (begin > end || end > x.rows()) {
        throw DimensionError("slice_rows [" + std::to_string(begin) + "," + std::to_string(end) +
                             ") out of range for " + shape_string(x.shape()));
    }
    const std::size_t c = x.cols();
    std::vector<double> out(x.values().begin() + begin * c, x.values().begin() + end * c);
    auto xn = x.node();
    return detail::make_result({end - begin, c}, std::move(out), "slice_rows", {x},
                               [xn, begin, c](detail::Node& o) {
                                   auto& g = xn->grad_buffer();
                                   for (std::size_t i = 0; i < o.grad.size(); ++i)
                                       g[begin * c + i] += o.grad[i];
                               });
}

/// Contiguous range of the flattened values viewed with a new shape.
inline Tensor slice_flat(const Tensor& x, std::size_t offset, Shape shape) {
    const std::size_t n = shape_size(shape);
    if (offset + n > x.size()) {
        throw DimensionError("slice_flat: block of " + std::to_string(n) + " at offset " +
                             std::to_string(offset) + " exceeds " + std::to_string(x.size()));
    }
    std::vector<double> out(x.values().begin() + offset, x.values().begin() + offset + n);
    auto xn = x.node();
    return detail::make_result(std::move(shape), std::move(out), "slice_flat", {x},
                               [xn, offset](detail::Node& o) {
                                   auto& g = xn->grad_buffer();
                                   for (std::size_t i = 0; i < o.grad.size(); ++i)
                                       g[offset + i] += o.grad[i];
                               });
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw DimensionError("concat_rows of nothing");
    const std::size_t c = parts.front().cols();
    std::size_t r = 0;
    for (const auto& p : parts) {
        detail::require_rank2(p, "concat_rows");
        if (p.cols() != c) throw DimensionError("concat_rows: column count mismatch");
        r += p.rows();
    }
    std::vector<double> out;
    out.reserve(r * c);
    for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
    std::vector<std::shared_ptr<detail::Node>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    return detail::make_result({r, c}, std::move(out), "concat_rows", parts,
                               [nodes](detail::Node& o) {
                                   std::size_t off = 0;
                                   for (const auto& n : nodes) {
                                       const std::size_t len = n->values.size();
                                       if (n->requires_grad) {
                                           auto& g = n->grad_buffer();
                                           for (std::size_t i = 0; i < len; ++i)
                                               g[i] += o.grad[off + i];
                                       }
                                       off += len;
                                   }
                               });
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw DimensionError("concat_cols of nothing");
    const std::size_t r = parts.front().rows();
    std::size_t c = 0;
    for (const auto& p : parts) {
        detail::require_rank2(p, "concat_cols");
        if (p.rows() != r) throw DimensionError("concat_cols: row count mismatch");
        c += p.cols();
    }
    std::vector<double> out(r * c);
    std::size_t col0 = 0;
    for (const auto& p : parts) {
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < p.cols(); ++j)
                out[i * c + col0 + j] = p.values()[i * p.cols() + j];
        col0 += p.cols();
    }
    std::vector<std::shared_ptr<detail::Node>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    return detail::make_result({r, c}, std::move(out), "concat_cols", parts,
                               [nodes, r, c](detail::Node& o) {
                                   std::size_t col = 0;
                                   for (const auto& n : nodes) {
                                       const std::size_t pc = n->shape[1];
                                       if (n->requires_grad) {
                                           auto& g = n->grad_buffer();
                                           for (std::size_t i = 0; i < r; ++i)
                                               for (std::size_t j = 0; j < pc; ++j)
                                                   g[i * pc + j] += o.grad[i * c + col + j];
                                       }
                                       col += pc;
                                   }
                               });
}

enum class Pooling { mean, sum, max };

inline Pooling parse_pooling(const std::string& name) {
    if (name == "mean") return Pooling::mean;
    if (name == "sum") return Pooling::sum;
    if (name == "max") return Pooling::max;
    throw ConfigError("unknown pooling '" + name + "'");
}

inline std::string pooling_name(Pooling p) {
    switch (p) {
        case Pooling::mean: return "mean";
        case Pooling::sum: return "sum";
        case Pooling::max: return "max";
    }
    return "mean";
}

/// Elementwise pooling across equally shaped tensors, accumulated in list order.
inline Tensor pool(const std::vector<Tensor>& parts, Pooling kind) {
    if (parts.empty()) throw DimensionError("pool of an empty list");
    for (const auto& p : parts) detail::require_same_shape(parts.front(), p, "pool");
    const std::size_t n = parts.front().size();
    std::vector<double> out(parts.front().values().begin(), parts.front().values().end());
    std::vector<std::size_t> argmax(kind == Pooling::max ? n : 0, 0);
    for (std::size_t k = 1; k < parts.size(); ++k) {
        for (std::size_t i = 0; i < n; ++i) {
            const double v = parts[k][i];
            if (kind == Pooling::max) {
                if (v > out[i]) {
                    out[i] = v;
                    argmax[i] = k;
                }
            } else {
                out[i] += v;
            }
        }
    }
    const double inv = kind == Pooling::mean ? 1.0 / static_cast<double>(parts.size()) : 1.0;
    if (kind == Pooling::mean)
        for (double& v : out) v *= inv;
    std::vector<std::shared_ptr<detail::Node>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    return detail::make_result(parts.front().shape(), std::move(out), "pool", parts,
                               [nodes, kind, inv, argmax](detail::Node& o) {
                                   for (std::size_t k = 0; k < nodes.size(); ++k) {
                                       if (!nodes[k]->requires_grad) continue;
                                       auto& g = nodes[k]->grad_buffer();
                                       for (std::size_t i = 0; i < g.size(); ++i) {
                                           if (kind == Pooling::max) {
                                               if (argmax[i] == k) g[i] += o.grad[i];
                                           } else {
                                               g[i] += o.grad[i] * inv;
                                           }
                                       }
                                   }
                               });
}

// ---------------------------------------------------------------------------
// Block ops over stacked graphs.
//
// Node features of b graphs with m nodes each are stacked as a (b·m)×c matrix.
// A per-graph operator is either shared (m×m) or stacked per graph ((b·m)×m).

namespace detail {

inline std::size_t block_count(const Tensor& stacked, std::size_t m, const char* op) {
    if (m == 0 || stacked.rows() % m != 0) {
        throw DimensionError(std::string(op) + ": " + std::to_string(stacked.rows()) +
                             " rows are not a multiple of block size " + std::to_string(m));
    }
    return stacked.rows() / m;
}

}  // namespace detail

/// Block-wise product A_i · H_i.
inline Tensor propagate(const Tensor& a, const Tensor& h) {
    detail::require_rank2(a, "propagate");
    detail::require_rank2(h, "propagate");
    const std::size_t m = a.cols();
    if (a.rows() % m != 0) {
        throw DimensionError("propagate: operator " + shape_string(a.shape()) +
                             " is not square blocks");
    }
    const std::size_t b = detail::block_count(h, m, "propagate");
    const bool shared = a.rows() == m;
    if (!shared && a.rows() != b * m) {
        throw DimensionError("propagate: " + shape_string(a.shape()) + " vs features " +
                             shape_string(h.shape()));
    }
    const std::size_t c = h.cols();
    std::vector<double> out(h.size(), 0.0);
    for (std::size_t i = 0; i < b; ++i) {
        const double* ai = a.values().data() + (shared ? 0 : i * m * m);
        detail::gemm_acc(ai, h.values().data() + i * m * c, out.data() + i * m * c, m, m, c);
    }
    auto an = a.node(), hn = h.node();
    return detail::make_result(h.shape(), std::move(out), "propagate", {a, h},
                               [an, hn, b, m, c, shared](detail::Node& o) {
                                   for (std::size_t i = 0; i < b; ++i) {
                                       const std::size_t aoff = shared ? 0 : i * m * m;
                                       const double* gi = o.grad.data() + i * m * c;
                                       if (hn->requires_grad) {
                                           auto& gh = hn->grad_buffer();
                                           detail::gemm_atb_acc(an->values.data() + aoff, gi,
                                                                gh.data() + i * m * c, m, m, c);
                                       }
                                       if (an->requires_grad) {
                                           auto& ga = an->grad_buffer();
                                           detail::gemm_abt_acc(gi, hn->values.data() + i * m * c,
                                                                ga.data() + aoff, m, c, m);
                                       }
                                   }
                               });
}

/// Block-wise pairwise sums: out[i·m+u, v] = s[i·m+u] + t[i·m+v].
inline Tensor outer_sum(const Tensor& s, const Tensor& t, std::size_t m) {
    detail::require_same_shape(s, t, "outer_sum");
    if (s.cols() != 1) throw DimensionError("outer_sum expects column vectors");
    const std::size_t b = detail::block_count(s, m, "outer_sum");
    std::vector<double> out(b * m * m);
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t u = 0; u < m; ++u)
            for (std::size_t v = 0; v < m; ++v)
                out[(i * m + u) * m + v] = s[i * m + u] + t[i * m + v];
    auto sn = s.node(), tn = t.node();
    return detail::make_result({b * m, m}, std::move(out), "outer_sum", {s, t},
                               [sn, tn, b, m](detail::Node& o) {
                                   for (std::size_t i = 0; i < b; ++i)
                                       for (std::size_t u = 0; u < m; ++u)
                                           for (std::size_t v = 0; v < m; ++v) {
                                               const double g = o.grad[(i * m + u) * m + v];
                                               if (sn->requires_grad) sn->grad_buffer()[i * m + u] += g;
                                               if (tn->requires_grad) tn->grad_buffer()[i * m + v] += g;
                                           }
                               });
}

/// Block-wise Gram matrices h_i · h_iᵀ, stacked to (b·m)×m.
inline Tensor gram(const Tensor& h, std::size_t m) {
    detail::require_rank2(h, "gram");
    const std::size_t b = detail::block_count(h, m, "gram");
    const std::size_t c = h.cols();
    std::vector<double> out(b * m * m, 0.0);
    for (std::size_t i = 0; i < b; ++i) {
        const double* hi = h.values().data() + i * m * c;
        detail::gemm_abt_acc(hi, hi, out.data() + i * m * m, m, c, m);
    }
    auto hn = h.node();
    return detail::make_result({b * m, m}, std::move(out), "gram", {h},
                               [hn, b, m, c](detail::Node& o) {
                                   auto& g = hn->grad_buffer();
                                   std::vector<double> sym(m * m);
                                   for (std::size_t i = 0; i < b; ++i) {
                                       const double* gi = o.grad.data() + i * m * m;
                                       for (std::size_t u = 0; u < m; ++u)
                                           for (std::size_t v = 0; v < m; ++v)
                                               sym[u * m + v] = gi[u * m + v] + gi[v * m + u];
                                       detail::gemm_acc(sym.data(), hn->values.data() + i * m * c,
                                                        g.data() + i * m * c, m, m, c);
                                   }
                               });
}

/// Per-block row concatenation: block i of the result is [a_i; b_i].
inline Tensor concat_blocks(const Tensor& a, std::size_t ma, const Tensor& b, std::size_t mb) {
    detail::require_rank2(a, "concat_blocks");
    detail::require_rank2(b, "concat_blocks");
    if (a.cols() != b.cols()) throw DimensionError("concat_blocks: column count mismatch");
    const std::size_t nb = detail::block_count(a, ma, "concat_blocks");
    if (mb == 0 ? b.rows() != 0 : detail::block_count(b, mb, "concat_blocks") != nb) {
        throw DimensionError("concat_blocks: block counts differ");
    }
    const std::size_t c = a.cols(), m = ma + mb;
    std::vector<double> out(nb * m * c);
    for (std::size_t i = 0; i < nb; ++i) {
        std::copy_n(a.values().data() + i * ma * c, ma * c, out.data() + i * m * c);
        std::copy_n(b.values().data() + i * mb * c, mb * c, out.data() + (i * m + ma) * c);
    }
    auto an = a.node(), bn = b.node();
    return detail::make_result({nb * m, c}, std::move(out), "concat_blocks", {a, b},
                               [an, bn, nb, ma, mb, m, c](detail::Node& o) {
                                   for (std::size_t i = 0; i < nb; ++i) {
                                       if (an->requires_grad) {
                                           auto& g = an->grad_buffer();
                                           for (std::size_t k = 0; k < ma * c; ++k)
                                               g[i * ma * c + k] += o.grad[i * m * c + k];
                                       }
                                       if (bn->requires_grad) {
                                           auto& g = bn->grad_buffer();
                                           for (std::size_t k = 0; k < mb * c; ++k)
                                               g[i * mb * c + k] += o.grad[(i * m + ma) * c + k];
                                       }
                                   }
                               });
}

/// Rows [begin, end) of every block of size m.
inline Tensor slice_blocks(const Tensor& x, std::size_t m, std::size_t begin, std::size_t end) {
    detail::require_rank2(x, "slice_blocks");
    const std::size_t nb = detail::block_count(x, m, "slice_blocks");
    if (begin > end || end > m) throw DimensionError("slice_blocks: bad row range");
    const std::size_t c = x.cols(), k = end - begin;
    std::vector<double> out(nb * k * c);
    for (std::size_t i = 0; i < nb; ++i)
        std::copy_n(x.values().data() + (i * m + begin) * c, k * c, out.data() + i * k * c);
    auto xn = x.node();
    return detail::make_result({nb * k, c}, std::move(out), "slice_blocks", {x},
                               [xn, nb, m, begin, k, c](detail::Node& o) {
                                   auto& g = xn->grad_buffer();
                                   for (std::size_t i = 0; i < nb; ++i)
                                       for (std::size_t j = 0; j < k * c; ++j)
                                           g[(i * m + begin) * c + j] += o.grad[i * k * c + j];
                               });
}

/// Repeats a matrix `times` times down the rows (constant data helper, not taped).
inline Tensor tile_rows(const Tensor& x, std::size_t times) {
    detail::require_rank2(x, "tile_rows");
    std::vector<double> out;
    out.reserve(x.size() * times);
    for (std::size_t i = 0; i < times; ++i) out.insert(out.end(), x.values().begin(), x.values().end());
    return Tensor({x.rows() * times, x.cols()}, std::move(out));
}

inline bool all_finite(const Tensor& t) {
    return std::all_of(t.values().begin(), t.values().end(),
                       [](double v) { return std::isfinite(v); });
}

}  // namespace graphx
