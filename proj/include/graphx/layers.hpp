#pragma once

// GNN and MLP layers. Layers own no parameters: every weight block arrives as an
// argument, so the same code runs on hypernetwork-generated and directly trained
// weights.

#include <cmath>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "graphx/graph.hpp"
#include "graphx/tensor.hpp"

namespace graphx {

enum class LayerKind { gcn, gin, gat, mlp };

inline LayerKind parse_layer_kind(const std::string& name) {
    if (name == "gcn") return LayerKind::gcn;
    if (name == "gin") return LayerKind::gin;
    if (name == "gat") return LayerKind::gat;
    if (name == "mlp") return LayerKind::mlp;
    throw ConfigError("unknown layer kind '" + name + "'");
}

inline std::string layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::gcn: return "gcn";
        case LayerKind::gin: return "gin";
        case LayerKind::gat: return "gat";
        case LayerKind::mlp: return "mlp";
    }
    return "gcn";
}

struct LayerSpec {
    LayerKind kind = LayerKind::gcn;
    std::size_t in_dim = 1;
    std::size_t out_dim = 1;
    std::size_t heads = 1;  // gat only
    Activation activation = Activation::relu();
    double eps = 0.0;  // gin only

    bool is_graph_layer() const { return kind != LayerKind::mlp; }

    void validate() const {
        if (in_dim == 0 || out_dim == 0) throw ConfigError("layer dimensions must be positive");
        if (kind == LayerKind::gat && (heads == 0 || out_dim % heads != 0)) {
            throw ConfigError("gat layer: out_dim " + std::to_string(out_dim) +
                              " not divisible by " + std::to_string(heads) + " heads");
        }
    }

    bool operator==(const LayerSpec&) const = default;
};

struct BlockShape {
    std::string name;
    Shape shape;
    std::size_t fan_in;
};

/// Parameter blocks of one layer, sorted by block name.
inline std::vector<BlockShape> layer_blocks(const LayerSpec& spec) {
    spec.validate();
    std::vector<BlockShape> blocks;
    switch (spec.kind) {
        case LayerKind::gcn:
        case LayerKind::mlp:
            blocks = {{"W", {spec.in_dim, spec.out_dim}, spec.in_dim}, {"b", {spec.out_dim}, 1}};
            break;
        case LayerKind::gin:
            blocks = {{"W1", {spec.in_dim, spec.out_dim}, spec.in_dim},
                      {"W2", {spec.out_dim, spec.out_dim}, spec.out_dim},
                      {"b1", {spec.out_dim}, 1},
                      {"b2", {spec.out_dim}, 1}};
            break;
        case LayerKind::gat: {
            const std::size_t dh = spec.out_dim / spec.heads;
            for (std::size_t h = 0; h < spec.heads; ++h)
                blocks.push_back({"W" + std::to_string(h), {spec.in_dim, dh}, spec.in_dim});
            for (std::size_t h = 0; h < spec.heads; ++h)
                blocks.push_back({"a" + std::to_string(h), {2 * dh}, 2 * dh});
            break;
        }
    }
    std::sort(blocks.begin(), blocks.end(),
              [](const BlockShape& a, const BlockShape& b) { return a.name < b.name; });
    return blocks;
}

inline std::size_t layer_param_count(const LayerSpec& spec) {
    std::size_t n = 0;
    for (const auto& b : layer_blocks(spec)) n += shape_size(b.shape);
    return n;
}

/// Named weight blocks for one layer, shape-checked against its spec.
class LayerWeights {
   public:
    LayerWeights() = default;

    LayerWeights(const LayerSpec& spec, std::map<std::string, Tensor> blocks) {
        for (const auto& b : layer_blocks(spec)) {
            auto it = blocks.find(b.name);
            if (it == blocks.end()) {
                throw DimensionError(layer_kind_name(spec.kind) + " layer: missing block '" + b.name + "'");
            }
            if (it->second.shape() != b.shape) {
                throw DimensionError(layer_kind_name(spec.kind) + " layer: block '" + b.name + "' has shape " +
                                     shape_string(it->second.shape()) + ", expected " + shape_string(b.shape));
            }
        }
        if (blocks.size() != layer_blocks(spec).size()) {
            throw DimensionError(layer_kind_name(spec.kind) + " layer: unexpected extra blocks");
        }
        blocks_ = std::move(blocks);
    }

    /// Glorot-normal weights, zero biases, for directly trained layers.
    static LayerWeights init(const LayerSpec& spec, std::mt19937_64& rng) {
        std::map<std::string, Tensor> blocks;
        for (const auto& b : layer_blocks(spec)) {
            if (b.shape.size() == 2) {
                const double std = std::sqrt(2.0 / static_cast<double>(b.shape[0] + b.shape[1]));
                blocks[b.name] = Tensor::randn(b.shape, rng, std, true);
            } else if (b.name[0] == 'a') {
                blocks[b.name] = Tensor::randn(b.shape, rng, 1.0 / std::sqrt(static_cast<double>(b.fan_in)), true);
            } else {
                blocks[b.name] = Tensor::zeros(b.shape, true);
            }
        }
        return LayerWeights(spec, std::move(blocks));
    }

    const Tensor& at(const std::string& name) const {
        auto it = blocks_.find(name);
        if (it == blocks_.end()) throw DimensionError("no weight block '" + name + "'");
        return it->second;
    }

    const std::map<std::string, Tensor>& blocks() const { return blocks_; }

    std::vector<Tensor> tensors() const {
        std::vector<Tensor> out;
        for (const auto& [_, t] : blocks_) out.push_back(t);
        return out;
    }

   private:
    std::map<std::string, Tensor> blocks_;
};

/// Graph operator(s) for a batch of graphs sharing a node count.
///
/// `adjacency` is m×m (shared by every stacked feature block) or (b·m)×m (one
/// adjacency per block). `normalized` holds the matching D^(-1/2) A D^(-1/2).
struct GraphInput {
    Tensor adjacency;
    Tensor normalized;

    static GraphInput from(const Tensor& adjacency) {
        return {adjacency, normalize_adjacency(adjacency)};
    }

    std::size_t nodes() const { return adjacency.cols(); }
};

namespace detail {

inline void check_features(const Tensor& h, std::size_t nodes, std::size_t in_dim, const char* op) {
    require_rank2(h, op);
    if (h.cols() != in_dim) {
        throw DimensionError(std::string(op) + ": features " + shape_string(h.shape()) + " but layer expects width " +
                             std::to_string(in_dim));
    }
    block_count(h, nodes, op);
}

// A + eps·I on every block, constant data.
inline Tensor add_self_weight(const Tensor& a, double eps) {
    if (eps == 0.0) return a;
    Tensor out = a.detach();
    const std::size_t m = a.cols();
    for (std::size_t r = 0; r < a.rows(); ++r) out.at(r, r % m) += eps;
    return out;
}

}  // namespace detail

/// act(Â · H · W + b).
inline Tensor gcn_layer(const Tensor& a_norm, const Tensor& h, const LayerWeights& w,
                        Activation act = Activation::relu()) {
    const Tensor& W = w.at("W");
    detail::check_features(h, a_norm.cols(), W.rows(), "gcn_layer");
    return activate(add_bias(propagate(a_norm, matmul(h, W)), w.at("b")), act);
}

/// act(MLP₂((1 + eps)·H + (A − I)·H)); A carries self-loops, so the self term is
/// re-weighted rather than added twice.
inline Tensor gin_layer(const Tensor& a, const Tensor& h, const LayerWeights& w, double eps = 0.0,
                        Activation act = Activation::relu()) {
    const Tensor& W1 = w.at("W1");
    detail::check_features(h, a.cols(), W1.rows(), "gin_layer");
    Tensor agg = propagate(detail::add_self_weight(a, eps), h);
    Tensor hidden = relu(add_bias(matmul(agg, W1), w.at("b1")));
    return activate(add_bias(matmul(hidden, w.at("W2")), w.at("b2")), act);
}

struct GatOutput {
    Tensor features;
    std::vector<Tensor> attention;  // one (b·m)×m row-stochastic matrix per head
};

inline GatOutput gat_layer_with_attention(const Tensor& a, const Tensor& h, const LayerWeights& w,
                                          std::size_t heads, Activation act = Activation::relu(),
                                          double slope = 0.2) {
    if (heads == 0) throw ConfigError("gat_layer: heads must be positive");
    const std::size_t m = a.cols();
    const Tensor& W0 = w.at("W0");
    detail::check_features(h, m, W0.rows(), "gat_layer");
    const std::size_t dh = W0.cols();
    GatOutput out;
    std::vector<Tensor> head_out;
    for (std::size_t k = 0; k < heads; ++k) {
        const std::string idx = std::to_string(k);
        Tensor wh = matmul(h, w.at("W" + idx));
        const Tensor& att = w.at("a" + idx);
        Tensor s = matmul(wh, slice_flat(att, 0, {dh, 1}));
        Tensor t = matmul(wh, slice_flat(att, dh, {dh, 1}));
        Tensor scores = activate(outer_sum(s, t, m), Activation::leaky_relu(slope));
        Tensor alpha = row_softmax(scores, a);
        head_out.push_back(propagate(alpha, wh));
        out.attention.push_back(alpha);
    }
    out.features = activate(heads == 1 ? head_out.front() : concat_cols(head_out), act);
    return out;
}

/// Multi-head attention over the edges of A (self-loops included), heads concatenated.
inline Tensor gat_layer(const Tensor& a, const Tensor& h, const LayerWeights& w, std::size_t heads,
                        Activation act = Activation::relu()) {
    return gat_layer_with_attention(a, h, w, heads, act).features;
}

/// act(H · W + b), row-wise.
inline Tensor mlp_layer(const Tensor& h, const LayerWeights& w, Activation act) {
    const Tensor& W = w.at("W");
    detail::require_rank2(h, "mlp_layer");
    if (h.cols() != W.rows()) {
        throw DimensionError("mlp_layer: features " + shape_string(h.shape()) + " vs weight " + shape_string(W.shape()));
    }
    return activate(add_bias(matmul(h, W), w.at("b")), act);
}

inline void check_chain(const std::vector<LayerSpec>& specs) {
    for (std::size_t i = 0; i < specs.size(); ++i) {
        specs[i].validate();
        if (i && specs[i].in_dim != specs[i - 1].out_dim) {
            throw DimensionError("layer " + std::to_string(i) + " expects width " + std::to_string(specs[i].in_dim) +
                                 " but layer " + std::to_string(i - 1) + " produces " +
                                 std::to_string(specs[i - 1].out_dim));
        }
    }
}

/// Sequential affine + activation layers.
inline Tensor mlp_forward(const Tensor& h, const std::vector<LayerSpec>& specs,
                          const std::vector<LayerWeights>& weights) {
    check_chain(specs);
    if (specs.size() != weights.size()) throw DimensionError("mlp_forward: one weight set per layer");
    Tensor x = h;
    for (std::size_t i = 0; i < specs.size(); ++i) x = mlp_layer(x, weights[i], specs[i].activation);
    return x;
}

inline Tensor apply_layer(const LayerSpec& spec, const GraphInput& graph, const Tensor& h, const LayerWeights& w) {
    switch (spec.kind) {
        case LayerKind::gcn: return gcn_layer(graph.normalized, h, w, spec.activation);
        case LayerKind::gin: return gin_layer(graph.adjacency, h, w, spec.eps, spec.activation);
        case LayerKind::gat: return gat_layer(graph.adjacency, h, w, spec.heads, spec.activation);
        case LayerKind::mlp: return mlp_layer(h, w, spec.activation);
    }
    return h;
}

/// Runs a layer stack; graph layers propagate over `graph`, mlp layers act row-wise.
inline Tensor run_stack(const std::vector<LayerSpec>& specs, const GraphInput& graph, const Tensor& h,
                        const std::vector<LayerWeights>& weights) {
    if (specs.size() != weights.size()) {
        throw DimensionError("layer stack has " + std::to_string(specs.size()) + " layers but " +
                             std::to_string(weights.size()) + " weight sets");
    }
    Tensor x = h;
    for (std::size_t i = 0; i < specs.size(); ++i) x = apply_layer(specs[i], graph, x, weights[i]);
    return x;
}

}  // namespace graphx
