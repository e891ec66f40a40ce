#pragma once

// The graph transformation model: generated encoders/decoders, union expansion,
// topology completion by link prediction, losses, training and evaluation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "graphx/dataset.hpp"
#include "graphx/hypernet.hpp"
#include "graphx/layers.hpp"
#include "graphx/metrics.hpp"
#include "graphx/optim.hpp"

namespace graphx {

enum class Ablation { full, hypergnn, hypergnn_1, hypergnn_2, single_input_eval };

inline Ablation parse_ablation(const std::string& s) {
    if (s == "full") return Ablation::full;
    if (s == "hypergnn") return Ablation::hypergnn;
    if (s == "hypergnn_1") return Ablation::hypergnn_1;
    if (s == "hypergnn_2") return Ablation::hypergnn_2;
    if (s == "single_input_eval") return Ablation::single_input_eval;
    throw ConfigError("unknown ablation '" + s + "'");
}

inline std::string ablation_name(Ablation a) {
    switch (a) {
        case Ablation::full: return "full";
        case Ablation::hypergnn: return "hypergnn";
        case Ablation::hypergnn_1: return "hypergnn_1";
        case Ablation::hypergnn_2: return "hypergnn_2";
        case Ablation::single_input_eval: return "single_input_eval";
    }
    return "full";
}

enum class LossKind { mse, mae };

struct ModelConfig {
    LayerKind gnn = LayerKind::gcn;
    std::size_t gnn_layers = 2;
    std::size_t hidden = 32;
    std::size_t latent = 32;
    std::size_t heads = 4;
    double gin_eps = 0.0;
    Activation activation = Activation::relu();
    std::size_t head_layers = 2;
    std::size_t head_hidden = 16;
    std::size_t link_layers = 2;
    std::size_t link_dim = 16;
    std::size_t hyper_hidden = 64;
    std::size_t hyper_depth = 3;
    Pooling pooling = Pooling::mean;
    double rho = 1.0;
    double tau = 0.5;
    LossKind loss = LossKind::mse;
    Ablation ablation = Ablation::full;
    // Filled from the dataset.
    std::size_t d = 1;
    std::size_t meta_dim = 1;
    std::size_t type_dims = 0;

    void validate() const {
        if (!(rho >= 0.0) || !std::isfinite(rho)) throw ConfigError("rho must be >= 0");
        if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("tau must lie in (0,1)");
        if (gnn_layers == 0 || head_layers == 0 || link_layers == 0) throw ConfigError("layer counts must be positive");
        if (gnn == LayerKind::mlp) throw ConfigError("gnn kind must be gcn, gin or gat");
        if (ablation == Ablation::hypergnn_2 && type_dims == 0) {
            throw ConfigError("hypergnn_2 needs a mode-type segment (type_dims > 0)");
        }
        if (type_dims > meta_dim) throw ConfigError("type_dims exceeds meta_dim");
        check_chain(encoder_specs());
        check_chain(decoder_specs());
        check_chain(linkpred_specs());
    }

    std::vector<LayerSpec> graph_stack(std::size_t in, std::size_t out, std::size_t layers,
                                       Activation last) const {
        std::vector<LayerSpec> specs;
        for (std::size_t i = 0; i < layers; ++i) {
            LayerSpec s;
            s.kind = gnn;
            s.in_dim = i == 0 ? in : hidden;
            s.out_dim = i + 1 == layers ? out : hidden;
            s.heads = gnn == LayerKind::gat ? heads : 1;
            s.eps = gin_eps;
            s.activation = i + 1 == layers ? last : activation;
            specs.push_back(s);
        }
        return specs;
    }

    std::vector<LayerSpec> encoder_specs() const { return graph_stack(d, latent, gnn_layers, activation); }
    std::vector<LayerSpec> decoder_gnn_specs() const { return graph_stack(latent, hidden, gnn_layers, activation); }

    std::vector<LayerSpec> head_specs() const {
        std::vector<LayerSpec> specs;
        for (std::size_t i = 0; i < head_layers; ++i) {
            LayerSpec s;
            s.kind = LayerKind::mlp;
            s.in_dim = i == 0 ? hidden : head_hidden;
            s.out_dim = i + 1 == head_layers ? d : head_hidden;
            s.activation = i + 1 == head_layers ? Activation::identity() : activation;
            specs.push_back(s);
        }
        return specs;
    }

    std::vector<LayerSpec> decoder_specs() const {
        auto specs = decoder_gnn_specs();
        auto head = head_specs();
        specs.insert(specs.end(), head.begin(), head.end());
        return specs;
    }

    /// Blocks emitted by the decoder hypernetwork (the head is trained directly under hypergnn_1).
    std::vector<LayerSpec> generated_decoder_specs() const {
        return ablation == Ablation::hypergnn_1 ? decoder_gnn_specs() : decoder_specs();
    }

    std::vector<LayerSpec> linkpred_specs() const {
        return graph_stack(d, link_dim, link_layers, Activation::identity());
    }

    std::size_t hyper_meta_dim() const { return ablation == Ablation::hypergnn_2 ? type_dims : meta_dim; }

    HyperNetOptions hyper_options() const { return {hyper_hidden, hyper_depth, Activation::tanh()}; }

    std::vector<double> hyper_meta(const std::vector<double>& meta) const {
        if (meta.size() != meta_dim) {
            throw DimensionError("meta vector of length " + std::to_string(meta.size()) + ", expected " +
                                 std::to_string(meta_dim));
        }
        return {meta.begin(), meta.begin() + static_cast<long>(hyper_meta_dim())};
    }
};

inline nlohmann::json to_json(const ModelConfig& c) {
    return {{"gnn", layer_kind_name(c.gnn)},
            {"gnn_layers", c.gnn_layers},
            {"hidden", c.hidden},
            {"latent", c.latent},
            {"heads", c.heads},
            {"gin_eps", c.gin_eps},
            {"activation", c.activation.name()},
            {"head_layers", c.head_layers},
            {"head_hidden", c.head_hidden},
            {"link_layers", c.link_layers},
            {"link_dim", c.link_dim},
            {"hyper_hidden", c.hyper_hidden},
            {"hyper_depth", c.hyper_depth},
            {"pooling", pooling_name(c.pooling)},
            {"rho", c.rho},
            {"tau", c.tau},
            {"loss", c.loss == LossKind::mse ? "mse" : "mae"},
            {"ablation", ablation_name(c.ablation)},
            {"d", c.d},
            {"meta_dim", c.meta_dim},
            {"type_dims", c.type_dims}};
}

/// Reads the keys present in `j`, leaving the rest at their current values.
inline void update_from_json(ModelConfig& c, const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("model config must be a JSON object");
    static const std::vector<std::string> known = {
        "gnn",       "gnn_layers", "hidden",      "latent", "heads", "gin_eps", "activation",
        "head_layers", "head_hidden", "link_layers", "link_dim", "hyper_hidden", "hyper_depth",
        "pooling",   "rho",        "tau",         "loss",   "ablation", "d", "meta_dim", "type_dims"};
    for (const auto& [key, _] : j.items())
        if (std::find(known.begin(), known.end(), key) == known.end())
            throw ConfigError("unknown model config key '" + key + "'");
    try {
        if (j.contains("gnn")) c.gnn = parse_layer_kind(j.at("gnn").get<std::string>());
        if (j.contains("gnn_layers")) c.gnn_layers = j.at("gnn_layers").get<std::size_t>();
        if (j.contains("hidden")) c.hidden = j.at("hidden").get<std::size_t>();
        if (j.contains("latent")) c.latent = j.at("latent").get<std::size_t>();
        if (j.contains("heads")) c.heads = j.at("heads").get<std::size_t>();
        if (j.contains("gin_eps")) c.gin_eps = j.at("gin_eps").get<double>();
        if (j.contains("activation")) c.activation = Activation::parse(j.at("activation").get<std::string>());
        if (j.contains("head_layers")) c.head_layers = j.at("head_layers").get<std::size_t>();
        if (j.contains("head_hidden")) c.head_hidden = j.at("head_hidden").get<std::size_t>();
        if (j.contains("link_layers")) c.link_layers = j.at("link_layers").get<std::size_t>();
        if (j.contains("link_dim")) c.link_dim = j.at("link_dim").get<std::size_t>();
        if (j.contains("hyper_hidden")) c.hyper_hidden = j.at("hyper_hidden").get<std::size_t>();
        if (j.contains("hyper_depth")) c.hyper_depth = j.at("hyper_depth").get<std::size_t>();
        if (j.contains("pooling")) c.pooling = parse_pooling(j.at("pooling").get<std::string>());
        if (j.contains("rho")) c.rho = j.at("rho").get<double>();
        if (j.contains("tau")) c.tau = j.at("tau").get<double>();
        if (j.contains("loss")) {
            const auto l = j.at("loss").get<std::string>();
            if (l != "mse" && l != "mae") throw ConfigError("loss must be mse or mae");
            c.loss = l == "mse" ? LossKind::mse : LossKind::mae;
        }
        if (j.contains("ablation")) c.ablation = parse_ablation(j.at("ablation").get<std::string>());
        if (j.contains("d")) c.d = j.at("d").get<std::size_t>();
        if (j.contains("meta_dim")) c.meta_dim = j.at("meta_dim").get<std::size_t>();
        if (j.contains("type_dims")) c.type_dims = j.at("type_dims").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("model config: ") + e.what());
    }
}

inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::uint64_t config_hash(const ModelConfig& c) { return fnv1a(to_json(c).dump()); }

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i, v >>= 4) out[static_cast<std::size_t>(i)] = digits[v & 0xF];
    return out;
}

/// Trainable state: γ_e, γ_d, φ, and the shared head under hypergnn_1.
struct Model {
    ModelConfig config;
    HyperNet encoder_net;
    HyperNet decoder_net;
    std::vector<LayerWeights> link;
    std::vector<LayerWeights> head;

    static Model init(const ModelConfig& config, std::uint64_t seed) {
        config.validate();
        std::mt19937_64 rng(seed);
        Model m;
        m.config = config;
        m.encoder_net = HyperNet(config.hyper_meta_dim(), build_schema(config.encoder_specs()), config.hyper_options(), rng);
        m.decoder_net =
            HyperNet(config.hyper_meta_dim(), build_schema(config.generated_decoder_specs()), config.hyper_options(), rng);
        for (const auto& s : config.linkpred_specs()) m.link.push_back(LayerWeights::init(s, rng));
        if (config.ablation == Ablation::hypergnn_1)
            for (const auto& s : config.head_specs()) m.head.push_back(LayerWeights::init(s, rng));
        return m;
    }

    /// Every parameter tensor, by name, in a fixed order.
    std::vector<std::pair<std::string, Tensor>> registry() const {
        auto out = encoder_net.named_parameters("gamma_e");
        auto dec = decoder_net.named_parameters("gamma_d");
        out.insert(out.end(), dec.begin(), dec.end());
        auto add_stack = [&out](const std::string& prefix, const std::vector<LayerWeights>& stack) {
            for (std::size_t l = 0; l < stack.size(); ++l)
                for (const auto& [name, t] : stack[l].blocks())
                    out.emplace_back(prefix + ".l" + std::to_string(l) + "." + name, t);
        };
        add_stack("phi", link);
        add_stack("head", head);
        return out;
    }

    /// Tensors the optimizer updates; γ_e stays frozen under the hypergnn ablation.
    std::vector<Tensor> trainable() const {
        std::vector<Tensor> out;
        for (const auto& [name, t] : registry()) {
            if (config.ablation == Ablation::hypergnn && name.rfind("gamma_e", 0) == 0) continue;
            out.push_back(t);
        }
        return out;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& [_, t] : registry()) n += t.size();
        return n;
    }
};

inline std::size_t stack_param_count(const std::vector<LayerSpec>& specs) {
    std::size_t n = 0;
    for (const auto& s : specs) n += layer_param_count(s);
    return n;
}

/// Size of the parameter registry, computed from shapes alone.
inline std::size_t trainable_param_count(const ModelConfig& c) {
    c.validate();
    const auto o = c.hyper_options();
    std::size_t n = HyperNet::param_count(c.hyper_meta_dim(), stack_param_count(c.encoder_specs()), o);
    n += HyperNet::param_count(c.hyper_meta_dim(), stack_param_count(c.generated_decoder_specs()), o);
    n += stack_param_count(c.linkpred_specs());
    if (c.ablation == Ablation::hypergnn_1) n += stack_param_count(c.head_specs());
    return n;
}

// ---------------------------------------------------------------------------
// Building blocks.

inline Tensor encode_mode(const ModelConfig& c, const GraphInput& graph, const Tensor& x,
                          const GeneratedWeights& w) {
    return run_stack(c.encoder_specs(), graph, x, w);
}

inline Tensor pool_embeddings(const std::vector<Tensor>& zs, Pooling kind = Pooling::mean) {
    if (zs.empty()) throw ValidationError("pool_embeddings: no input embeddings");
    return pool(zs, kind);
}

/// Decoder GNN followed by the row-wise prediction head.
inline Tensor decode_mode(const ModelConfig& c, const GraphInput& graph, const Tensor& pooled,
                          const GeneratedWeights& generated, const std::vector<LayerWeights>& shared_head = {}) {
    const auto gnn_specs = c.decoder_gnn_specs();
    const auto head = c.head_specs();
    const bool own_head = c.ablation == Ablation::hypergnn_1;
    if (generated.size() != gnn_specs.size() + (own_head ? 0 : head.size())) {
        throw DimensionError("decode_mode: generated weights do not match the decoder schema");
    }
    GeneratedWeights gw(generated.begin(), generated.begin() + static_cast<long>(gnn_specs.size()));
    Tensor h = run_stack(gnn_specs, graph, pooled, gw);
    GeneratedWeights hw = own_head ? shared_head
                                   : GeneratedWeights(generated.begin() + static_cast<long>(gnn_specs.size()),
                                                      generated.end());
    return mlp_forward(h, head, hw);
}

struct LinkScores {
    Tensor embedding;  // (b·m)×link_dim
    Tensor probs;      // (b·m)×m, sigmoid(h hᵀ) per block
};

inline LinkScores link_scores(const ModelConfig& c, const GraphInput& graph, const Tensor& x,
                              const std::vector<LayerWeights>& phi) {
    Tensor h = run_stack(c.linkpred_specs(), graph, x, phi);
    return {h, sigmoid(gram(h, graph.nodes()))};
}

/// Σ over target modes of the entrywise-mean BCE between adjacency labels and scores.
inline Tensor link_loss(const std::vector<Tensor>& labels, const std::vector<Tensor>& probs) {
    if (labels.size() != probs.size()) throw DimensionError("link_loss: one score matrix per target");
    Tensor total = Tensor::scalar(0.0);
    for (std::size_t k = 0; k < labels.size(); ++k) total = add(total, bce_loss(probs[k], labels[k]));
    return total;
}

/// Completes the topology to all p nodes: Ā = diag(Ã, I), X̄ = [X̂̃; σ₂ rest], links
/// predicted by φ and thresholded. Constant output; no gradient flows through it.
inline Tensor update_topology(const ModelConfig& c, const Tensor& a_tilde, const Tensor& x_bar, std::size_t p,
                              const std::vector<LayerWeights>& phi) {
    NoGradGuard no_grad;
    Tensor a_bar = assemble_bar_adjacency(a_tilde, p);
    auto scores = link_scores(c, GraphInput::from(a_bar), x_bar.detach(), phi);
    return binarize_edges(scores.probs, c.tau);
}

/// Rows [p̃, p) of the decoder applied on the completed graph. X̄ is lifted to the
/// latent space by the source encoders and pooled, as on the union graph.
inline Tensor predict_remaining(const ModelConfig& c, const Tensor& a_new, const Tensor& x_bar, std::size_t pt,
                                const std::vector<GeneratedWeights>& encoders, const GeneratedWeights& decoder,
                                const std::vector<LayerWeights>& shared_head = {}) {
    const std::size_t p = a_new.cols();
    if (pt > p) throw DimensionError("predict_remaining: p̃ exceeds p");
    if (pt == p) return Tensor::zeros({0, x_bar.cols()});
    GraphInput graph = GraphInput::from(a_new);
    std::vector<Tensor> zs;
    for (const auto& w : encoders) zs.push_back(encode_mode(c, graph, x_bar, w));
    Tensor decoded = decode_mode(c, graph, pool_embeddings(zs, c.pooling), decoder, shared_head);
    return slice_blocks(decoded, p, pt, p);
}

// ---------------------------------------------------------------------------
// Episode plans: the constant inputs of one episode over a fixed set of samples.

using MetaOverrides = std::map<std::string, std::vector<double>>;

struct SourceView {
    std::string mode_id;
    std::vector<double> meta;  // hypernetwork input
    GraphInput graph;          // union-expanded Ã_j
    Tensor x;                  // (n·p̃)×d expanded attributes
};

struct TargetPlan {
    std::string target;
    std::vector<double> meta;
    std::vector<SourceView> sources;  // sorted by mode id
    std::vector<std::string> node_order;  // Ṽ sorted, then the remaining nodes sorted
    std::size_t n = 0, pt = 0, p = 0, d = 0;
    GraphInput target_graph;   // Ã_k on Ṽ
    Tensor link_labels;        // Ã_k tiled over samples
    Tensor rest;               // (n·(p−p̃))×d σ₂-pooled source attributes
    Tensor truth;              // (n·p)×d in node_order
    Tensor mask;               // 1 where the target observes the attribute
    std::size_t observed = 0;
    std::vector<std::string> zero_filled;  // remaining nodes no source observes
};

struct EpisodePlan {
    Episode episode;
    std::vector<TargetPlan> targets;
};

namespace detail {

inline std::vector<double> attribute_row(const ModeGraph& m, const std::unordered_map<std::string, std::size_t>& rows,
                                         const std::string& node, std::size_t sample, bool& found) {
    auto it = rows.find(node);
    found = it != rows.end();
    std::vector<double> out(m.feature_dim(), 0.0);
    if (found)
        for (std::size_t c = 0; c < out.size(); ++c) out[c] = m.samples[sample].at(it->second, c);
    return out;
}

inline std::unordered_map<std::string, std::size_t> attr_index(const ModeGraph& m) {
    std::unordered_map<std::string, std::size_t> out;
    for (std::size_t r = 0; r < m.attr_node_ids.size(); ++r) out[m.attr_node_ids[r]] = r;
    return out;
}

}  // namespace detail

/// Source modes an episode actually feeds the model under the configured ablation.
inline std::vector<std::string> effective_sources(const ModelConfig& c, const Episode& e, bool evaluation) {
    if (e.sources.empty()) throw ValidationError("episode has no sources");
    std::vector<std::string> s = e.sources;
    if (c.ablation == Ablation::hypergnn || (evaluation && c.ablation == Ablation::single_input_eval)) s.resize(1);
    std::sort(s.begin(), s.end());
    return s;
}

inline EpisodePlan plan_episode(const Dataset& ds, const Episode& episode, const ModelConfig& c, bool evaluation = false,
                                const MetaOverrides& overrides = {}) {
    episode.validate();
    if (ds.d != c.d) throw ConfigError("dataset feature width differs from model config");
    if (ds.n == 0) throw ValidationError("episode over an empty sample set");
    auto meta_of = [&](const ModeGraph& m) {
        auto it = overrides.find(m.id());
        return c.hyper_meta(it == overrides.end() ? m.spec.meta : it->second);
    };
    const auto source_ids = effective_sources(c, episode, evaluation);
    std::vector<const ModeGraph*> sources;
    for (const auto& id : source_ids) sources.push_back(&ds.mode(id));
    EpisodePlan plan{episode, {}};
    for (const auto& tid : episode.targets) {
        const ModeGraph& target = ds.mode(tid);
        auto u = expand_to_union(sources, target);
        TargetPlan t;
        t.target = tid;
        t.meta = meta_of(target);
        t.n = ds.n;
        t.d = ds.d;
        t.pt = u.node_ids.size();
        t.p = ds.universe.size();
        t.node_order = u.node_ids;
        for (const auto& v : ds.universe)
            if (!std::binary_search(u.node_ids.begin(), u.node_ids.end(), v)) t.node_order.push_back(v);
        for (std::size_t j = 0; j < sources.size(); ++j) {
            SourceView s;
            s.mode_id = sources[j]->id();
            s.meta = meta_of(*sources[j]);
            s.graph = GraphInput::from(u.inputs[j].adjacency);
            s.x = concat_rows(u.inputs[j].samples);
            t.sources.push_back(std::move(s));
        }
        t.target_graph = GraphInput::from(u.target.adjacency);
        t.link_labels = tile_rows(u.target.adjacency, ds.n);

        // σ₂ inputs: each source's attributes over node_order, present where observed.
        std::vector<std::vector<bool>> presence(sources.size(), std::vector<bool>(t.p, false));
        std::vector<std::vector<Tensor>> full(sources.size());
        for (std::size_t j = 0; j < sources.size(); ++j) {
            const auto rows = detail::attr_index(*sources[j]);
            for (std::size_t i = 0; i < ds.n; ++i) {
                Tensor x = Tensor::zeros({t.p, t.d});
                for (std::size_t r = 0; r < t.p; ++r) {
                    bool found = false;
                    auto row = detail::attribute_row(*sources[j], rows, t.node_order[r], i, found);
                    presence[j][r] = found;
                    for (std::size_t col = 0; col < t.d; ++col) x.at(r, col) = row[col];
                }
                full[j].push_back(std::move(x));
            }
        }
        std::vector<Tensor> rest_blocks;
        for (std::size_t i = 0; i < ds.n; ++i) {
            std::vector<Tensor> inputs;
            for (std::size_t j = 0; j < sources.size(); ++j) inputs.push_back(full[j][i]);
            std::vector<std::size_t> zero_rows;
            rest_blocks.push_back(remaining_attributes(t.pt, inputs, presence, &zero_rows));
            if (i == 0)
                for (auto r : zero_rows) t.zero_filled.push_back(t.node_order[r]);
        }
        t.rest = t.p > t.pt ? concat_rows(rest_blocks) : Tensor::zeros({0, t.d});

        const auto trows = detail::attr_index(target);
        std::vector<double> truth(t.n * t.p * t.d, 0.0), mask(t.n * t.p * t.d, 0.0);
        for (std::size_t i = 0; i < t.n; ++i)
            for (std::size_t r = 0; r < t.p; ++r) {
                bool found = false;
                auto row = detail::attribute_row(target, trows, t.node_order[r], i, found);
                if (!found) continue;
                for (std::size_t col = 0; col < t.d; ++col) {
                    truth[(i * t.p + r) * t.d + col] = row[col];
                    mask[(i * t.p + r) * t.d + col] = 1.0;
                    ++t.observed;
                }
            }
        if (t.observed == 0) throw ValidationError("target mode '" + tid + "' has no observed attributes");
        t.truth = Tensor({t.n * t.p, t.d}, std::move(truth));
        t.mask = Tensor({t.n * t.p, t.d}, std::move(mask));
        plan.targets.push_back(std::move(t));
    }
    return plan;
}

// ---------------------------------------------------------------------------
// Forward pass and losses.

struct TargetOutput {
    std::string target;
    std::vector<std::string> node_order;
    std::size_t pt = 0;
    Tensor prediction;          // (n·p)×d, rows in node_order
    Tensor prediction_tilde;    // (n·p̃)×d
    LinkScores link;            // on Ã_k
    Tensor updated_adjacency;   // (n·p)×p, empty when p̃ = p
    Tensor l1;
    Tensor l2;
};

struct EpisodeOutput {
    std::vector<TargetOutput> targets;
    Tensor l1;  // mean over targets
    Tensor l2;  // sum over targets
};

struct LossReport {
    double l1 = 0.0;
    double l2 = 0.0;
    double total = 0.0;
};

/// Prediction loss restricted to observed entries.
inline Tensor prediction_loss(const ModelConfig& c, const Tensor& pred, const TargetPlan& t) {
    const bool full = t.observed == t.truth.size();
    Tensor p = full ? pred : mul(pred, t.mask);
    Tensor y = full ? t.truth : mul(t.truth, t.mask);
    Tensor l = c.loss == LossKind::mse ? mse_loss(p, y) : mae_loss(p, y);
    return full ? l : scale(l, static_cast<double>(t.truth.size()) / static_cast<double>(t.observed));
}

inline TargetOutput forward_target(const Model& m, const TargetPlan& t) {
    const ModelConfig& c = m.config;
    TargetOutput out;
    out.target = t.target;
    out.node_order = t.node_order;
    out.pt = t.pt;
    std::vector<GeneratedWeights> encoders;
    std::vector<Tensor> zs;
    for (const auto& s : t.sources) {
        encoders.push_back(m.encoder_net.generate(s.meta));
        zs.push_back(encode_mode(c, s.graph, s.x, encoders.back()));
    }
    GeneratedWeights decoder = m.decoder_net.generate(t.meta);
    Tensor pooled = pool_embeddings(zs, c.pooling);
    out.prediction_tilde = decode_mode(c, t.target_graph, pooled, decoder, m.head);
    out.link = link_scores(c, t.target_graph, out.prediction_tilde, m.link);
    out.l2 = bce_loss(out.link.probs, t.link_labels);
    if (t.p > t.pt) {
        Tensor x_bar = concat_blocks(out.prediction_tilde, t.pt, t.rest, t.p - t.pt);
        out.updated_adjacency = update_topology(c, t.target_graph.adjacency, x_bar, t.p, m.link);
        Tensor rest = predict_remaining(c, out.updated_adjacency, x_bar, t.pt, encoders, decoder, m.head);
        out.prediction = concat_blocks(out.prediction_tilde, t.pt, rest, t.p - t.pt);
    } else {
        out.prediction = out.prediction_tilde;
    }
    out.l1 = prediction_loss(c, out.prediction, t);
    return out;
}

inline EpisodeOutput forward_episode(const Model& m, const EpisodePlan& plan) {
    EpisodeOutput out;
    Tensor l1 = Tensor::scalar(0.0), l2 = Tensor::scalar(0.0);
    for (const auto& t : plan.targets) {
        out.targets.push_back(forward_target(m, t));
        l1 = add(l1, out.targets.back().l1);
        l2 = add(l2, out.targets.back().l2);
    }
    out.l1 = scale(l1, 1.0 / static_cast<double>(plan.targets.size()));
    out.l2 = l2;
    return out;
}

inline LossReport total_loss(double l1, double l2, double rho) {
    if (rho < 0) throw ConfigError("rho must be >= 0");
    return {l1, l2, l1 + rho * l2};
}

/// Mean over episodes of l1 + ρ·l2, as a taped scalar, with its parts.
struct ObjectiveValue {
    Tensor total;
    LossReport report;
};

inline ObjectiveValue objective(const Model& m, const std::vector<EpisodePlan>& plans) {
    if (plans.empty()) throw ValidationError("no training episodes");
    Tensor l1 = Tensor::scalar(0.0), l2 = Tensor::scalar(0.0);
    for (const auto& p : plans) {
        auto out = forward_episode(m, p);
        l1 = add(l1, out.l1);
        l2 = add(l2, out.l2);
    }
    const double inv = 1.0 / static_cast<double>(plans.size());
    l1 = scale(l1, inv);
    l2 = scale(l2, inv);
    Tensor total = m.config.rho == 0.0 ? l1 : add(l1, scale(l2, m.config.rho));
    return {total, total_loss(l1.item(), l2.item(), m.config.rho)};
}

// ---------------------------------------------------------------------------
// Training.

struct TrainOptions {
    std::size_t max_steps = 2000;
    double learning_rate = 1e-3;
    double tolerance = 1e-6;
    std::size_t window = 50;
    std::string optimizer = "adam";
};

struct HistoryRow {
    std::size_t step = 0;
    double l1 = 0.0, l2 = 0.0, total = 0.0;
};

struct TrainResult {
    std::vector<HistoryRow> history;  // loss before each update
    std::size_t steps = 0;
    bool converged = false;
    LossReport final_loss;  // after the last update
};

inline TrainResult train(Model& m, const std::vector<EpisodePlan>& plans, const TrainOptions& o) {
    if (o.optimizer != "adam" && o.optimizer != "sgd") throw ConfigError("optimizer must be adam or sgd");
    if (o.learning_rate < 0) throw ConfigError("learning rate must be >= 0");
    auto params = m.trainable();
    AdamState adam;
    adam.options.learning_rate = o.learning_rate;
    Sgd sgd(params, o.learning_rate);
    TrainResult result;
    for (std::size_t step = 0; step < o.max_steps; ++step) {
        for (auto& p : params) p.zero_grad();
        auto obj = objective(m, plans);
        if (!std::isfinite(obj.report.total)) {
            throw DivergenceError("loss became non-finite at step " + std::to_string(step) + " (l1=" +
                                  std::to_string(obj.report.l1) + ", l2=" + std::to_string(obj.report.l2) + ")");
        }
        result.history.push_back({step, obj.report.l1, obj.report.l2, obj.report.total});
        obj.total.backward();
        if (o.optimizer == "adam") {
            std::vector<std::vector<double>> grads;
            for (const auto& p : params) grads.push_back(p.grad());
            adam_step(params, grads, adam);
        } else {
            sgd.step();
        }
        ++result.steps;
        if (result.history.size() > o.window) {
            const double before = result.history[result.history.size() - 1 - o.window].total;
            const double now = result.history.back().total;
            if (std::abs(now - before) <= o.tolerance * std::max(std::abs(before), 1e-300)) {
                result.converged = true;
                break;
            }
        }
    }
    for (auto& p : params) p.zero_grad();
    NoGradGuard no_grad;
    result.final_loss = objective(m, plans).report;
    if (!std::isfinite(result.final_loss.total)) throw DivergenceError("loss became non-finite after training");
    return result;
}

// ---------------------------------------------------------------------------
// Evaluation.

struct TargetMetrics {
    std::string target;
    double mse = 0.0;
    double pcc = 0.0;
    bool pcc_defined = false;
    std::vector<double> generalization_error;  // ‖ε_i‖² per sample over observed entries
    double mean_generalization_error = 0.0;
};

struct EpisodeMetrics {
    std::string episode;
    std::vector<TargetMetrics> targets;
    LossReport loss;
};

inline TargetMetrics score_target(const TargetOutput& out, const TargetPlan& t) {
    TargetMetrics r;
    r.target = t.target;
    std::vector<double> pred, truth;
    r.generalization_error.assign(t.n, 0.0);
    const std::size_t per_sample = t.p * t.d;
    for (std::size_t k = 0; k < t.truth.size(); ++k) {
        if (t.mask[k] == 0.0) continue;
        pred.push_back(out.prediction[k]);
        truth.push_back(t.truth[k]);
        const double e = out.prediction[k] - t.truth[k];
        r.generalization_error[k / per_sample] += e * e;
    }
    r.mse = mse_metric(pred, truth);
    if (pred.size() >= 2) {
        auto pc = pcc_metric(pred, truth);
        r.pcc = pc.value;
        r.pcc_defined = pc.defined;
    }
    double s = 0.0;
    for (double e : r.generalization_error) s += e;
    r.mean_generalization_error = s / static_cast<double>(t.n);
    return r;
}

inline EpisodeMetrics evaluate(const Model& m, const EpisodePlan& plan) {
    NoGradGuard no_grad;
    auto out = forward_episode(m, plan);
    EpisodeMetrics r;
    r.episode = plan.episode.to_string();
    for (std::size_t k = 0; k < plan.targets.size(); ++k) r.targets.push_back(score_target(out.targets[k], plan.targets[k]));
    r.loss = total_loss(out.l1.item(), out.l2.item(), m.config.rho);
    return r;
}

/// Frozen-parameter evaluation of an episode, typically one never trained on.
inline EpisodeMetrics generalize(const Model& m, const Dataset& ds, const Episode& unseen,
                                 const MetaOverrides& overrides = {}) {
    for (const auto& id : unseen.targets)
        if (ds.mode(id).spec.meta.empty()) throw ValidationError("mode '" + id + "' has no meta vector");
    return evaluate(m, plan_episode(ds, unseen, m.config, true, overrides));
}

}  // namespace graphx
