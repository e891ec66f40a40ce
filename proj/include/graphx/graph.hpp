#pragma once

// Mode graphs, union expansion over node sets, and the block / concatenation
// assemblies used when completing a target topology to the full node universe.

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "graphx/tensor.hpp"

namespace graphx {

struct ModeSpec {
    std::string mode_id;
    std::vector<double> meta;
    std::vector<std::string> node_ids;  // graph node set, in adjacency order
};

/// One mode: a fixed topology plus n aligned attribute samples.
///
/// Attribute rows are keyed by `attr_node_ids`, which may extend beyond the graph's
/// own node set (attributes observed for nodes the mode's network leaves out).
struct ModeGraph {
    ModeSpec spec;
    Tensor adjacency;                        // p_j × p_j, symmetric 0/1, unit diagonal
    std::vector<std::string> attr_node_ids;  // row keys of every sample
    std::vector<Tensor> samples;             // each |attr_node_ids| × d

    const std::string& id() const { return spec.mode_id; }
    std::size_t num_nodes() const { return spec.node_ids.size(); }
    std::size_t num_samples() const { return samples.size(); }
    std::size_t feature_dim() const { return samples.empty() ? 0 : samples.front().cols(); }

    /// Row index of `node` in the attribute table, or -1 when unobserved.
    long attr_row(const std::string& node) const {
        auto it = std::find(attr_node_ids.begin(), attr_node_ids.end(), node);
        return it == attr_node_ids.end() ? -1 : static_cast<long>(it - attr_node_ids.begin());
    }

    void validate() const;
};

inline void validate_adjacency(const Tensor& a, const std::string& what) {
    if (a.rank() != 2 || a.rows() != a.cols()) {
        throw ValidationError(what + ": adjacency must be square, got " + shape_string(a.shape()));
    }
    const std::size_t n = a.rows();
    for (std::size_t i = 0; i < n; ++i) {
        if (a.at(i, i) != 1.0) throw ValidationError(what + ": missing self-loop at node " + std::to_string(i));
        for (std::size_t j = 0; j < n; ++j) {
            const double v = a.at(i, j);
            if (v != 0.0 && v != 1.0) throw ValidationError(what + ": adjacency entries must be 0/1");
            if (v != a.at(j, i)) throw ValidationError(what + ": adjacency is not symmetric");
        }
    }
}

inline void ModeGraph::validate() const {
    const std::string what = "mode '" + spec.mode_id + "'";
    std::set<std::string> seen(spec.node_ids.begin(), spec.node_ids.end());
    if (seen.size() != spec.node_ids.size()) throw ValidationError(what + ": duplicate node ids");
    std::set<std::string> attr_seen(attr_node_ids.begin(), attr_node_ids.end());
    if (attr_seen.size() != attr_node_ids.size()) throw ValidationError(what + ": duplicate attribute node ids");
    if (adjacency.rows() != spec.node_ids.size()) {
        throw ValidationError(what + ": adjacency size " + shape_string(adjacency.shape()) +
                              " does not match " + std::to_string(spec.node_ids.size()) + " nodes");
    }
    validate_adjacency(adjacency, what);
    for (const auto& s : samples) {
        if (s.rank() != 2 || s.rows() != attr_node_ids.size() || s.cols() != feature_dim()) {
            throw ValidationError(what + ": sample shape " + shape_string(s.shape()) +
                                  " inconsistent with " + std::to_string(attr_node_ids.size()) + " attribute rows");
        }
        if (!all_finite(s)) throw ValidationError(what + ": non-finite attribute value");
    }
}

struct Episode {
    enum class Phase { train, generalize };
    std::vector<std::string> sources;
    std::vector<std::string> targets;
    Phase phase = Phase::train;

    void validate() const {
        if (sources.empty() || targets.empty()) throw ValidationError("episode needs sources and targets");
        std::set<std::string> s(sources.begin(), sources.end());
        for (const auto& t : targets)
            if (s.count(t)) throw ValidationError("episode mode '" + t + "' is both source and target");
    }

    /// Parses "A,B->C,D".
    static Episode parse(const std::string& text, Phase phase = Phase::train) {
        const auto arrow = text.find("->");
        if (arrow == std::string::npos) throw ConfigError("episode '" + text + "' lacks '->'");
        auto split = [](const std::string& s) {
            std::vector<std::string> out;
            std::size_t start = 0;
            while (start <= s.size()) {
                const auto comma = s.find(',', start);
                const auto end = comma == std::string::npos ? s.size() : comma;
                std::string item = s.substr(start, end - start);
                item.erase(0, item.find_first_not_of(" \t"));
                item.erase(item.find_last_not_of(" \t") + 1);
                if (!item.empty()) out.push_back(item);
                if (comma == std::string::npos) break;
                start = comma + 1;
            }
            return out;
        };
        Episode e{split(text.substr(0, arrow)), split(text.substr(arrow + 2)), phase};
        e.validate();
        return e;
    }

    std::string to_string() const {
        std::string out;
        for (std::size_t i = 0; i < sources.size(); ++i) out += (i ? "," : "") + sources[i];
        out += "->";
        for (std::size_t i = 0; i < targets.size(); ++i) out += (i ? "," : "") + targets[i];
        return out;
    }
};

/// A mode embedded into a union node set.
struct ExpandedGraph {
    std::vector<std::string> node_ids;     // union node list, canonical order
    Tensor adjacency;                      // p̃ × p̃
    std::vector<Tensor> samples;           // each p̃ × d, zero rows at absent nodes
    std::vector<bool> presence;            // true at the original mode's graph nodes
    std::vector<std::size_t> embedding;    // original node index → union row

    std::size_t size() const { return node_ids.size(); }
};

struct UnionExpansion {
    std::vector<std::string> node_ids;
    std::vector<ExpandedGraph> inputs;
    ExpandedGraph target;
};

namespace detail {

inline ExpandedGraph embed_mode(const ModeGraph& mode, const std::vector<std::string>& union_ids,
                                const std::unordered_map<std::string, std::size_t>& index) {
    const std::size_t pt = union_ids.size();
    ExpandedGraph g;
    g.node_ids = union_ids;
    g.adjacency = Tensor::identity(pt);
    g.presence.assign(pt, false);
    g.embedding.resize(mode.num_nodes());
    for (std::size_t u = 0; u < mode.num_nodes(); ++u) {
        g.embedding[u] = index.at(mode.spec.node_ids[u]);
        g.presence[g.embedding[u]] = true;
    }
    for (std::size_t u = 0; u < mode.num_nodes(); ++u)
        for (std::size_t v = 0; v < mode.num_nodes(); ++v)
            g.adjacency.at(g.embedding[u], g.embedding[v]) = mode.adjacency.at(u, v);
    const std::size_t d = mode.feature_dim();
    std::unordered_map<std::string, long> attr_index;
    for (std::size_t r = 0; r < mode.attr_node_ids.size(); ++r) attr_index[mode.attr_node_ids[r]] = static_cast<long>(r);
    std::vector<long> attr_rows(mode.num_nodes(), -1);
    for (std::size_t u = 0; u < mode.num_nodes(); ++u) {
        auto it = attr_index.find(mode.spec.node_ids[u]);
        if (it != attr_index.end()) attr_rows[u] = it->second;
    }
    for (const auto& sample : mode.samples) {
        Tensor x = Tensor::zeros({pt, d});
        for (std::size_t u = 0; u < mode.num_nodes(); ++u) {
            if (attr_rows[u] < 0) continue;
            for (std::size_t c = 0; c < d; ++c)
                x.at(g.embedding[u], c) = sample.at(static_cast<std::size_t>(attr_rows[u]), c);
        }
        g.samples.push_back(std::move(x));
    }
    return g;
}

}  // namespace detail

/// Embeds every input mode and the target into Ṽ = (∪ V^(j)) ∪ V^(k), sorted by node id.
///
/// Nodes a mode lacks become self-loop-only rows with zero attributes.
inline UnionExpansion expand_to_union(const std::vector<const ModeGraph*>& inputs,
                                      const ModeGraph& target) {
    std::set<std::string> ids(target.spec.node_ids.begin(), target.spec.node_ids.end());
    for (const auto* m : inputs) ids.insert(m->spec.node_ids.begin(), m->spec.node_ids.end());
    if (ids.empty()) throw ValidationError("expand_to_union: union of node sets is empty");
    UnionExpansion out;
    out.node_ids.assign(ids.begin(), ids.end());
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < out.node_ids.size(); ++i) index[out.node_ids[i]] = i;
    for (const auto* m : inputs) out.inputs.push_back(detail::embed_mode(*m, out.node_ids, index));
    out.target = detail::embed_mode(target, out.node_ids, index);
    return out;
}

inline UnionExpansion expand_to_union(const std::vector<ModeGraph>& inputs, const ModeGraph& target) {
    std::vector<const ModeGraph*> ptrs;
    for (const auto& m : inputs) ptrs.push_back(&m);
    return expand_to_union(ptrs, target);
}

/// Symmetric normalization D^(-1/2) A D^(-1/2); accepts stacked (b·m)×m blocks.
inline Tensor normalize_adjacency(const Tensor& a) {
    detail::require_rank2(a, "normalize_adjacency");
    const std::size_t m = a.cols();
    const std::size_t b = detail::block_count(a, m, "normalize_adjacency");
    std::vector<double> out(a.size());
    std::vector<double> inv_sqrt(m);
    for (std::size_t blk = 0; blk < b; ++blk) {
        const double* ab = a.values().data() + blk * m * m;
        for (std::size_t i = 0; i < m; ++i) {
            double deg = 0.0;
            for (std::size_t j = 0; j < m; ++j) deg += ab[i * m + j];
            if (deg <= 0.0) throw ValidationError("normalize_adjacency: node " + std::to_string(i) + " has zero degree");
            inv_sqrt[i] = 1.0 / std::sqrt(deg);
        }
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < m; ++j)
                out[blk * m * m + i * m + j] = inv_sqrt[i] * ab[i * m + j] * inv_sqrt[j];
    }
    return Tensor(a.shape(), std::move(out));
}

/// Block diagonal [[Ã, 0], [0, I]] of size p.
inline Tensor assemble_bar_adjacency(const Tensor& a_tilde, std::size_t p) {
    detail::require_rank2(a_tilde, "assemble_bar_adjacency");
    const std::size_t pt = a_tilde.rows();
    if (a_tilde.cols() != pt) throw DimensionError("assemble_bar_adjacency: Ã must be square");
    if (p < pt) {
        throw DimensionError("assemble_bar_adjacency: p=" + std::to_string(p) + " < p̃=" + std::to_string(pt));
    }
    Tensor out = Tensor::identity(p);
    for (std::size_t i = 0; i < pt; ++i)
        for (std::size_t j = 0; j < pt; ++j) out.at(i, j) = a_tilde.at(i, j);
    return out;
}

/// Remaining-node rows for X̄: per row r ∈ [p̃, p), the mean over input modes with
/// presence[j][r] of input_attrs[j] row r. Rows no input covers stay zero and are
/// reported through `zero_filled`.
inline Tensor remaining_attributes(std::size_t pt, const std::vector<Tensor>& input_attrs,
                                   const std::vector<std::vector<bool>>& presence,
                                   std::vector<std::size_t>* zero_filled = nullptr) {
    if (input_attrs.empty()) throw ValidationError("assemble_bar_attributes: no input modes");
    if (presence.size() != input_attrs.size()) throw DimensionError("assemble_bar_attributes: one mask per input mode");
    const std::size_t p = input_attrs.front().rows(), d = input_attrs.front().cols();
    if (pt > p) throw DimensionError("assemble_bar_attributes: p̃ exceeds p");
    for (std::size_t j = 0; j < input_attrs.size(); ++j) {
        if (input_attrs[j].rows() != p || input_attrs[j].cols() != d || presence[j].size() != p) {
            throw DimensionError("assemble_bar_attributes: input modes disagree on shape");
        }
    }
    Tensor rest = Tensor::zeros({p - pt, d});
    for (std::size_t r = pt; r < p; ++r) {
        std::size_t count = 0;
        for (std::size_t j = 0; j < input_attrs.size(); ++j) {
            if (!presence[j][r]) continue;
            ++count;
            for (std::size_t c = 0; c < d; ++c) rest.at(r - pt, c) += input_attrs[j].at(r, c);
        }
        if (count == 0) {
            if (zero_filled) zero_filled->push_back(r);
            continue;
        }
        for (std::size_t c = 0; c < d; ++c) rest.at(r - pt, c) /= static_cast<double>(count);
    }
    return rest;
}

/// X̄ = [X̂̃; σ₂-pooled input attributes of the remaining nodes].
inline Tensor assemble_bar_attributes(const Tensor& pred_tilde, const std::vector<Tensor>& input_attrs,
                                      const std::vector<std::vector<bool>>& presence,
                                      std::vector<std::size_t>* zero_filled = nullptr) {
    Tensor rest = remaining_attributes(pred_tilde.rows(), input_attrs, presence, zero_filled);
    if (pred_tilde.cols() != rest.cols()) throw DimensionError("assemble_bar_attributes: feature width mismatch");
    if (rest.rows() == 0) return pred_tilde;
    return concat_rows({pred_tilde, rest});
}

/// Edge iff (P + Pᵀ)/2 ≥ τ, diagonal forced to 1. Accepts stacked (b·m)×m blocks.
inline Tensor binarize_edges(const Tensor& probs, double tau) {
    if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("binarize_edges: threshold must lie in (0,1), got " + std::to_string(tau));
    detail::require_rank2(probs, "binarize_edges");
    const std::size_t m = probs.cols();
    const std::size_t b = detail::block_count(probs, m, "binarize_edges");
    std::vector<double> out(probs.size());
    for (std::size_t blk = 0; blk < b; ++blk) {
        const double* pb = probs.values().data() + blk * m * m;
        double* ob = out.data() + blk * m * m;
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < m; ++j)
                ob[i * m + j] = (i == j || 0.5 * (pb[i * m + j] + pb[j * m + i]) >= tau) ? 1.0 : 0.0;
    }
    return Tensor(probs.shape(), std::move(out));
}

/// Rows and columns reordered so that out[k][l] = m[perm[k]][perm[l]].
inline Tensor permute_matrix(const Tensor& m, const std::vector<std::size_t>& perm) {
    const std::size_t n = perm.size();
    if (m.rows() != n || m.cols() != n) throw DimensionError("permute_matrix: size mismatch");
    Tensor out = Tensor::zeros({n, n});
    for (std::size_t k = 0; k < n; ++k)
        for (std::size_t l = 0; l < n; ++l) out.at(k, l) = m.at(perm[k], perm[l]);
    return out;
}

/// Row k of the result is row perm[k] of `m`.
inline Tensor permute_rows(const Tensor& m, const std::vector<std::size_t>& perm) {
    if (m.rows() != perm.size()) throw DimensionError("permute_rows: size mismatch");
    const std::size_t c = m.cols();
    std::vector<double> out(m.size());
    for (std::size_t k = 0; k < perm.size(); ++k)
        std::copy_n(m.values().data() + perm[k] * c, c, out.data() + k * c);
    return Tensor(m.shape(), std::move(out));
}

inline void require_permutation(const std::vector<std::size_t>& perm, std::size_t n) {
    if (perm.size() != n) throw ValidationError("permutation has wrong length");
    std::vector<bool> hit(n, false);
    for (auto v : perm) {
        if (v >= n || hit[v]) throw ValidationError("permutation is not a bijection");
        hit[v] = true;
    }
}

inline std::vector<std::size_t> invert_permutation(const std::vector<std::size_t>& perm) {
    std::vector<std::size_t> inv(perm.size());
    for (std::size_t k = 0; k < perm.size(); ++k) inv[perm[k]] = k;
    return inv;
}

/// Relabels graph node positions: new node k is old node perm[k].
///
/// Attribute rows keyed by the graph's own node order move with it; rows keyed by a
/// separate list are id-addressed and stay put.
inline ModeGraph permute_graph(const ModeGraph& g, const std::vector<std::size_t>& perm) {
    require_permutation(perm, g.num_nodes());
    ModeGraph out;
    out.spec = g.spec;
    for (std::size_t k = 0; k < perm.size(); ++k) out.spec.node_ids[k] = g.spec.node_ids[perm[k]];
    out.adjacency = permute_matrix(g.adjacency, perm);
    if (g.attr_node_ids == g.spec.node_ids) {
        out.attr_node_ids = out.spec.node_ids;
        for (const auto& s : g.samples) out.samples.push_back(permute_rows(s, perm));
    } else {
        out.attr_node_ids = g.attr_node_ids;
        out.samples = g.samples;
    }
    return out;
}

inline std::size_t edge_count(const Tensor& a) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = i + 1; j < a.cols(); ++j)
            if (a.at(i, j) != 0.0) ++n;
    return n;
}

}  // namespace graphx
