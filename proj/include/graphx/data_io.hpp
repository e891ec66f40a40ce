#pragma once

// Dataset persistence (JSON), the synthetic mode-family generator, correlation
// graphs from time series, and CSV ingestion.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "graphx/dataset.hpp"

namespace graphx {

inline constexpr int kDatasetSchemaVersion = 1;

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json dataset_to_json(const Dataset& ds) {
    ds.validate();
    nlohmann::json j;
    j["schema_version"] = kDatasetSchemaVersion;
    j["universe"] = ds.universe;
    j["n"] = ds.n;
    j["d"] = ds.d;
    j["meta_dim"] = ds.meta_dim;
    j["type_dims"] = ds.type_dims;
    j["meta_encoding"] = ds.meta_encoding;
    j["modes"] = nlohmann::json::array();
    for (const auto& m : ds.modes) {
        nlohmann::json jm;
        jm["mode_id"] = m.id();
        jm["meta"] = m.spec.meta;
        jm["node_ids"] = m.spec.node_ids;
        if (m.attr_node_ids != m.spec.node_ids) jm["attr_node_ids"] = m.attr_node_ids;
        nlohmann::json pairs = nlohmann::json::array();
        for (std::size_t u = 0; u < m.num_nodes(); ++u)
            for (std::size_t v = u + 1; v < m.num_nodes(); ++v)
                if (m.adjacency.at(u, v) == 1.0) pairs.push_back({u, v});
        jm["adjacency"] = {{"format", "pairs"}, {"pairs", pairs}};
        std::vector<double> data;
        data.reserve(ds.n * m.attr_node_ids.size() * ds.d);
        for (const auto& s : m.samples) data.insert(data.end(), s.values().begin(), s.values().end());
        jm["samples"] = {{"shape", {ds.n, m.attr_node_ids.size(), ds.d}}, {"data", data}};
        j["modes"].push_back(std::move(jm));
    }
    return j;
}

inline Dataset dataset_from_json(const nlohmann::json& j) {
    try {
        if (!j.is_object()) throw ValidationError("dataset: top level must be an object");
        if (!j.contains("schema_version")) throw ValidationError("dataset: missing schema_version");
        const int version = j.at("schema_version").get<int>();
        if (version != kDatasetSchemaVersion) {
            throw ValidationError("dataset: schema_version " + std::to_string(version) + " is not supported (expected " +
                                  std::to_string(kDatasetSchemaVersion) + ")");
        }
        Dataset ds;
        ds.universe = j.at("universe").get<std::vector<std::string>>();
        ds.d = j.at("d").get<std::size_t>();
        ds.meta_dim = j.at("meta_dim").get<std::size_t>();
        ds.type_dims = j.value("type_dims", std::size_t{0});
        ds.meta_encoding = j.value("meta_encoding", std::string{});
        const auto& modes = j.at("modes");
        ds.n = j.contains("n") ? j.at("n").get<std::size_t>()
                               : (modes.empty() ? 0 : modes.front().at("samples").at("shape")[0].get<std::size_t>());
        for (const auto& jm : modes) {
            ModeGraph m;
            m.spec.mode_id = jm.at("mode_id").get<std::string>();
            m.spec.meta = jm.at("meta").get<std::vector<double>>();
            m.spec.node_ids = jm.at("node_ids").get<std::vector<std::string>>();
            m.attr_node_ids = jm.contains("attr_node_ids") ? jm.at("attr_node_ids").get<std::vector<std::string>>()
                                                           : m.spec.node_ids;
            const std::size_t pj = m.spec.node_ids.size();
            m.adjacency = Tensor::identity(pj);
            const auto& adj = jm.at("adjacency");
            const std::string format = adj.at("format").get<std::string>();
            if (format == "pairs") {
                for (const auto& pr : adj.at("pairs")) {
                    const auto u = pr.at(0).get<std::size_t>(), v = pr.at(1).get<std::size_t>();
                    if (u >= pj || v >= pj) throw ValidationError("mode '" + m.id() + "': edge index out of range");
                    m.adjacency.at(u, v) = m.adjacency.at(v, u) = 1.0;
                }
            } else if (format == "bits") {
                const auto bits = adj.at("bits").get<std::string>();
                if (bits.size() != pj * pj) throw ValidationError("mode '" + m.id() + "': adjacency bit string has wrong length");
                for (std::size_t k = 0; k < bits.size(); ++k) {
                    if (bits[k] != '0' && bits[k] != '1') throw ValidationError("mode '" + m.id() + "': adjacency bits must be 0/1");
                    m.adjacency.at(k / pj, k % pj) = bits[k] == '1' ? 1.0 : 0.0;
                }
            } else {
                throw ValidationError("mode '" + m.id() + "': unknown adjacency format '" + format + "'");
            }
            const auto shape = jm.at("samples").at("shape").get<std::vector<std::size_t>>();
            const auto data = jm.at("samples").at("data").get<std::vector<double>>();
            if (shape.size() != 3 || shape[0] != ds.n || shape[1] != m.attr_node_ids.size() || shape[2] != ds.d) {
                throw ValidationError("mode '" + m.id() + "': samples shape does not match n, attribute nodes and d");
            }
            if (data.size() != shape[0] * shape[1] * shape[2]) {
                throw ValidationError("mode '" + m.id() + "': samples data length does not match its shape");
            }
            const std::size_t block = shape[1] * shape[2];
            for (std::size_t i = 0; i < ds.n; ++i)
                m.samples.emplace_back(Shape{shape[1], shape[2]},
                                       std::vector<double>(data.begin() + static_cast<long>(i * block),
                                                           data.begin() + static_cast<long>((i + 1) * block)));
            ds.modes.push_back(std::move(m));
        }
        ds.validate();
        return ds;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("dataset: malformed field: ") + e.what());
    }
}

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot write '" + path + "'");
    f << text;
    if (!f) throw ValidationError("failed writing '" + path + "'");
}

inline std::string read_text(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot read '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

inline nlohmann::json parse_json(const std::string& text, const std::string& what) {
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(what + ": " + e.what());
    }
}

inline void save_dataset(const Dataset& ds, const std::string& path) { write_text(path, dataset_to_json(ds).dump(1) + "\n"); }

inline Dataset load_dataset(const std::string& path) {
    return dataset_from_json(parse_json(read_text(path), "dataset '" + path + "'"));
}

// ---------------------------------------------------------------------------
// Splits

struct DatasetSplit {
    std::vector<std::size_t> train, val, test;
};

inline DatasetSplit split_indices(std::size_t n, const std::vector<double>& ratios, std::uint64_t seed) {
    if (ratios.size() != 3) throw ConfigError("split ratios need three entries (train, val, test)");
    double total = 0.0;
    for (double r : ratios) {
        if (r < 0 || !std::isfinite(r)) throw ConfigError("split ratios must be non-negative");
        total += r;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::llround(ratios[0] * static_cast<double>(n)));
    const auto n_val = std::min(n - std::min(n, n_train), static_cast<std::size_t>(std::llround(ratios[1] * static_cast<double>(n))));
    DatasetSplit s;
    s.train.assign(idx.begin(), idx.begin() + static_cast<long>(std::min(n, n_train)));
    s.val.assign(idx.begin() + static_cast<long>(s.train.size()), idx.begin() + static_cast<long>(s.train.size() + n_val));
    s.test.assign(idx.begin() + static_cast<long>(s.train.size() + n_val), idx.end());
    const std::vector<const std::vector<std::size_t>*> parts{&s.train, &s.val, &s.test};
    for (std::size_t k = 0; k < 3; ++k)
        if (ratios[k] > 0 && parts[k]->empty())
            throw ValidationError("n=" + std::to_string(n) + " is too small for non-empty splits");
    for (auto* p : {&s.train, &s.val, &s.test}) std::sort(p->begin(), p->end());
    return s;
}

struct DatasetParts {
    Dataset train, val, test;
};

/// Sample-index partition applied identically to every mode.
inline DatasetParts split_dataset(const Dataset& ds, const std::vector<double>& ratios, std::uint64_t seed) {
    auto s = split_indices(ds.n, ratios, seed);
    return {ds.select_samples(s.train), ds.select_samples(s.val), ds.select_samples(s.test)};
}

// ---------------------------------------------------------------------------
// Correlation graphs

/// Edge (u,v) iff the Pearson correlation of rows u and v exceeds ρ; unit diagonal.
inline Tensor build_correlation_graph(const Tensor& series, double rho) {
    if (!(rho > 0.0 && rho < 1.0)) throw ConfigError("correlation threshold must lie in (0,1)");
    if (series.rank() != 2) throw DimensionError("series must be a node x time matrix");
    const std::size_t p = series.rows(), t = series.cols();
    if (t < 2) throw ValidationError("correlation graph needs at least two time points");
    std::vector<std::vector<double>> centered(p, std::vector<double>(t));
    std::vector<double> norm(p, 0.0);
    for (std::size_t u = 0; u < p; ++u) {
        double mean = 0.0;
        for (std::size_t k = 0; k < t; ++k) mean += series.at(u, k);
        mean /= static_cast<double>(t);
        for (std::size_t k = 0; k < t; ++k) {
            centered[u][k] = series.at(u, k) - mean;
            norm[u] += centered[u][k] * centered[u][k];
        }
    }
    Tensor a = Tensor::identity(p);
    for (std::size_t u = 0; u < p; ++u)
        for (std::size_t v = u + 1; v < p; ++v) {
            double r = 0.0;
            if (norm[u] > 0.0 && norm[v] > 0.0) {
                double s = 0.0;
                for (std::size_t k = 0; k < t; ++k) s += centered[u][k] * centered[v][k];
                r = s / std::sqrt(norm[u] * norm[v]);
            }
            if (r > rho) a.at(u, v) = a.at(v, u) = 1.0;
        }
    return a;
}

// ---------------------------------------------------------------------------
// Synthetic mode families

enum class Role { source, target };

struct SyntheticMode {
    std::string mode_id;
    Role role = Role::target;
    std::size_t type = 0;          // index into the one-hot type segment
    std::vector<double> numeric;   // numeric meta features; drawn when empty
    double fraction = 1.0;         // share of the universe in the mode's graph
    double density = 0.3;          // edge probability among the mode's nodes
};

struct SyntheticConfig {
    std::size_t p = 12;
    std::size_t n = 32;
    std::size_t d = 1;
    std::size_t type_dims = 2;
    std::size_t numeric_dims = 2;
    double noise_std = 0.0;
    std::string mixing = "affine";  // affine | identity
    std::size_t hops = 2;
    std::string graph = "er";       // er | ring
    bool cover_universe = true;     // source graphs jointly contain every node
    bool source_attrs_full = false; // sources observe attributes on every node
    std::vector<SyntheticMode> modes;
    // Mixing coefficients: a(m) = 1 + a·u, b(m) = b·u, c(m) = 1 + c·u over numeric meta u.
    std::vector<double> coef_a, coef_b, coef_c;

    std::size_t meta_dim() const { return type_dims + numeric_dims; }

    void validate() const {
        if (p == 0 || n == 0 || d == 0) throw ConfigError("synthetic: p, n and d must be positive");
        if (noise_std < 0 || !std::isfinite(noise_std)) throw ConfigError("synthetic: noise_std must be >= 0");
        if (mixing != "affine" && mixing != "identity") throw ConfigError("synthetic: mixing must be affine or identity");
        if (graph != "er" && graph != "ring") throw ConfigError("synthetic: graph must be er or ring");
        if (meta_dim() == 0) throw ConfigError("synthetic: meta vector would be empty");
        if (modes.empty()) throw ConfigError("synthetic: no modes");
        bool any_source = false;
        std::set<std::string> ids;
        for (const auto& m : modes) {
            if (!ids.insert(m.mode_id).second) throw ConfigError("synthetic: duplicate mode id '" + m.mode_id + "'");
            if (!(m.fraction > 0.0 && m.fraction <= 1.0)) throw ConfigError("synthetic: fraction must lie in (0,1]");
            if (!(m.density >= 0.0 && m.density <= 1.0)) throw ConfigError("synthetic: density must lie in [0,1]");
            if (type_dims > 0 && m.type >= type_dims) throw ConfigError("synthetic: mode type out of range");
            if (!m.numeric.empty() && m.numeric.size() != numeric_dims) {
                throw ConfigError("synthetic: mode '" + m.mode_id + "' numeric meta has wrong length");
            }
            if (static_cast<std::size_t>(std::llround(m.fraction * static_cast<double>(p))) == 0) {
                throw ConfigError("synthetic: mode '" + m.mode_id + "' would have an empty node subset");
            }
            any_source = any_source || m.role == Role::source;
        }
        if (!any_source) throw ConfigError("synthetic: at least one source mode is required");
        for (const auto* v : {&coef_a, &coef_b, &coef_c})
            if (!v->empty() && v->size() != numeric_dims) throw ConfigError("synthetic: coefficient length != numeric_dims");
    }

    /// Sources s0.., targets t0.. with types 0 / 1 and drawn numeric meta.
    static SyntheticConfig family(std::size_t sources, std::size_t targets, std::size_t p, std::size_t n,
                                  double noise_std) {
        SyntheticConfig c;
        c.p = p;
        c.n = n;
        c.noise_std = noise_std;
        for (std::size_t j = 0; j < sources; ++j) c.modes.push_back({"s" + std::to_string(j), Role::source, 0, {}, 0.75, 0.3});
        for (std::size_t k = 0; k < targets; ++k) c.modes.push_back({"t" + std::to_string(k), Role::target, 1, {}, 0.75, 0.3});
        return c;
    }
};

inline nlohmann::json to_json(const SyntheticConfig& c) {
    nlohmann::json modes = nlohmann::json::array();
    for (const auto& m : c.modes)
        modes.push_back({{"mode_id", m.mode_id},
                         {"role", m.role == Role::source ? "source" : "target"},
                         {"type", m.type},
                         {"numeric", m.numeric},
                         {"fraction", m.fraction},
                         {"density", m.density}});
    return {{"p", c.p},
            {"n", c.n},
            {"d", c.d},
            {"type_dims", c.type_dims},
            {"numeric_dims", c.numeric_dims},
            {"noise_std", c.noise_std},
            {"mixing", c.mixing},
            {"hops", c.hops},
            {"graph", c.graph},
            {"cover_universe", c.cover_universe},
            {"source_attrs_full", c.source_attrs_full},
            {"coef_a", c.coef_a},
            {"coef_b", c.coef_b},
            {"coef_c", c.coef_c},
            {"modes", modes}};
}

inline SyntheticConfig synthetic_from_json(const nlohmann::json& j) {
    SyntheticConfig c;
    try {
        c.p = j.value("p", c.p);
        c.n = j.value("n", c.n);
        c.d = j.value("d", c.d);
        c.type_dims = j.value("type_dims", c.type_dims);
        c.numeric_dims = j.value("numeric_dims", c.numeric_dims);
        c.noise_std = j.value("noise_std", c.noise_std);
        c.mixing = j.value("mixing", c.mixing);
        c.hops = j.value("hops", c.hops);
        c.graph = j.value("graph", c.graph);
        c.cover_universe = j.value("cover_universe", c.cover_universe);
        c.source_attrs_full = j.value("source_attrs_full", c.source_attrs_full);
        c.coef_a = j.value("coef_a", c.coef_a);
        c.coef_b = j.value("coef_b", c.coef_b);
        c.coef_c = j.value("coef_c", c.coef_c);
        if (j.contains("family")) {
            const auto& f = j.at("family");
            auto fam = SyntheticConfig::family(f.at("sources").get<std::size_t>(), f.at("targets").get<std::size_t>(), c.p,
                                               c.n, c.noise_std);
            c.modes = fam.modes;
        }
        if (j.contains("modes")) {
            c.modes.clear();
            for (const auto& jm : j.at("modes")) {
                SyntheticMode m;
                m.mode_id = jm.at("mode_id").get<std::string>();
                const auto role = jm.value("role", std::string("target"));
                if (role != "source" && role != "target") throw ConfigError("synthetic: role must be source or target");
                m.role = role == "source" ? Role::source : Role::target;
                m.type = jm.value("type", m.type);
                m.numeric = jm.value("numeric", m.numeric);
                m.fraction = jm.value("fraction", m.fraction);
                m.density = jm.value("density", m.density);
                c.modes.push_back(m);
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("synthetic config: ") + e.what());
    }
    c.validate();
    return c;
}

struct GroundTruth {
    std::vector<std::string> sources;
    std::vector<std::string> targets;
    nlohmann::json descriptor;
};

struct SyntheticData {
    Dataset dataset;
    GroundTruth truth;
};

namespace detail {

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size() && i < b.size(); ++i) s += a[i] * b[i];
    return s;
}

// Graph on `nodes` (universe indices): Erdos-Renyi, or a ring where each node links to
// its nearest neighbours by angular position until the requested density is reached.
inline Tensor synthetic_graph(const std::vector<std::size_t>& nodes, std::size_t p, double density, const std::string& kind,
                              std::mt19937_64& rng) {
    const std::size_t m = nodes.size();
    Tensor a = Tensor::identity(m);
    if (kind == "er") {
        std::bernoulli_distribution edge(density);
        for (std::size_t u = 0; u < m; ++u)
            for (std::size_t v = u + 1; v < m; ++v)
                if (edge(rng)) a.at(u, v) = a.at(v, u) = 1.0;
        return a;
    }
    const auto k = static_cast<std::size_t>(std::llround(density * static_cast<double>(p - 1) / 2.0));
    for (std::size_t u = 0; u < m; ++u)
        for (std::size_t v = u + 1; v < m; ++v) {
            const std::size_t gap = (nodes[v] + p - nodes[u]) % p;
            if (std::min(gap, p - gap) <= k) a.at(u, v) = a.at(v, u) = 1.0;
        }
    return a;
}

// hops-fold normalized propagation of an p×d matrix over a universe-embedded graph.
inline Tensor propagate_hops(const Tensor& a_norm, Tensor x, std::size_t hops) {
    for (std::size_t h = 0; h < hops; ++h) x = propagate(a_norm, x);
    return x;
}

}  // namespace detail

/// Ring positions as node features (cos θ, sin θ) for universe index i of p.
inline std::vector<double> ring_position(std::size_t i, std::size_t p) {
    const double theta = 2.0 * 3.14159265358979323846 * static_cast<double>(i) / static_cast<double>(p);
    return {std::cos(theta), std::sin(theta)};
}

inline std::string node_name(std::size_t i, std::size_t p) {
    const std::size_t width = std::to_string(p - 1).size();
    std::string s = std::to_string(i);
    return "v" + std::string(width - s.size(), '0') + s;
}

/// A mode family whose meta vectors determine the transformation from sources to targets.
///
/// Latent s_i ~ N(0,1) per node. Source j observes x_j = e(m_j)·s + f(m_j) on its graph
/// nodes. Every target k receives a(m_k)·P_k(mean_j c(m_j)·P_j x̃_j) + b(m_k) + noise,
/// where x̃_j is zero outside V^(j) and P is hops-fold normalized propagation over the
/// universe-embedded graph.
inline SyntheticData gen_synthetic(const SyntheticConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const std::size_t p = cfg.p, d = cfg.d;
    const bool identity = cfg.mixing == "identity";

    auto coef = [&](const std::vector<double>& given, double scale) {
        if (!given.empty()) return given;
        std::vector<double> out(cfg.numeric_dims);
        for (auto& v : out) v = scale * unif(rng);
        return out;
    };
    const auto ca = coef(cfg.coef_a, 0.8), cb = coef(cfg.coef_b, 0.8), cc = coef(cfg.coef_c, 0.5);

    Dataset ds;
    ds.n = cfg.n;
    ds.d = d;
    ds.type_dims = cfg.type_dims;
    ds.meta_dim = cfg.meta_dim();
    ds.meta_encoding = "one-hot mode type (" + std::to_string(cfg.type_dims) + ") followed by " +
                       std::to_string(cfg.numeric_dims) + " numeric features";
    for (std::size_t i = 0; i < p; ++i) ds.universe.push_back(node_name(i, p));

    // Node subsets. Sources jointly cover the universe when requested.
    std::vector<std::size_t> source_idx, target_idx;
    for (std::size_t k = 0; k < cfg.modes.size(); ++k)
        (cfg.modes[k].role == Role::source ? source_idx : target_idx).push_back(k);
    std::vector<std::vector<bool>> member(cfg.modes.size(), std::vector<bool>(p, false));
    for (std::size_t k = 0; k < cfg.modes.size(); ++k) {
        std::vector<std::size_t> perm(p);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        const auto count = static_cast<std::size_t>(std::llround(cfg.modes[k].fraction * static_cast<double>(p)));
        for (std::size_t i = 0; i < count; ++i) member[k][perm[i]] = true;
    }
    if (cfg.cover_universe) {
        for (std::size_t v = 0; v < p; ++v) {
            bool covered = false;
            for (auto k : source_idx) covered = covered || member[k][v];
            if (!covered) member[source_idx[v % source_idx.size()]][v] = true;
        }
    }

    std::vector<std::vector<double>> numeric(cfg.modes.size());
    for (std::size_t k = 0; k < cfg.modes.size(); ++k) {
        numeric[k] = cfg.modes[k].numeric;
        if (numeric[k].empty()) {
            numeric[k].resize(cfg.numeric_dims);
            for (auto& v : numeric[k]) v = unif(rng);
        }
    }

    // Graphs, and their normalized universe embeddings.
    std::vector<Tensor> a_univ_norm(cfg.modes.size());
    for (std::size_t k = 0; k < cfg.modes.size(); ++k) {
        const auto& sm = cfg.modes[k];
        ModeGraph m;
        m.spec.mode_id = sm.mode_id;
        std::vector<std::size_t> nodes;
        for (std::size_t v = 0; v < p; ++v)
            if (member[k][v]) nodes.push_back(v);
        for (auto v : nodes) m.spec.node_ids.push_back(ds.universe[v]);
        m.spec.meta.assign(cfg.type_dims, 0.0);
        if (cfg.type_dims) m.spec.meta[sm.type] = 1.0;
        m.spec.meta.insert(m.spec.meta.end(), numeric[k].begin(), numeric[k].end());
        m.adjacency = detail::synthetic_graph(nodes, p, sm.density, cfg.graph, rng);
        Tensor embedded = Tensor::identity(p);
        for (std::size_t u = 0; u < nodes.size(); ++u)
            for (std::size_t v = 0; v < nodes.size(); ++v) embedded.at(nodes[u], nodes[v]) = m.adjacency.at(u, v);
        a_univ_norm[k] = normalize_adjacency(embedded);
        const bool full_attrs = sm.role == Role::target || cfg.source_attrs_full;
        m.attr_node_ids = full_attrs ? ds.universe : m.spec.node_ids;
        ds.modes.push_back(std::move(m));
    }

    const std::size_t hops = identity ? 0 : cfg.hops;
    auto scalar_a = [&](std::size_t k) { return identity ? 1.0 : 1.0 + detail::dot(ca, numeric[k]); };
    auto scalar_b = [&](std::size_t k) { return identity ? 0.0 : detail::dot(cb, numeric[k]); };
    auto scalar_c = [&](std::size_t k) { return identity ? 1.0 : 1.0 + detail::dot(cc, numeric[k]); };
    const std::vector<double> mean_w(cfg.numeric_dims, 1.0 / static_cast<double>(std::max<std::size_t>(1, cfg.numeric_dims)));
    auto scalar_e = [&](std::size_t k) { return identity ? 1.0 : 1.0 + 0.3 * detail::dot(mean_w, numeric[k]); };
    auto scalar_f = [&](std::size_t k) { return identity ? 0.0 : 0.2 * detail::dot(mean_w, numeric[k]); };

    std::normal_distribution<double> noise(0.0, 1.0);
    for (std::size_t i = 0; i < cfg.n; ++i) {
        Tensor s = Tensor::zeros({p, d});
        for (auto& v : s.mutable_values()) v = gauss(rng);
        Tensor pooled = Tensor::zeros({p, d});
        for (auto j : source_idx) {
            Tensor full = Tensor::zeros({p, d});
            Tensor restricted = Tensor::zeros({p, d});
            for (std::size_t v = 0; v < p; ++v)
                for (std::size_t c = 0; c < d; ++c) {
                    const double x = scalar_e(j) * s.at(v, c) + scalar_f(j);
                    full.at(v, c) = x;
                    if (member[j][v]) restricted.at(v, c) = x;
                }
            auto& mode = ds.modes[j];
            if (mode.attr_node_ids.size() == p) {
                mode.samples.push_back(full);
            } else {
                Tensor own = Tensor::zeros({mode.attr_node_ids.size(), d});
                std::size_t r = 0;
                for (std::size_t v = 0; v < p; ++v) {
                    if (!member[j][v]) continue;
                    for (std::size_t c = 0; c < d; ++c) own.at(r, c) = full.at(v, c);
                    ++r;
                }
                mode.samples.push_back(own);
            }
            Tensor contrib = detail::propagate_hops(a_univ_norm[j], restricted, hops);
            const double cj = scalar_c(j);
            for (std::size_t q = 0; q < pooled.size(); ++q) pooled.mutable_values()[q] += cj * contrib[q];
        }
        for (auto& v : pooled.mutable_values()) v /= static_cast<double>(source_idx.size());
        for (auto k : target_idx) {
            Tensor y = detail::propagate_hops(a_univ_norm[k], pooled, hops);
            const double ak = scalar_a(k), bk = scalar_b(k);
            for (auto& v : y.mutable_values()) {
                v = ak * v + bk;
                if (cfg.noise_std > 0) v += cfg.noise_std * noise(rng);
            }
            ds.modes[k].samples.push_back(y);
        }
    }
    ds.validate();

    GroundTruth gt;
    for (auto j : source_idx) gt.sources.push_back(cfg.modes[j].mode_id);
    for (auto k : target_idx) gt.targets.push_back(cfg.modes[k].mode_id);
    gt.descriptor = {{"mixing", cfg.mixing}, {"hops", hops}, {"coef_a", ca}, {"coef_b", cb}, {"coef_c", cc},
                     {"noise_std", cfg.noise_std}, {"sources", gt.sources}, {"targets", gt.targets}, {"seed", seed},
                     {"rule", "target = a(m_k) * P_k(mean_j c(m_j) * P_j x_j) + b(m_k) + noise"}};
    return {std::move(ds), std::move(gt)};
}

// ---------------------------------------------------------------------------
// CSV ingestion

struct IngestConfig {
    std::string csv;
    double threshold = 0.5;
    std::string mode_column = "mode";
    std::string sample_column = "sample";
    std::map<std::string, std::vector<double>> meta;  // per mode
    std::size_t type_dims = 0;
    std::string meta_encoding;
    bool standardize = false;  // z-score all readings with one global mean and deviation
};

inline IngestConfig ingest_from_json(const nlohmann::json& j, const std::string& base_dir = "") {
    IngestConfig c;
    try {
        c.csv = j.at("csv").get<std::string>();
        if (!base_dir.empty() && !c.csv.empty() && c.csv.front() != '/') c.csv = base_dir + "/" + c.csv;
        c.threshold = j.value("threshold", c.threshold);
        c.mode_column = j.value("mode_column", c.mode_column);
        c.sample_column = j.value("sample_column", c.sample_column);
        c.type_dims = j.value("type_dims", c.type_dims);
        c.meta_encoding = j.value("meta_encoding", c.meta_encoding);
        c.standardize = j.value("standardize", c.standardize);
        for (const auto& [k, v] : j.at("modes").items()) c.meta[k] = v.at("meta").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("ingest config: ") + e.what());
    }
    if (!(c.threshold > 0.0 && c.threshold < 1.0)) throw ConfigError("ingest: threshold must lie in (0,1)");
    return c;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quoted) {
            if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (ch == '"') {
                quoted = false;
            } else {
                cur += ch;
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace detail

/// Long-format CSV: one row per (mode, sample); remaining columns are node ids.
///
/// A node belongs to a mode when its column is filled on every row of that mode; a
/// column empty on all of the mode's rows is absent from it. Samples are aligned across
/// modes by the sample column. Each mode's graph thresholds the Pearson correlation of
/// its node series across samples.
inline Dataset ingest_csv(const IngestConfig& cfg) {
    std::ifstream f(cfg.csv);
    if (!f) throw ValidationError("cannot read CSV '" + cfg.csv + "'");
    std::string line;
    if (!std::getline(f, line)) throw ValidationError("CSV '" + cfg.csv + "' is empty");
    if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    const auto header = detail::split_csv_line(line);
    long mode_col = -1, sample_col = -1;
    std::vector<std::size_t> node_cols;
    for (std::size_t c = 0; c < header.size(); ++c) {
        if (header[c] == cfg.mode_column) mode_col = static_cast<long>(c);
        else if (header[c] == cfg.sample_column) sample_col = static_cast<long>(c);
        else node_cols.push_back(c);
    }
    if (mode_col < 0) throw ValidationError("CSV lacks the mode column '" + cfg.mode_column + "'");
    if (sample_col < 0) throw ValidationError("CSV lacks the sample column '" + cfg.sample_column + "'");
    if (node_cols.empty()) throw ValidationError("CSV has no node columns");

    // mode -> sample key -> row of optional values
    std::map<std::string, std::map<std::string, std::vector<std::optional<double>>>> table;
    std::size_t line_no = 1;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const auto cells = detail::split_csv_line(line);
        if (cells.size() != header.size()) {
            throw ValidationError("CSV line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                                  " cells, got " + std::to_string(cells.size()));
        }
        std::vector<std::optional<double>> row;
        for (auto c : node_cols) {
            if (cells[c].empty()) {
                row.emplace_back();
                continue;
            }
            try {
                std::size_t used = 0;
                const double v = std::stod(cells[c], &used);
                if (used != cells[c].size() || !std::isfinite(v)) throw std::invalid_argument("bad");
                row.emplace_back(v);
            } catch (const std::exception&) {
                throw ValidationError("CSV line " + std::to_string(line_no) + ": '" + cells[c] + "' is not a number");
            }
        }
        const auto& mode = cells[static_cast<std::size_t>(mode_col)];
        const auto& key = cells[static_cast<std::size_t>(sample_col)];
        if (!table[mode].emplace(key, std::move(row)).second) {
            throw ValidationError("CSV line " + std::to_string(line_no) + ": duplicate sample '" + key + "' for mode '" + mode + "'");
        }
    }
    if (table.empty()) throw ValidationError("CSV has no data rows");

    std::set<std::string> shared;
    bool first = true;
    for (const auto& [mode, rows] : table) {
        std::set<std::string> keys;
        for (const auto& [k, _] : rows) keys.insert(k);
        if (first) {
            shared = keys;
            first = false;
        } else {
            std::set<std::string> both;
            std::set_intersection(shared.begin(), shared.end(), keys.begin(), keys.end(), std::inserter(both, both.begin()));
            shared = both;
        }
    }
    if (shared.size() < 2) throw ValidationError("CSV: fewer than two samples shared by every mode");

    Dataset ds;
    for (auto c : node_cols) ds.universe.push_back(header[c]);
    std::vector<std::size_t> order(ds.universe.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ds.universe[a] < ds.universe[b]; });
    std::vector<std::string> sorted;
    for (auto i : order) sorted.push_back(ds.universe[i]);
    ds.universe = sorted;
    ds.n = shared.size();
    ds.d = 1;
    ds.type_dims = cfg.type_dims;
    ds.meta_encoding = cfg.meta_encoding;
    for (const auto& [mode, rows] : table) {
        auto meta = cfg.meta.find(mode);
        if (meta == cfg.meta.end()) throw ValidationError("ingest config has no meta vector for mode '" + mode + "'");
        ModeGraph m;
        m.spec.mode_id = mode;
        m.spec.meta = meta->second;
        std::vector<std::size_t> members;  // positions in the sorted universe
        for (std::size_t u = 0; u < order.size(); ++u) {
            std::size_t filled = 0;
            for (const auto& key : shared) filled += rows.at(key)[order[u]].has_value();
            if (filled == shared.size()) members.push_back(u);
            else if (filled != 0)
                throw ValidationError("mode '" + mode + "': node '" + ds.universe[u] + "' is missing on some samples");
        }
        if (members.empty()) throw ValidationError("mode '" + mode + "' has no nodes");
        Tensor series = Tensor::zeros({members.size(), shared.size()});
        std::size_t t = 0;
        for (const auto& key : shared) {
            Tensor x = Tensor::zeros({members.size(), 1});
            for (std::size_t r = 0; r < members.size(); ++r) {
                const double v = *rows.at(key)[order[members[r]]];
                x.at(r, 0) = v;
                series.at(r, t) = v;
            }
            m.samples.push_back(std::move(x));
            ++t;
        }
        for (auto u : members) m.spec.node_ids.push_back(ds.universe[u]);
        m.attr_node_ids = m.spec.node_ids;
        m.adjacency = build_correlation_graph(series, cfg.threshold);
        ds.modes.push_back(std::move(m));
    }
    for (auto it = cfg.meta.begin(); it != cfg.meta.end(); ++it)
        if (!table.count(it->first)) throw ValidationError("ingest config names mode '" + it->first + "' absent from the CSV");
    ds.meta_dim = ds.modes.front().spec.meta.size();
    if (cfg.standardize) {
        double sum = 0.0, sq = 0.0, count = 0.0;
        for (const auto& m : ds.modes)
            for (const auto& x : m.samples)
                for (double v : x.values()) {
                    sum += v;
                    sq += v * v;
                    count += 1.0;
                }
        const double mean = sum / count;
        const double sd = std::sqrt(std::max(0.0, sq / count - mean * mean));
        if (sd == 0.0) throw ValidationError("ingest: cannot standardize constant readings");
        for (auto& m : ds.modes)
            for (auto& x : m.samples)
                for (auto& v : x.mutable_values()) v = (v - mean) / sd;
        ds.meta_encoding += (ds.meta_encoding.empty() ? "" : "; ") + std::string("readings standardized: (x - ") +
                            std::to_string(mean) + ") / " + std::to_string(sd);
    }
    ds.validate();
    return ds;
}

}  // namespace graphx
