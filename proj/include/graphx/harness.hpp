#pragma once

// Run configuration and the command implementations behind the CLI. Every command
// writes deterministic outputs (report.json etc.) into the run's output directory;
// wall-clock time goes to timing.json only.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "json.hpp"

#include "graphx/checkpoint.hpp"
#include "graphx/data_io.hpp"
#include "graphx/gradcheck.hpp"
#include "graphx/pipeline.hpp"

namespace graphx {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Run configuration

inline json default_run_config() {
    return json::parse(R"({
  "seed": 0,
  "dataset": "",
  "synthetic": {"p": 12, "n": 32, "noise_std": 0.0, "family": {"sources": 2, "targets": 2}},
  "split": [1.0, 0.0, 0.0],
  "eval_on": "auto",
  "model": {},
  "train": {"max_steps": 2000, "learning_rate": 0.001, "tolerance": 1e-6, "window": 50, "optimizer": "adam"},
  "episodes": ["s0,s1->t0,t1"],
  "eval_episodes": [],
  "checkpoint": "",
  "generalize": {"episode": "", "meta_overrides": {}},
  "gradcheck": {"p": 6, "n": 2, "width": 4, "seeds": [0, 1, 2, 3, 4], "gnn": ["gcn", "gin", "gat"],
                "h": 1e-5, "tolerance": 1e-4, "fault": false},
  "theorem1": {"trials": 10, "p": 12, "n": 40, "sources": 2, "targets": 5, "numeric_dims": 1,
               "noise_std": 0.1, "steps": 300, "test_fraction": 0.2, "permutation": "derangement"},
  "paramaudit": {"mode_counts": [2, 4, 8], "variants": []},
  "ingest": {"output": "dataset.json"}
})");
}

/// Sets a dotted key path; the value is parsed as JSON when possible, else kept as a string.
inline void apply_override(json& cfg, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects KEY=VALUE, got '" + assignment + "'");
    const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    json* node = &cfg;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) throw ConfigError("--set: empty key segment in '" + key + "'");
        if (!node->is_object()) throw ConfigError("--set: '" + key + "' descends into a non-object");
        if (dot == std::string::npos) {
            (*node)[part] = value;
            return;
        }
        node = &(*node)[part];
        if (node->is_null()) *node = json::object();
        start = dot + 1;
    }
}

struct CliOverrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::string> episode;
    std::vector<std::string> sets;
};

/// defaults < config file < --set < --seed / --episode
inline json resolve_run_config(const std::string& config_path, const CliOverrides& cli) {
    json cfg = default_run_config();
    if (!config_path.empty()) {
        json file = parse_json(read_text(config_path), "config '" + config_path + "'");
        if (!file.is_object()) throw ConfigError("config file must hold a JSON object");
        for (const auto& [key, _] : file.items())
            if (!cfg.contains(key)) throw ConfigError("unknown config key '" + key + "'");
        cfg.merge_patch(file);
    }
    for (const auto& s : cli.sets) apply_override(cfg, s);
    for (const auto& [key, _] : cfg.items())
        if (!default_run_config().contains(key)) throw ConfigError("unknown config key '" + key + "'");
    if (cli.seed) cfg["seed"] = *cli.seed;
    if (cli.episode) {
        cfg["episodes"] = json::array({*cli.episode});
        cfg["generalize"]["episode"] = *cli.episode;
    }
    return cfg;
}

template <typename T>
T cfg_get(const json& j, const std::string& key) {
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError("config '" + key + "': " + e.what());
    }
}

inline std::uint64_t run_seed(const json& cfg) { return cfg_get<std::uint64_t>(cfg, "seed"); }

inline TrainOptions train_options(const json& cfg) {
    const json& t = cfg.at("train");
    TrainOptions o;
    o.max_steps = cfg_get<std::size_t>(t, "max_steps");
    o.learning_rate = cfg_get<double>(t, "learning_rate");
    o.tolerance = cfg_get<double>(t, "tolerance");
    o.window = cfg_get<std::size_t>(t, "window");
    o.optimizer = cfg_get<std::string>(t, "optimizer");
    if (o.window == 0) throw ConfigError("train.window must be positive");
    return o;
}

/// ModelConfig from the "model" section with the data dimensions of `ds`.
inline ModelConfig model_config(const json& cfg, const Dataset& ds) {
    ModelConfig c;
    c.d = ds.d;
    c.meta_dim = ds.meta_dim;
    c.type_dims = ds.type_dims;
    update_from_json(c, cfg.at("model"));
    if (c.d != ds.d || c.meta_dim != ds.meta_dim) throw ConfigError("model d/meta_dim disagree with the dataset");
    c.validate();
    return c;
}

inline Dataset run_dataset(const json& cfg) {
    const auto path = cfg_get<std::string>(cfg, "dataset");
    if (!path.empty()) return load_dataset(path);
    return gen_synthetic(synthetic_from_json(cfg.at("synthetic")), run_seed(cfg)).dataset;
}

inline std::vector<Episode> parse_episodes(const json& list, Episode::Phase phase) {
    std::vector<Episode> out;
    for (const auto& e : list) out.push_back(Episode::parse(e.get<std::string>(), phase));
    return out;
}

// ---------------------------------------------------------------------------
// Output helpers

namespace detail {

inline std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void ensure_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw ValidationError("cannot create output directory '" + dir + "': " + ec.message());
}

inline std::string join(const std::string& dir, const std::string& file) {
    return (std::filesystem::path(dir) / file).string();
}

// Identity forward, gradient multiplied by `factor` on the way back.
inline Tensor corrupt_backward(const Tensor& x, double factor) {
    auto xn = x.node();
    return make_result(x.shape(), std::vector<double>(x.values().begin(), x.values().end()), "corrupt_backward", {x},
                       [xn, factor](Node& o) {
                           auto& g = xn->grad_buffer();
                           for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * o.grad[i];
                       });
}

}  // namespace detail

inline void write_json(const std::string& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

inline std::string metrics_csv(const std::vector<EpisodeMetrics>& all) {
    std::string out = "episode,target,mse,pcc,pcc_defined,mean_generalization_error\n";
    for (const auto& e : all)
        for (const auto& t : e.targets)
            out += "\"" + e.episode + "\"," + t.target + "," + detail::fmt_double(t.mse) + "," + detail::fmt_double(t.pcc) +
                   "," + (t.pcc_defined ? "1" : "0") + "," + detail::fmt_double(t.mean_generalization_error) + "\n";
    return out;
}

inline std::string history_csv(const std::vector<HistoryRow>& rows) {
    std::string out = "step,l1,l2,total\n";
    for (const auto& r : rows)
        out += std::to_string(r.step) + "," + detail::fmt_double(r.l1) + "," + detail::fmt_double(r.l2) + "," +
               detail::fmt_double(r.total) + "\n";
    return out;
}

inline json metrics_json(const std::vector<EpisodeMetrics>& all) {
    json episodes = json::array();
    double mse_sum = 0.0, pcc_sum = 0.0;
    std::size_t count = 0, pcc_count = 0;
    for (const auto& e : all) {
        json targets = json::array();
        for (const auto& t : e.targets) {
            targets.push_back({{"target", t.target},
                               {"mse", t.mse},
                               {"pcc", t.pcc},
                               {"pcc_defined", t.pcc_defined},
                               {"generalization_error", t.generalization_error},
                               {"mean_generalization_error", t.mean_generalization_error}});
            mse_sum += t.mse;
            ++count;
            if (t.pcc_defined) {
                pcc_sum += t.pcc;
                ++pcc_count;
            }
        }
        episodes.push_back({{"episode", e.episode},
                            {"targets", targets},
                            {"loss", {{"l1", e.loss.l1}, {"l2", e.loss.l2}, {"total", e.loss.total}}}});
    }
    return {{"episodes", episodes},
            {"mean_mse", count ? mse_sum / static_cast<double>(count) : 0.0},
            {"mean_pcc", pcc_count ? pcc_sum / static_cast<double>(pcc_count) : 0.0}};
}

struct CommandResult {
    int exit_code = 0;
    json report;
};

class Stopwatch {
   public:
    double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

   private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

inline json report_header(const std::string& command, const json& cfg) {
    return {{"command", command}, {"seed", run_seed(cfg)}, {"config", cfg}};
}

inline void finish(const std::string& out_dir, const json& report, const Stopwatch& clock) {
    write_json(detail::join(out_dir, "report.json"), report);
    write_json(detail::join(out_dir, "timing.json"), {{"runtime_seconds", clock.seconds()}});
}

// ---------------------------------------------------------------------------
// Data commands

inline CommandResult run_gen_data(const json& cfg, const std::string& out_dir) {
    Stopwatch clock;
    detail::ensure_dir(out_dir);
    auto data = gen_synthetic(synthetic_from_json(cfg.at("synthetic")), run_seed(cfg));
    save_dataset(data.dataset, detail::join(out_dir, "dataset.json"));
    write_json(detail::join(out_dir, "ground_truth.json"), data.truth.descriptor);
    json report = report_header("gen-data", cfg);
    report["modes"] = data.dataset.mode_ids();
    report["nodes"] = data.dataset.num_nodes();
    report["samples"] = data.dataset.n;
    finish(out_dir, report, clock);
    spdlog::info("wrote {} modes over {} nodes to {}", data.dataset.modes.size(), data.dataset.num_nodes(), out_dir);
    return {0, report};
}

inline CommandResult run_ingest(const json& cfg, const std::string& out_dir) {
    Stopwatch clock;
    detail::ensure_dir(out_dir);
    const json& section = cfg.at("ingest");
    auto ds = ingest_csv(ingest_from_json(section));
    const auto name = section.value("output", std::string("dataset.json"));
    save_dataset(ds, detail::join(out_dir, name));
    json report = report_header("ingest", cfg);
    report["modes"] = ds.mode_ids();
    report["nodes"] = ds.num_nodes();
    report["samples"] = ds.n;
    std::size_t edges = 0;
    for (const auto& m : ds.modes) edges += edge_count(m.adjacency);
    report["edges"] = edges;
    finish(out_dir, report, clock);
    spdlog::info("ingested {} modes, {} nodes, {} samples", ds.modes.size(), ds.num_nodes(), ds.n);
    return {0, report};
}

// ---------------------------------------------------------------------------
// Training and evaluation

struct RunData {
    Dataset train;
    Dataset eval;
};

inline RunData run_data(const json& cfg) {
    Dataset ds = run_dataset(cfg);
    const auto ratios = cfg_get<std::vector<double>>(cfg, "split");
    auto parts = split_dataset(ds, ratios, run_seed(cfg));
    const auto eval_on = cfg_get<std::string>(cfg, "eval_on");
    Dataset eval;
    if (eval_on == "train") eval = parts.train;
    else if (eval_on == "val") eval = parts.val;
    else if (eval_on == "test") eval = parts.test;
    else if (eval_on == "all") eval = ds;
    else if (eval_on == "auto") eval = parts.test.n > 0 ? parts.test : parts.train;
    else throw ConfigError("eval_on must be auto, train, val, test or all");
    if (eval.n == 0) throw ValidationError("evaluation split '" + eval_on + "' is empty");
    return {parts.train, eval};
}

inline std::vector<Episode> eval_episodes(const json& cfg) {
    const auto& list = cfg.at("eval_episodes");
    return parse_episodes(list.empty() ? cfg.at("episodes") : list, Episode::Phase::train);
}

inline std::vector<EpisodeMetrics> evaluate_all(const Model& m, const Dataset& ds, const std::vector<Episode>& eps,
                                                const MetaOverrides& overrides = {}) {
    std::vector<EpisodeMetrics> out;
    for (const auto& e : eps) out.push_back(evaluate(m, plan_episode(ds, e, m.config, true, overrides)));
    return out;
}

inline CommandResult run_train(const json& cfg, const std::string& out_dir) {
    Stopwatch clock;
    detail::ensure_dir(out_dir);
    auto data = run_data(cfg);
    const ModelConfig mc = model_config(cfg, data.train);
    const auto episodes = parse_episodes(cfg.at("episodes"), Episode::Phase::train);
    if (episodes.empty()) throw ConfigError("no training episodes");
    std::vector<EpisodePlan> plans;
    for (const auto& e : episodes) plans.push_back(plan_episode(data.train, e, mc));
    Model model = Model::init(mc, run_seed(cfg));
    spdlog::info("training {} parameters on {} episode(s), {} samples", model.parameter_count(), plans.size(), data.train.n);

    TrainResult result;
    try {
        result = train(model, plans, train_options(cfg));
    } catch (const DivergenceError& e) {
        write_json(detail::join(out_dir, "divergence.json"), {{"error", e.what()}, {"config_hash", hex64(config_hash(mc))}});
        throw;
    }
    spdlog::info("stopped after {} steps (converged: {}), l1 {:.6g}", result.steps, result.converged, result.final_loss.l1);

    const auto metrics = evaluate_all(model, data.eval, eval_episodes(cfg));
    json report = report_header("train", cfg);
    report["config_hash"] = hex64(config_hash(mc));
    report["model"] = to_json(mc);
    report["parameters"] = model.parameter_count();
    report["training"] = {{"steps", result.steps},
                          {"converged", result.converged},
                          {"initial", result.history.empty() ? json(nullptr)
                                                             : json{{"l1", result.history.front().l1},
                                                                    {"l2", result.history.front().l2},
                                                                    {"total", result.history.front().total}}},
                          {"final", {{"l1", result.final_loss.l1}, {"l2", result.final_loss.l2}, {"total", result.final_loss.total}}}};
    report["metrics"] = metrics_json(metrics);
    save_checkpoint(model, detail::join(out_dir, "checkpoint.bin"), {{"seed", run_seed(cfg)}, {"episodes", cfg.at("episodes")}});
    write_text(detail::join(out_dir, "loss_history.csv"), history_csv(result.history));
    write_text(detail::join(out_dir, "metrics.csv"), metrics_csv(metrics));
    finish(out_dir, report, clock);
    return {0, report};
}

inline Model load_compatible(const json& cfg, const std::string& out_dir, const Dataset& ds) {
    auto path = cfg_get<std::string>(cfg, "checkpoint");
    if (path.empty()) path = detail::join(out_dir, "checkpoint.bin");
    auto ck = load_checkpoint(path);
    const ModelConfig expected = model_config(cfg, ds);
    if (config_hash(ck.model.config) != config_hash(expected)) {
        throw ValidationError("checkpoint '" + path + "' was trained with config hash " + hex64(config_hash(ck.model.config)) +
                              " but this run resolves to " + hex64(config_hash(expected)) + "; refusing to run");
    }
    return std::move(ck.model);
}

inline CommandResult run_eval(const json& cfg, const std::string& out_dir) {
    Stopwatch clock;
    detail::ensure_dir(out_dir);
    auto data = run_data(cfg);
    Model model = load_compatible(cfg, out_dir, data.train);
    const auto metrics = evaluate_all(model, data.eval, eval_episodes(cfg));
    json report = report_header("eval", cfg);
    report["config_hash"] = hex64(config_hash(model.config));
    report["metrics"] = metrics_json(metrics);
    write_text(detail::join(out_dir, "metrics.csv"), metrics_csv(metrics));
    finish(out_dir, report, clock);
    return {0, report};
}

inline MetaOverrides meta_overrides(const json& j) {
    MetaOverrides out;
    try {
        for (const auto& [k, v] : j.items()) out[k] = v.get<std::vector<double>>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("meta_overrides: ") + e.what());
    }
    return out;
}

inline CommandResult run_generalize(const json& cfg, const std::string& out_dir) {
    Stopwatch clock;
    detail::ensure_dir(out_dir);
    auto data = run_data(cfg);
    Model model = load_compatible(cfg, out_dir, data.train);
    const auto text = cfg.at("generalize").at("episode").get<std::string>();
    if (text.empty()) throw ConfigError("generalize needs an episode (--episode or generalize.episode)");
    const auto overrides = meta_overrides(cfg.at("generalize").at("meta_overrides"));
    const Episode unseen = Episode::parse(text, Episode::Phase::generalize);
    std::vector<EpisodeMetrics> metrics{generalize(model, data.eval, unseen, overrides)};
    json report = report_header("generalize", cfg);
    report["config_hash"] = hex64(config_hash(model.config));
    report["metrics"] = metrics_json(metrics);
    write_text(detail::join(out_dir, "metrics.csv"), metrics_csv(metrics));
    finish(out_dir, report, clock);
    return {0, report};
}

// ---------------------------------------------------------------------------
// Gradient check

struct GradcheckCase {
    std::string gnn;
    std::uint64_t seed = 0;
    GradCheckResult result;
};

/// Episode loss at small scale against central differences.
inline GradCheckResult pipeline_gradcheck(const std::string& gnn, std::uint64_t seed, std::size_t p, std::size_t n,
                                          std::size_t width, double h, bool fault) {
    auto syn = SyntheticConfig::family(2, 1, p, n, 0.0);
    auto ds = gen_synthetic(syn, seed).dataset;
    ModelConfig c;
    c.gnn = parse_layer_kind(gnn);
    c.hidden = c.latent = c.head_hidden = width;
    c.link_dim = width;
    c.heads = 2;
    c.hyper_hidden = 2 * width;
    c.activation = Activation::tanh();
    c.d = ds.d;
    c.meta_dim = ds.meta_dim;
    c.type_dims = ds.type_dims;
    Model m = Model::init(c, seed);
    std::vector<EpisodePlan> plans{plan_episode(ds, Episode::parse("s0,s1->t0"), c)};
    auto fn = [&] {
        Tensor loss = objective(m, plans).total;
        return fault ? detail::corrupt_backward(loss, 1.5) : loss;
    };
    return grad_check_detailed(fn, m.trainable(), h);
}

inline CommandResult run_gradcheck(const json& cfg, const std::string& out_dir) {
    Stopwatch clock;
    detail::ensure_dir(out_dir);
    const json& g = cfg.at("gradcheck");
    const auto p = cfg_get<std::size_t>(g, "p");
    if (p > 8) throw ConfigError("gradcheck is meant for p <= 8");
    const auto n = cfg_get<std::size_t>(g, "n");
    const auto width = cfg_get<std::size_t>(g, "width");
    const auto h = cfg_get<double>(g, "h");
    const auto tol = cfg_get<double>(g, "tolerance");
    const auto fault = cfg_get<bool>(g, "fault");
    json cases = json::array();
    double worst = 0.0;
    for (const auto& gnn : cfg_get<std::vector<std::string>>(g, "gnn"))
        for (const auto seed : cfg_get<std::vector<std::uint64_t>>(g, "seeds")) {
            auto r = pipeline_gradcheck(gnn, seed, p, n, width, h, fault);
            worst = std::max(worst, r.max_rel_error);
            spdlog::info("gradcheck {} seed {}: max relative error {:.3g} over {} entries", gnn, seed, r.max_rel_error,
                         r.entries_checked);
            cases.push_back({{"gnn", gnn}, {"seed", seed}, {"max_rel_error", r.max_rel_error}, {"entries", r.entries_checked}});
        }
    const bool pass = worst < tol;
    json report = report_header("gradcheck", cfg);
    report["cases"] = cases;
    report["max_rel_error"] = worst;
    report["tolerance"] = tol;
    report["pass"] = pass;
    finish(out_dir, report, clock);
    if (!pass) spdlog::error("gradcheck failed: max relative error {:.3g} >= {:.3g}", worst, tol);
    return {pass ? 0 : 1, report};
}

// ---------------------------------------------------------------------------
// Held-out meta experiment (theorem1 command)

struct Theorem1Trial {
    std::uint64_t seed = 0;
    std::string held_out;
    bool diverged = false;
    std::string error;
    double true_error = 0.0;      // mean ‖ε‖² with the held-out modes' own meta
    double permuted_error = 0.0;  // mean ‖ε′‖² with meta taken from training modes
    double true_mse = 0.0;
    double train_l1 = 0.0;
};

/// One trial: train on sources → all targets but one, then evaluate the held-out target
/// with its true meta and with meta substituted from the training modes.
inline Theorem1Trial theorem1_trial(const json& t, const json& model_section, std::uint64_t seed) {
    auto syn = SyntheticConfig::family(cfg_get<std::size_t>(t, "sources"), cfg_get<std::size_t>(t, "targets"),
                                       cfg_get<std::size_t>(t, "p"), cfg_get<std::size_t>(t, "n"),
                                       cfg_get<double>(t, "noise_std"));
    syn.numeric_dims = cfg_get<std::size_t>(t, "numeric_dims");
    if (syn.numeric_dims == 0) throw ConfigError("theorem1 needs numeric meta features");
    if (cfg_get<std::size_t>(t, "targets") < 2) throw ConfigError("theorem1 needs at least two target modes");
    auto data = gen_synthetic(syn, seed);
    const double test_fraction = cfg_get<double>(t, "test_fraction");
    auto parts = split_dataset(data.dataset, {1.0 - test_fraction, 0.0, test_fraction}, seed);

    // Hold out the target whose first numeric meta feature is the median.
    std::vector<std::pair<double, std::string>> by_meta;
    for (const auto& id : data.truth.targets) by_meta.emplace_back(data.dataset.mode(id).spec.meta[syn.type_dims], id);
    std::sort(by_meta.begin(), by_meta.end());
    Theorem1Trial trial;
    trial.seed = seed;
    trial.held_out = by_meta[by_meta.size() / 2].second;
    std::vector<std::string> trained;
    for (const auto& [_, id] : by_meta)
        if (id != trial.held_out) trained.push_back(id);

    json cfg = default_run_config();
    cfg["model"] = model_section;
    const ModelConfig mc = model_config(cfg, parts.train);
    std::string sources;
    for (const auto& s : data.truth.sources) sources += (sources.empty() ? "" : ",") + s;
    std::vector<EpisodePlan> plans;
    for (const auto& id : trained) plans.push_back(plan_episode(parts.train, Episode::parse(sources + "->" + id), mc));
    Model model = Model::init(mc, seed);
    TrainOptions o;
    o.max_steps = cfg_get<std::size_t>(t, "steps");
    try {
        trial.train_l1 = train(model, plans, o).final_loss.l1;
    } catch (const DivergenceError& e) {
        trial.diverged = true;
        trial.error = e.what();
        return trial;
    }

    const Episode unseen = Episode::parse(sources + "->" + trial.held_out, Episode::Phase::generalize);
    auto truth = generalize(model, parts.test, unseen);
    MetaOverrides swapped;
    const auto permutation = cfg_get<std::string>(t, "permutation");
    if (permutation == "derangement") {
        swapped[trial.held_out] = parts.test.mode(trained.front()).spec.meta;
        const auto& src = data.truth.sources;
        for (std::size_t j = 0; j < src.size() && src.size() > 1; ++j)
            swapped[src[j]] = parts.test.mode(src[(j + 1) % src.size()]).spec.meta;
    } else if (permutation != "identity") {
        throw ConfigError("theorem1.permutation must be derangement or identity");
    }
    auto permuted = generalize(model, parts.test, unseen, swapped);
    trial.true_error = truth.targets[0].mean_generalization_error;
    trial.permuted_error = permuted.targets[0].mean_generalization_error;
    trial.true_mse = truth.targets[0].mse;
    return trial;
}

inline CommandResult run_theorem1(const json& cfg, const std::string& out_dir) {
    Stopwatch clock;
    detail::ensure_dir(out_dir);
    const json& t = cfg.at("theorem1");
    const auto trials = cfg_get<std::size_t>(t, "trials");
    if (trials < 2) throw ConfigError("theorem1 needs at least two trials");
    json rows = json::array();
    std::size_t wins = 0, valid = 0;
    double pooled_true = 0.0, pooled_perm = 0.0;
    for (std::size_t k = 0; k < trials; ++k) {
        const auto r = theorem1_trial(t, cfg.at("model"), run_seed(cfg) + k);
        json row = {{"trial", k}, {"seed", r.seed}, {"held_out", r.held_out}, {"diverged", r.diverged}};
        if (r.diverged) {
            row["error"] = r.error;
            spdlog::warn("trial {} diverged and is excluded: {}", k, r.error);
        } else {
            ++valid;
            wins += r.true_error <= r.permuted_error;
            pooled_true += r.true_error;
            pooled_perm += r.permuted_error;
            row["true_meta_error"] = r.true_error;
            row["permuted_meta_error"] = r.permuted_error;
            row["true_meta_mse"] = r.true_mse;
            row["train_l1"] = r.train_l1;
            spdlog::info("trial {}: held-out {} error {:.4g} (true meta) vs {:.4g} (permuted)", k, r.held_out, r.true_error,
                         r.permuted_error);
        }
        rows.push_back(row);
    }
    json report = report_header("theorem1", cfg);
    report["trials"] = rows;
    report["valid_trials"] = valid;
    report["excluded_trials"] = trials - valid;
    report["wins"] = wins;
    report["win_rate"] = valid ? static_cast<double>(wins) / static_cast<double>(valid) : 0.0;
    report["pooled_true_meta_error"] = valid ? pooled_true / static_cast<double>(valid) : 0.0;
    report["pooled_permuted_meta_error"] = valid ? pooled_perm / static_cast<double>(valid) : 0.0;
    finish(out_dir, report, clock);
    return {0, report};
}

// ---------------------------------------------------------------------------
// Link prediction

struct LinkExperiment {
    std::size_t held_out = 0;  // held-out edges, and as many held-out non-edges
    double auc = 0.0;
    double final_loss = 0.0;
};

/// Trains the link predictor alone on a latent-ring graph with a share of edges (and as
/// many non-edges) removed from both the input graph and the supervision, then ranks the
/// held-out pairs. Node features are the ring positions (cos θ, sin θ).
inline LinkExperiment link_auc_experiment(std::size_t p, double density, double holdout, std::size_t steps,
                                          double learning_rate, std::uint64_t seed) {
    if (p < 4) throw ConfigError("link experiment needs p >= 4");
    if (!(holdout > 0.0 && holdout < 1.0)) throw ConfigError("holdout share must lie in (0,1)");
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> nodes(p);
    std::iota(nodes.begin(), nodes.end(), 0);
    const Tensor a = detail::synthetic_graph(nodes, p, density, "ring", rng);
    Tensor x = Tensor::zeros({p, 2});
    for (std::size_t i = 0; i < p; ++i) {
        const auto pos = ring_position(i, p);
        x.at(i, 0) = pos[0];
        x.at(i, 1) = pos[1];
    }
    std::vector<std::pair<std::size_t, std::size_t>> edges, non_edges;
    for (std::size_t u = 0; u < p; ++u)
        for (std::size_t v = u + 1; v < p; ++v) (a.at(u, v) == 1.0 ? edges : non_edges).emplace_back(u, v);
    std::shuffle(edges.begin(), edges.end(), rng);
    std::shuffle(non_edges.begin(), non_edges.end(), rng);
    LinkExperiment r;
    r.held_out = static_cast<std::size_t>(std::llround(holdout * static_cast<double>(edges.size())));
    if (r.held_out == 0 || r.held_out > non_edges.size()) throw ValidationError("link experiment: nothing to hold out");
    Tensor input = a, mask = Tensor::full({p, p}, 1.0);
    for (std::size_t i = 0; i < r.held_out; ++i) {
        const auto [u, v] = edges[i];
        const auto [s, t] = non_edges[i];
        input.at(u, v) = input.at(v, u) = 0.0;
        mask.at(u, v) = mask.at(v, u) = mask.at(s, t) = mask.at(t, s) = 0.0;
    }
    ModelConfig c;
    c.d = 2;
    std::vector<LayerWeights> phi;
    for (const auto& spec : c.linkpred_specs()) phi.push_back(LayerWeights::init(spec, rng));
    std::vector<Tensor> params;
    for (const auto& layer : phi)
        for (const auto& t : layer.tensors()) params.push_back(t);
    AdamState adam;
    adam.options.learning_rate = learning_rate;
    const auto graph = GraphInput::from(input);
    for (std::size_t step = 0; step < steps; ++step) {
        for (auto& t : params) t.zero_grad();
        Tensor loss = bce_loss(link_scores(c, graph, x, phi).probs, a, mask);
        if (!std::isfinite(loss.item())) throw DivergenceError("link experiment loss became non-finite");
        loss.backward();
        std::vector<std::vector<double>> grads;
        for (const auto& t : params) grads.push_back(t.grad());
        adam_step(params, grads, adam);
    }
    NoGradGuard no_grad;
    const auto scores = link_scores(c, graph, x, phi);
    r.final_loss = bce_loss(scores.probs, a, mask).item();
    std::vector<double> pos, neg;
    for (std::size_t i = 0; i < r.held_out; ++i) {
        pos.push_back(scores.probs.at(edges[i].first, edges[i].second));
        neg.push_back(scores.probs.at(non_edges[i].first, non_edges[i].second));
    }
    r.auc = auc_metric(pos, neg);
    return r;
}

// ---------------------------------------------------------------------------
// Parameter audit

inline CommandResult run_paramaudit(const json& cfg, const std::string& out_dir) {
    Stopwatch clock;
    detail::ensure_dir(out_dir);
    const json& a = cfg.at("paramaudit");
    json variants = a.at("variants");
    if (variants.empty())
        for (const auto k : cfg_get<std::vector<std::size_t>>(a, "mode_counts")) variants.push_back({{"modes", k}});
    if (variants.size() < 2) throw ConfigError("paramaudit needs at least two variants");
    json rows = json::array();
    std::optional<std::size_t> first;
    bool equal = true;
    for (const auto& v : variants) {
        const auto modes = cfg_get<std::size_t>(v, "modes");
        if (modes < 2) throw ConfigError("paramaudit variants need at least two modes");
        auto syn = SyntheticConfig::family(1, modes - 1, 6, 2, 0.0);
        auto ds = gen_synthetic(syn, run_seed(cfg)).dataset;
        json model_section = cfg.at("model");
        if (v.contains("model")) model_section.merge_patch(v.at("model"));
        json local = cfg;
        local["model"] = model_section;
        const ModelConfig mc = model_config(local, ds);
        const std::size_t counted = trainable_param_count(mc);
        const std::size_t registry = Model::init(mc, run_seed(cfg)).parameter_count();
        if (counted != registry) throw ValidationError("parameter count disagrees with the parameter registry");
        if (!first) first = counted;
        equal = equal && counted == *first;
        spdlog::info("{} modes: {} trainable parameters", modes, counted);
        rows.push_back({{"modes", modes}, {"trainable_param_count", counted}, {"model", to_json(mc)}});
    }
    json report = report_header("paramaudit", cfg);
    report["variants"] = rows;
    report["equal"] = equal;
    finish(out_dir, report, clock);
    if (!equal) spdlog::error("trainable parameter counts differ across variants");
    return {equal ? 0 : 1, report};
}

inline CommandResult run_command(const std::string& name, const json& cfg, const std::string& out_dir) {
    if (name == "gen-data") return run_gen_data(cfg, out_dir);
    if (name == "ingest") return run_ingest(cfg, out_dir);
    if (name == "train") return run_train(cfg, out_dir);
    if (name == "eval") return run_eval(cfg, out_dir);
    if (name == "generalize") return run_generalize(cfg, out_dir);
    if (name == "gradcheck") return run_gradcheck(cfg, out_dir);
    if (name == "theorem1") return run_theorem1(cfg, out_dir);
    if (name == "paramaudit") return run_paramaudit(cfg, out_dir);
    throw ConfigError("unknown command '" + name + "'");
}

/// Maps errors to the stable exit codes: 1 validation/config, 2 divergence.
inline int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const DivergenceError*>(&e)) return 2;
    return 1;
}

}  // namespace graphx
