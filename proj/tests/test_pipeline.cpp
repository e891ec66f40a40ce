#include <gtest/gtest.h>

#include <cmath>

#include "graphx/data_io.hpp"
#include "graphx/gradcheck.hpp"
#include "graphx/pipeline.hpp"

using namespace graphx;

namespace {

ModelConfig tiny_config(const Dataset& ds) {
    ModelConfig c;
    c.hidden = 4;
    c.latent = 4;
    c.head_hidden = 4;
    c.link_dim = 3;
    c.hyper_hidden = 6;
    c.activation = Activation::tanh();
    c.d = ds.d;
    c.meta_dim = ds.meta_dim;
    c.type_dims = ds.type_dims;
    return c;
}

ModelConfig default_config(const Dataset& ds) {
    ModelConfig c;
    c.d = ds.d;
    c.meta_dim = ds.meta_dim;
    c.type_dims = ds.type_dims;
    return c;
}

Dataset covered(std::size_t p, std::size_t n, std::uint64_t seed, std::size_t targets = 2) {
    return gen_synthetic(SyntheticConfig::family(2, targets, p, n, 0.0), seed).dataset;
}

// Sources see only part of the universe, so the target plan has p̃ < p.
Dataset partial(std::size_t p, std::size_t n, std::uint64_t seed) {
    auto cfg = SyntheticConfig::family(2, 1, p, n, 0.0);
    cfg.cover_universe = false;
    cfg.source_attrs_full = true;
    for (auto& m : cfg.modes) m.fraction = 0.34;
    for (std::uint64_t s = seed;; ++s) {
        auto ds = gen_synthetic(cfg, s).dataset;
        auto plan = plan_episode(ds, Episode::parse("s0,s1->t0"), default_config(ds));
        if (plan.targets[0].pt < p) return ds;
    }
}

std::vector<double> values_of(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

}  // namespace

TEST(ModelConfig, RejectsBadValues) {
    auto ds = covered(6, 2, 1);
    auto c = default_config(ds);
    c.tau = 1.0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = default_config(ds);
    c.rho = -1;
    EXPECT_THROW(c.validate(), ConfigError);
    c = default_config(ds);
    c.type_dims = 0;
    c.ablation = Ablation::hypergnn_2;
    EXPECT_THROW(c.validate(), ConfigError);
    c = default_config(ds);
    c.gnn = LayerKind::gat;
    c.heads = 3;
    EXPECT_THROW(c.validate(), Error);
    EXPECT_THROW(parse_ablation("none"), ConfigError);
    EXPECT_THROW(update_from_json(c, {{"hiden", 3}}), ConfigError);
}

TEST(ModelConfig, JsonRoundTripAndHash) {
    ModelConfig c;
    c.gnn = LayerKind::gat;
    c.rho = 0.25;
    c.ablation = Ablation::hypergnn_1;
    ModelConfig back;
    update_from_json(back, to_json(c));
    EXPECT_EQ(to_json(back), to_json(c));
    EXPECT_EQ(config_hash(back), config_hash(c));
    back.hidden += 1;
    EXPECT_NE(config_hash(back), config_hash(c));
    EXPECT_EQ(hex64(0xabcULL), "0000000000000abc");
    EXPECT_EQ(fnv1a(""), 14695981039346656037ULL);
    EXPECT_EQ(fnv1a("a"), 0xaf63dc4c8601ec8cULL);
}

TEST(LinkScores, SigmoidOfInnerProducts) {
    ModelConfig c;
    c.link_layers = 1;
    c.link_dim = 1;
    c.d = 1;
    std::map<std::string, Tensor> blocks{{"W", Tensor({1, 1}, {1.0})}, {"b", Tensor::zeros({1})}};
    std::vector<LayerWeights> phi{LayerWeights(c.linkpred_specs()[0], blocks)};
    auto g = GraphInput::from(Tensor::identity(2));
    auto high = link_scores(c, g, Tensor({2, 1}, {std::sqrt(10.0), std::sqrt(10.0)}), phi);
    EXPECT_NEAR(high.probs.at(0, 1), 0.9999546021312976, 1e-12);
    auto orth = link_scores(c, g, Tensor({2, 1}, {1.0, 0.0}), phi);
    EXPECT_DOUBLE_EQ(orth.probs.at(0, 1), 0.5);
    EXPECT_DOUBLE_EQ(orth.probs.at(1, 1), 0.5);
}

TEST(LinkScores, LossAddsOverTargets) {
    Tensor p1({2, 2}, {0.9, 0.2, 0.3, 0.8}), p2({2, 2}, {0.6, 0.4, 0.1, 0.7});
    Tensor y1({2, 2}, {1, 0, 0, 1}), y2({2, 2}, {1, 1, 1, 1});
    EXPECT_NEAR(link_loss({y1, y2}, {p1, p2}).item(), bce_loss(p1, y1).item() + bce_loss(p2, y2).item(), 1e-15);
    EXPECT_THROW(link_loss({y1}, {p1, p2}), DimensionError);
}

TEST(Topology, UpdateIsBinarySymmetricAndConstant) {
    auto ds = partial(9, 3, 5);
    auto c = tiny_config(ds);
    auto m = Model::init(c, 2);
    auto plan = plan_episode(ds, Episode::parse("s0,s1->t0"), c);
    const auto& t = plan.targets[0];
    auto out = forward_target(m, t);
    const Tensor& a = out.updated_adjacency;
    ASSERT_EQ(a.rows(), t.n * t.p);
    ASSERT_EQ(a.cols(), t.p);
    EXPECT_FALSE(a.requires_grad());
    for (std::size_t b = 0; b < t.n; ++b)
        for (std::size_t i = 0; i < t.p; ++i) {
            EXPECT_EQ(a.at(b * t.p + i, i), 1.0);
            for (std::size_t j = 0; j < t.p; ++j) {
                const double v = a.at(b * t.p + i, j);
                EXPECT_TRUE(v == 0.0 || v == 1.0);
                EXPECT_EQ(v, a.at(b * t.p + j, i));
            }
        }
    EXPECT_EQ(out.prediction.rows(), t.n * t.p);
    EXPECT_EQ(out.prediction_tilde.rows(), t.n * t.pt);
}

TEST(Topology, PredictRemainingIsEmptyWhenUnionCoversUniverse) {
    auto ds = covered(6, 2, 3);
    auto c = tiny_config(ds);
    auto m = Model::init(c, 1);
    auto plan = plan_episode(ds, Episode::parse("s0,s1->t0"), c);
    const auto& t = plan.targets[0];
    ASSERT_EQ(t.pt, t.p);
    auto enc = m.encoder_net.generate(t.sources[0].meta);
    auto dec = m.decoder_net.generate(t.meta);
    auto rest = predict_remaining(c, tile_rows(Tensor::identity(t.p), t.n), t.truth, t.pt, {enc}, dec);
    EXPECT_EQ(rest.rows(), 0u);
    EXPECT_TRUE(forward_target(m, t).updated_adjacency.size() == 0);
}

TEST(Forward, ComposesEncodePoolDecode) {
    auto ds = covered(6, 3, 7);
    auto c = tiny_config(ds);
    auto m = Model::init(c, 4);
    auto plan = plan_episode(ds, Episode::parse("s0,s1->t0"), c);
    const auto& t = plan.targets[0];
    std::vector<Tensor> zs;
    for (const auto& s : t.sources) zs.push_back(encode_mode(c, s.graph, s.x, m.encoder_net.generate(s.meta)));
    Tensor expected = decode_mode(c, t.target_graph, pool_embeddings(zs), m.decoder_net.generate(t.meta));
    auto out = forward_target(m, t);
    EXPECT_EQ(values_of(out.prediction), values_of(expected));
    EXPECT_EQ(out.node_order, ds.universe);
}

TEST(Forward, DuplicateSourceIsIdempotent) {
    auto ds = covered(6, 3, 8);
    auto c = tiny_config(ds);
    auto m = Model::init(c, 4);
    auto single = forward_episode(m, plan_episode(ds, Episode::parse("s0->t0"), c));
    auto doubled = forward_episode(m, plan_episode(ds, Episode::parse("s0,s0->t0"), c));
    const auto a = values_of(single.targets[0].prediction), b = values_of(doubled.targets[0].prediction);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(Forward, SourceOrderDoesNotMatter) {
    for (auto kind : {LayerKind::gcn, LayerKind::gin, LayerKind::gat}) {
        auto ds = covered(7, 2, 9, 1);
        auto c = tiny_config(ds);
        c.gnn = kind;
        c.heads = 2;
        c.link_dim = 4;
        auto m = Model::init(c, 6);
        auto ab = forward_episode(m, plan_episode(ds, Episode::parse("s0,s1->t0"), c));
        auto ba = forward_episode(m, plan_episode(ds, Episode::parse("s1,s0->t0"), c));
        const auto a = values_of(ab.targets[0].prediction), b = values_of(ba.targets[0].prediction);
        for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
        EXPECT_NEAR(ab.l2.item(), ba.l2.item(), 1e-12);
    }
}

TEST(Forward, PartialUnionPutsRemainingNodesLast) {
    auto ds = partial(9, 2, 11);
    auto c = tiny_config(ds);
    auto plan = plan_episode(ds, Episode::parse("s0,s1->t0"), c);
    const auto& t = plan.targets[0];
    ASSERT_LT(t.pt, t.p);
    EXPECT_TRUE(std::is_sorted(t.node_order.begin(), t.node_order.begin() + static_cast<long>(t.pt)));
    EXPECT_TRUE(std::is_sorted(t.node_order.begin() + static_cast<long>(t.pt), t.node_order.end()));
    EXPECT_EQ(t.rest.rows(), t.n * (t.p - t.pt));
    EXPECT_TRUE(t.zero_filled.empty());
}

TEST(Loss, MaskedEntriesDoNotContribute) {
    auto ds = covered(6, 2, 12, 1);
    auto& target = ds.modes[static_cast<std::size_t>(ds.find_mode("t0"))];
    // Drop attribute rows for two nodes of the target.
    std::vector<std::string> kept(target.attr_node_ids.begin() + 2, target.attr_node_ids.end());
    for (auto& s : target.samples) {
        Tensor cut = Tensor::zeros({kept.size(), ds.d});
        for (std::size_t r = 0; r < kept.size(); ++r) cut.at(r, 0) = s.at(r + 2, 0);
        s = cut;
    }
    target.attr_node_ids = kept;
    auto c = tiny_config(ds);
    auto m = Model::init(c, 3);
    auto plan = plan_episode(ds, Episode::parse("s0,s1->t0"), c);
    auto& t = plan.targets[0];
    EXPECT_EQ(t.observed, 2 * 4u);
    const double before = forward_target(m, t).l1.item();
    for (std::size_t i = 0; i < t.n; ++i) t.truth.mutable_values()[i * t.p] += 100.0;  // unobserved node rows
    EXPECT_DOUBLE_EQ(forward_target(m, t).l1.item(), before);

    auto out = forward_target(m, t);
    double manual = 0.0;
    for (std::size_t k = 0; k < t.truth.size(); ++k)
        if (t.mask[k] == 1.0) manual += std::pow(out.prediction[k] - t.truth[k], 2);
    EXPECT_NEAR(before, manual / static_cast<double>(t.observed), 1e-12);
}

TEST(Loss, RhoZeroLeavesLinkPredictorWithoutGradient) {
    auto ds = covered(6, 2, 13);
    auto c = tiny_config(ds);
    c.rho = 0.0;
    auto m = Model::init(c, 5);
    auto obj = objective(m, {plan_episode(ds, Episode::parse("s0,s1->t0,t1"), c)});
    obj.total.backward();
    for (const auto& [name, t] : m.registry()) {
        if (name.rfind("phi", 0) != 0) continue;
        for (double g : t.grad()) EXPECT_EQ(g, 0.0) << name;
    }
    EXPECT_DOUBLE_EQ(obj.report.total, obj.report.l1);
}

TEST(Loss, TotalCombinesWithRho) {
    auto r = total_loss(0.5, 2.0, 0.25);
    EXPECT_DOUBLE_EQ(r.total, 1.0);
    EXPECT_THROW(total_loss(1, 1, -0.1), ConfigError);
}

TEST(Gradients, EndToEndMatchesFiniteDifferences) {
    for (bool p_tilde_lt_p : {false, true}) {
        auto ds = p_tilde_lt_p ? partial(6, 2, 21) : covered(6, 2, 21);
        auto c = tiny_config(ds);
        auto m = Model::init(c, 8);
        std::vector<EpisodePlan> plans{plan_episode(ds, Episode::parse(p_tilde_lt_p ? "s0,s1->t0" : "s0,s1->t0,t1"), c)};
        auto fn = [&] { return objective(m, plans).total; };
        const auto r = grad_check_detailed(fn, m.trainable());
        EXPECT_LT(r.max_rel_error, 1e-6) << "param " << r.worst_param << " index " << r.worst_index;
    }
}

TEST(Training, ZeroLearningRateKeepsParameters) {
    auto ds = covered(6, 2, 14);
    auto c = tiny_config(ds);
    auto m = Model::init(c, 9);
    std::vector<std::vector<double>> before;
    for (const auto& t : m.trainable()) before.push_back(values_of(t));
    TrainOptions o;
    o.max_steps = 5;
    o.learning_rate = 0.0;
    auto r = train(m, {plan_episode(ds, Episode::parse("s0,s1->t0"), c)}, o);
    auto params = m.trainable();
    for (std::size_t k = 0; k < params.size(); ++k) EXPECT_EQ(values_of(params[k]), before[k]);
    EXPECT_DOUBLE_EQ(r.history.front().total, r.final_loss.total);
}

TEST(Training, DeterministicForFixedSeed) {
    auto ds = covered(6, 4, 15);
    auto c = tiny_config(ds);
    std::vector<EpisodePlan> plans{plan_episode(ds, Episode::parse("s0,s1->t0,t1"), c)};
    TrainOptions o;
    o.max_steps = 20;
    auto m1 = Model::init(c, 42), m2 = Model::init(c, 42);
    auto r1 = train(m1, plans, o), r2 = train(m2, plans, o);
    ASSERT_EQ(r1.history.size(), r2.history.size());
    for (std::size_t i = 0; i < r1.history.size(); ++i) EXPECT_EQ(r1.history[i].total, r2.history[i].total);
    auto p1 = m1.registry(), p2 = m2.registry();
    for (std::size_t k = 0; k < p1.size(); ++k) EXPECT_EQ(values_of(p1[k].second), values_of(p2[k].second));
}

TEST(Training, ReducesLoss) {
    auto ds = covered(8, 8, 16);
    auto c = default_config(ds);
    auto m = Model::init(c, 1);
    TrainOptions o;
    o.max_steps = 60;
    auto r = train(m, {plan_episode(ds, Episode::parse("s0,s1->t0,t1"), c)}, o);
    EXPECT_LT(r.final_loss.l1, r.history.front().l1);
    EXPECT_EQ(r.history.size(), r.steps);
}

TEST(Training, ExplodingStepsRaiseDivergence) {
    auto ds = covered(6, 2, 17);
    auto c = tiny_config(ds);
    c.activation = Activation::relu();
    auto m = Model::init(c, 2);
    TrainOptions o;
    o.max_steps = 50;
    o.optimizer = "sgd";
    o.learning_rate = 1e200;
    EXPECT_THROW(train(m, {plan_episode(ds, Episode::parse("s0,s1->t0"), c)}, o), DivergenceError);
    o.optimizer = "rmsprop";
    EXPECT_THROW(train(m, {}, o), ConfigError);
}

TEST(Training, HypergnnFreezesEncoderHypernetwork) {
    auto ds = covered(6, 2, 18);
    auto c = tiny_config(ds);
    c.ablation = Ablation::hypergnn;
    auto m = Model::init(c, 3);
    std::map<std::string, std::vector<double>> before;
    for (const auto& [name, t] : m.registry()) before[name] = values_of(t);
    TrainOptions o;
    o.max_steps = 5;
    o.learning_rate = 1e-2;
    train(m, {plan_episode(ds, Episode::parse("s0,s1->t0"), c)}, o);
    bool decoder_moved = false;
    for (const auto& [name, t] : m.registry()) {
        if (name.rfind("gamma_e", 0) == 0) {
            EXPECT_EQ(values_of(t), before[name]) << name;
        }
        if (name.rfind("gamma_d", 0) == 0) decoder_moved = decoder_moved || values_of(t) != before[name];
    }
    EXPECT_TRUE(decoder_moved);
    EXPECT_EQ(effective_sources(c, Episode::parse("s1,s0->t0"), false), std::vector<std::string>{"s1"});
}

TEST(Ablations, MetaAndHeadVariants) {
    auto ds = covered(6, 2, 19);
    auto c = tiny_config(ds);
    c.ablation = Ablation::hypergnn_2;
    EXPECT_EQ(c.hyper_meta(ds.modes[0].spec.meta).size(), ds.type_dims);
    auto m2 = Model::init(c, 1);
    EXPECT_EQ(m2.encoder_net.meta_dim(), ds.type_dims);

    c.ablation = Ablation::hypergnn_1;
    auto m1 = Model::init(c, 1);
    EXPECT_EQ(m1.head.size(), c.head_layers);
    bool has_head = false;
    for (const auto& [name, _] : m1.registry()) has_head = has_head || name.rfind("head.", 0) == 0;
    EXPECT_TRUE(has_head);
    auto out = forward_episode(m1, plan_episode(ds, Episode::parse("s0,s1->t0"), c));
    EXPECT_EQ(out.targets[0].prediction.rows(), 2 * ds.num_nodes());

    c.ablation = Ablation::single_input_eval;
    EXPECT_EQ(effective_sources(c, Episode::parse("s0,s1->t0"), false).size(), 2u);
    EXPECT_EQ(effective_sources(c, Episode::parse("s0,s1->t0"), true).size(), 1u);
}

TEST(Parameters, CountMatchesRegistryAndIgnoresModeCount) {
    for (auto ablation : {Ablation::full, Ablation::hypergnn, Ablation::hypergnn_1, Ablation::hypergnn_2}) {
        std::vector<std::size_t> counts;
        for (std::size_t modes : {2u, 4u, 8u}) {
            auto ds = covered(6, 2, 20, modes - 2 == 0 ? 1 : modes - 2);
            auto c = tiny_config(ds);
            c.ablation = ablation;
            auto m = Model::init(c, 1);
            EXPECT_EQ(m.parameter_count(), trainable_param_count(c));
            counts.push_back(m.parameter_count());
        }
        EXPECT_EQ(counts[0], counts[1]);
        EXPECT_EQ(counts[1], counts[2]);
    }
}

TEST(Parameters, RegistryNamesAreUnique) {
    auto ds = covered(6, 2, 22);
    auto c = default_config(ds);
    c.ablation = Ablation::hypergnn_1;
    std::set<std::string> names;
    for (const auto& [name, _] : Model::init(c, 1).registry()) EXPECT_TRUE(names.insert(name).second) << name;
    EXPECT_TRUE(names.count("gamma_e.W0"));
    EXPECT_TRUE(names.count("phi.l0.W"));
}

TEST(Evaluation, MetricsAndOverrides) {
    auto ds = covered(6, 3, 23, 3);
    auto c = tiny_config(ds);
    auto m = Model::init(c, 2);
    auto r = generalize(m, ds, Episode::parse("s0,s1->t2", Episode::Phase::generalize));
    ASSERT_EQ(r.targets.size(), 1u);
    const auto& t = r.targets[0];
    EXPECT_EQ(t.generalization_error.size(), 3u);
    double sum = 0.0;
    for (double e : t.generalization_error) sum += e;
    EXPECT_NEAR(t.mse * static_cast<double>(ds.num_nodes() * 3), sum, 1e-9);
    EXPECT_NEAR(t.mean_generalization_error, sum / 3.0, 1e-12);

    MetaOverrides swap{{"t2", ds.mode("t0").spec.meta}};
    auto with_t0 = generalize(m, ds, Episode::parse("s0,s1->t2"), swap);
    EXPECT_NE(with_t0.targets[0].mse, t.mse);
    EXPECT_THROW(generalize(m, ds, Episode::parse("s0,s1->t9")), ValidationError);
}
