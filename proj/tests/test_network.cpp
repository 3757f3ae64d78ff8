#include "cesrnn/checkpoint.hpp"
#include "cesrnn/errors.hpp"
#include "cesrnn/network.hpp"
#include "cesrnn/preprocess.hpp"
#include "cesrnn/synthetic.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace cesrnn;
using namespace cesrnn::network;
using cesrnn::testing::for_all;
using cesrnn::testing::Gen;

namespace {

NetworkConfig tiny() {
    NetworkConfig c;
    c.input_window = 6;
    c.horizon = 2;
    c.n_exogenous = 2;
    c.embedding = 2;
    c.context_size = 2;
    c.hidden1 = 4;
    c.hidden2 = 4;
    return c;
}

ModelParameters random_model(const NetworkConfig& cfg, std::uint64_t seed, std::vector<std::string> ids = {"ETH"}) {
    ModelParameters m(cfg, std::move(ids), "BTC");
    m.initialize(seed);
    Gen g(seed + 77);
    // Move away from the neutral initial values so every path is live.
    for (ad::Parameter* p : m.parameters()) {
        for (Eigen::Index i = 0; i < p->size(); ++i) {
            p->value().data()[i] += g.uniform(-0.3, 0.3);
        }
    }
    return m;
}

void zero_all(ModelParameters& m) {
    for (ad::Parameter* p : m.parameters()) {
        p->value().setZero();
    }
}

ad::Vector run_main(ModelParameters& m, const ad::Vector& pattern, int steps = 1) {
    ad::Tape tape(false);
    RecurrentState state(m.config);
    ad::Vector out;
    for (int t = 0; t < steps; ++t) {
        const MainOutput o = main_forward(m, tape.constant(pattern), state);
        out = ad::concat({o.point, o.lower, o.upper, o.delta_alpha}).value();
    }
    return out;
}

} // namespace

TEST(NetworkConfig, HeadWidths) {
    for (int h : {1, 7, 28}) {
        for (int u : {1, 3, 8}) {
            NetworkConfig c;
            c.horizon = h;
            c.context_size = u;
            EXPECT_EQ(c.main_head_width(), 3 * h + 1);
            EXPECT_EQ(c.context_head_width(), u + 1);
            c.n_exogenous = 2;
            ModelParameters m(c, {"ETH"}, "BTC");
            EXPECT_EQ(m.main.head_weights.rows(), 3 * h + 1);
            EXPECT_EQ(m.context.head_weights.rows(), u + 1);
        }
    }
    NetworkConfig c;
    c.horizon = 1;
    EXPECT_EQ(c.main_head_width(), 4);
    c.horizon = 28;
    EXPECT_EQ(c.main_head_width(), 85);
    c.context_size = 3;
    EXPECT_EQ(c.context_head_width(), 4);
}

TEST(NetworkConfig, ValidationAndRoundTrip) {
    NetworkConfig c = tiny();
    c.embedding = 6;
    EXPECT_THROW(c.validate(), ConfigError);
    c = tiny();
    c.horizon = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = tiny();
    KeyValueConfig kv;
    c.write(kv);
    EXPECT_EQ(NetworkConfig::read(kv), c);
    EXPECT_EQ(NetworkConfig::dilation1, 2);
    EXPECT_EQ(NetworkConfig::dilation2, 4);
}

TEST(EmbedExo, ZeroMapGivesZeros) {
    std::vector<ad::Parameter> w{ad::Parameter("w0", 2, 3), ad::Parameter("w1", 2, 3)};
    std::vector<ad::Parameter> b{ad::Parameter("b0", 2), ad::Parameter("b1", 2)};
    for (auto& p : w) p.value().setZero();
    for (auto& p : b) p.value().setZero();
    ad::Tape tape;
    const ad::Var e = embed_exo(tape.constant(ad::Vector::LinSpaced(6, 1, 6)), w, b, 3);
    EXPECT_EQ(e.value(), ad::Vector::Zero(4));
}

TEST(EmbedExo, IdentityMapPassesBlocksThrough) {
    std::vector<ad::Parameter> w{ad::Parameter("w0", 3, 3), ad::Parameter("w1", 3, 3)};
    std::vector<ad::Parameter> b{ad::Parameter("b0", 3), ad::Parameter("b1", 3)};
    for (auto& p : w) p.value().setIdentity();
    for (auto& p : b) p.value().setZero();
    ad::Tape tape;
    const ad::Vector x = ad::Vector::LinSpaced(6, 1, 6);
    EXPECT_EQ(embed_exo(tape.constant(x), w, b, 3).value(), x);
}

TEST(EmbedExo, HandComputedProducts) {
    std::vector<ad::Parameter> w{ad::Parameter("w0", 2, 3), ad::Parameter("w1", 2, 3)};
    std::vector<ad::Parameter> b{ad::Parameter("b0", 2), ad::Parameter("b1", 2)};
    w[0].value() << 1, 0, 2, 0, 1, -1;
    w[1].value() << 0.5, 0.5, 0, 1, 1, 1;
    b[0].value() << 0, 1;
    b[1].value() << -1, 0;
    ad::Vector x(6);
    x << 1, 2, 3, 4, 5, 6;
    ad::Tape tape;
    const ad::Vector e = embed_exo(tape.constant(x), w, b, 3).value();
    // [1+6, 2-3+1, 2+2.5-1, 15]
    ad::Vector expected(4);
    expected << 7, 0, 3.5, 15;
    EXPECT_EQ(e, expected);
    EXPECT_THROW(embed_exo(tape.constant(ad::Vector::Zero(5)), w, b, 3), ShapeError);
}

TEST(Modulation, WorkedExamples) {
    ad::Tape tape;
    ad::Vector x(3), p(3);
    x << 1, 2, 3;
    p << 2, 0.5, 1;
    EXPECT_EQ(modulate_exo(tape.constant(x), tape.constant(ad::Vector::Ones(3))).value(), x);
    EXPECT_EQ(modulate_exo(tape.constant(x), tape.constant(ad::Vector::Zero(3))).value(), ad::Vector::Zero(3));
    EXPECT_EQ(modulate_exo(tape.constant(x), tape.constant(p)).value(), (ad::Vector(3) << 2, 1, 3).finished());

    ad::Vector r(2), g(2);
    r << 0.2, -0.4;
    g << 3, 0.5;
    EXPECT_EQ(modulate_context(tape.constant(r), tape.constant(ad::Vector::Ones(2))).value(), r);
    EXPECT_EQ(modulate_context(tape.constant(ad::Vector::Zero(2)), tape.constant(g)).value(), ad::Vector::Zero(2));
    const ad::Vector rg = modulate_context(tape.constant(r), tape.constant(g)).value();
    EXPECT_NEAR(rg[0], 0.6, 1e-15);
    EXPECT_NEAR(rg[1], -0.2, 1e-15);
    EXPECT_THROW(modulate_exo(tape.constant(x), tape.constant(r)), ShapeError);
    EXPECT_THROW(modulate_context(tape.constant(r), tape.constant(x)), ShapeError);
}

TEST(Modulation, DifferentiableInBothFactors) {
    ad::Parameter x("x", 3), p("p", 3);
    x.value() << 1, -2, 3;
    p.value() << 0.5, 4, -1;
    ad::Tape tape;
    tape.backward(ad::sum(modulate_exo(tape.parameter(x), tape.parameter(p))));
    EXPECT_EQ(x.grad(), p.value());
    EXPECT_EQ(p.grad(), x.value());
}

TEST(MainForward, ZeroNetworkGivesZeroBundle) {
    const NetworkConfig cfg = tiny();
    ModelParameters m(cfg, {"ETH"}, "BTC");
    zero_all(m);
    Gen g(1);
    const ad::Vector out = run_main(m, g.vector(cfg.main_input_size()), 3);
    EXPECT_EQ(out.size(), cfg.main_head_width());
    EXPECT_EQ(out, ad::Vector::Zero(cfg.main_head_width()));

    ad::Tape tape;
    RecurrentState state(cfg);
    const ContextOutput c = context_forward(m, tape.constant(g.vector(cfg.context_input_size())), state);
    EXPECT_EQ(c.context.value(), ad::Vector::Zero(cfg.context_size));
    EXPECT_EQ(c.delta_alpha.scalar(), 0.0);
}

TEST(MainForward, SplitsHeadIntoFourParts) {
    NetworkConfig cfg = tiny();
    cfg.horizon = 7;
    cfg.context_size = 3;
    ModelParameters m = random_model(cfg, 2);
    ad::Tape tape;
    RecurrentState state(cfg);
    Gen g(2);
    const MainOutput o = main_forward(m, tape.constant(g.vector(cfg.main_input_size())), state);
    EXPECT_EQ(o.point.size(), 7);
    EXPECT_EQ(o.lower.size(), 7);
    EXPECT_EQ(o.upper.size(), 7);
    EXPECT_EQ(o.delta_alpha.size(), 1);
    RecurrentState cs(cfg);
    const ContextOutput c = context_forward(m, tape.constant(g.vector(cfg.context_input_size())), cs);
    EXPECT_EQ(c.context.size() + c.delta_alpha.size(), 4);
    EXPECT_THROW(main_forward(m, tape.constant(g.vector(cfg.context_input_size())), state), ShapeError);
    EXPECT_THROW(context_forward(m, tape.constant(g.vector(cfg.main_input_size())), cs), ShapeError);
}

TEST(MainForward, ContextBlockChangesTheOutput) {
    const NetworkConfig cfg = tiny();
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        ModelParameters m = random_model(cfg, seed);
        Gen g(seed);
        ad::Vector pattern = g.vector(cfg.main_input_size());
        const ad::Vector base = run_main(m, pattern);
        pattern[cfg.main_input_size() - 1] += 1e-3;
        const ad::Vector moved = run_main(m, pattern);
        EXPECT_GT((moved - base).cwiseAbs().maxCoeff(), 0.0);
    }
}

TEST(MainForward, ModulationIdentityAtInitialization) {
    const NetworkConfig cfg = tiny();
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        ModelParameters m(cfg, {"ETH"}, "BTC");
        m.initialize(seed);
        SeriesParameters& sp = m.series[0];
        EXPECT_EQ(sp.exo_modulation.value(), ad::Matrix::Ones(cfg.embedded_size(), 1));
        EXPECT_EQ(sp.context_modulation.value(), ad::Matrix::Ones(cfg.context_size, 1));
        EXPECT_EQ(sp.alpha_logit.value()(0, 0), 0.0);

        Gen g(seed);
        ad::Tape tape;
        const ad::Var x_in = tape.constant(g.vector(cfg.input_window));
        const ad::Var blocks = tape.constant(g.vector(cfg.n_exogenous * cfg.input_window));
        const ad::Var r = tape.constant(g.vector(cfg.context_size));
        const ad::Var level = tape.constant(123.0);
        const ad::Var emb = embed_exo(blocks, m.main.embed_weights, m.main.embed_bias, cfg.input_window);

        const ad::Var modulated =
            preprocess::assemble_input(x_in, modulate_exo(emb, tape.parameter(sp.exo_modulation)), level,
                                       modulate_context(r, tape.parameter(sp.context_modulation)));
        const ad::Var bypassed = preprocess::assemble_input(x_in, emb, level, r);
        RecurrentState s1(cfg), s2(cfg);
        const MainOutput a = main_forward(m, modulated, s1);
        const MainOutput b = main_forward(m, bypassed, s2);
        EXPECT_EQ(a.point.value(), b.point.value());
        EXPECT_EQ(a.lower.value(), b.lower.value());
        EXPECT_EQ(a.upper.value(), b.upper.value());
        EXPECT_EQ(a.delta_alpha.value(), b.delta_alpha.value());
    }
}

TEST(MainForward, AttentionIsNeutralAtInitialization) {
    const NetworkConfig cfg = tiny();
    ModelParameters m(cfg, {"ETH"}, "BTC");
    m.initialize(5);
    Gen g(5);
    ad::Tape tape;
    cells::CellState a(cfg.hidden1, 2), b(cfg.hidden1, 2);
    for (int t = 0; t < 5; ++t) {
        const ad::Var x = tape.constant(g.vector(cfg.main_input_size()));
        const cells::AttentiveOutput out = cells::adrnn_step(m.main.layer1, x, a, b);
        EXPECT_EQ(out.attention.value(), ad::Vector::Ones(cfg.main_input_size()));
        EXPECT_EQ(out.cell.h.value(), cells::drnn_step(m.main.layer1.cell, x, b).h.value());
        a.push(out.attention_cell.h, out.attention_cell.c);
        b.push(out.cell.h, out.cell.c);
    }
}

TEST(MainForward, ShortcutKeepsAPathWhenLayerTwoIsSilenced) {
    const NetworkConfig cfg = tiny();
    ModelParameters m = random_model(cfg, 9);
    m.main.layer2.weights.value().setZero();
    m.main.layer2.bias.value().setZero();
    Gen g(9);
    ad::Vector pattern = g.vector(cfg.main_input_size());
    const ad::Vector base = run_main(m, pattern);
    pattern[0] += 1e-3;
    EXPECT_GT((run_main(m, pattern) - base).cwiseAbs().maxCoeff(), 0.0);
    // With the shortcut removed too, the head sees only its bias.
    m.main.shortcut.value().setZero();
    const ad::Vector flat = run_main(m, pattern);
    EXPECT_EQ(flat, m.main.head_bias.value().col(0));
}

TEST(MainForward, DeterministicForFixedSeed) {
    const NetworkConfig cfg = tiny();
    ModelParameters a(cfg, {"ETH"}, "BTC"), b(cfg, {"ETH"}, "BTC");
    a.initialize(42);
    b.initialize(42);
    Gen g(3);
    const ad::Vector pattern = g.vector(cfg.main_input_size());
    EXPECT_EQ(run_main(a, pattern, 7), run_main(b, pattern, 7));
    ModelParameters c(cfg, {"ETH"}, "BTC");
    c.initialize(43);
    EXPECT_NE(run_main(a, pattern, 7), run_main(c, pattern, 7));
}

namespace {

struct Fixture {
    dataset::SeriesPanel panel;
    std::vector<PreparedSeries> prepared;

    explicit Fixture(int n_series, int days = 60) {
        synthetic::PanelSpec spec;
        spec.n_series = n_series;
        spec.days = days;
        panel = synthetic::make_panel(spec);
        for (const auto& c : panel.coins) {
            prepared.push_back(prepare_series(c, training_means(c, panel.last_day())));
        }
    }
};

} // namespace

TEST(StepDay, OneLevelUpdatePerSeriesPerDay) {
    Fixture f(2);
    const NetworkConfig cfg = tiny();
    ModelParameters m(cfg, {"ETH"}, "BTC");
    m.initialize(1);
    ad::Tape tape(false);
    EngineState e = make_engine(m, tape, &f.prepared[0], {&f.prepared[1]});
    long prev_level = 0, prev_alpha = 0;
    for (std::ptrdiff_t day = 0; day < 30; ++day) {
        const auto out = step_day(m, e, day);
        const long levels = e.level_updates - prev_level;
        const long alphas = e.alpha_updates - prev_alpha;
        if (day >= cfg.es_warmup - 1) {
            EXPECT_EQ(levels, 2) << day;
        } else {
            EXPECT_EQ(levels, 0) << day;
        }
        EXPECT_EQ(alphas, day >= cfg.first_network_day() ? 2 : 0) << day;
        EXPECT_EQ(out.size(), day >= cfg.first_network_day() ? 1u : 0u);
        prev_level = e.level_updates;
        prev_alpha = e.alpha_updates;
    }
}

TEST(StepDay, IdenticalSeriesGiveIdenticalBundles) {
    Fixture f(2);
    PreparedSeries twin = f.prepared[1];
    twin.coin_id = "TWIN";
    const NetworkConfig cfg = tiny();
    ModelParameters m(cfg, {"ETH", "TWIN"}, "BTC");
    m.initialize(3);
    ad::Tape tape(false);
    EngineState e = make_engine(m, tape, &f.prepared[0], {&f.prepared[1], &twin});
    for (std::ptrdiff_t day = 0; day < 40; ++day) {
        const auto out = step_day(m, e, day);
        if (!out.empty()) {
            ASSERT_EQ(out.size(), 2u);
            EXPECT_EQ(out[0].output.point.value(), out[1].output.point.value());
            EXPECT_EQ(out[0].output.upper.value(), out[1].output.upper.value());
            EXPECT_EQ(out[0].level.scalar(), out[1].level.scalar());
        }
    }
}

TEST(StepDay, ZeroedContextMakesContextModulationIrrelevant) {
    Fixture f(2);
    const NetworkConfig cfg = tiny();
    auto run = [&](bool zero_context, double g_scale) {
        ModelParameters m = random_model(cfg, 4);
        m.series[0].context_modulation.value() *= g_scale;
        ad::Tape tape(false);
        EngineState e = make_engine(m, tape, &f.prepared[0], {&f.prepared[1]});
        e.zero_context = zero_context;
        std::vector<ad::Vector> points;
        for (std::ptrdiff_t day = 0; day < 40; ++day) {
            for (const auto& o : step_day(m, e, day)) {
                points.push_back(o.output.point.value());
            }
        }
        return points;
    };
    EXPECT_EQ(run(true, 1.0), run(true, -7.5));
    EXPECT_NE(run(false, 1.0), run(false, -7.5));
    EXPECT_NE(run(true, 1.0), run(false, 1.0));
}

TEST(StepDay, UnknownSeriesIsStateError) {
    Fixture f(2);
    ModelParameters m(tiny(), {"ETH"}, "BTC");
    ad::Tape tape(false);
    EXPECT_THROW(make_engine(m, tape, nullptr, {&f.prepared[0]}), StateError);
}

TEST(PrepareSeries, UsesTrainingPeriodMeansOnly) {
    Fixture f(1, 100);
    dataset::CoinSeries coin = f.panel.coins[0];
    const auto clean = training_means(coin, 59);
    for (auto& p : coin.exogenous) {
        for (std::size_t t = 60; t < p.size(); ++t) {
            p[t] = 1e30;
        }
    }
    EXPECT_EQ(training_means(coin, 59), clean);
}

TEST(Checkpoint, RoundTripIsByteIdentical) {
    for (std::uint64_t seed : {1, 2, 3}) {
        Checkpoint ck;
        ck.model = random_model(tiny(), seed, {"ETH", "LTC"});
        ck.exo_means["ETH"] = {1.0 / 3.0, 2e-300};
        ck.exo_means["LTC"] = {0.0, 12345.678};
        ck.metadata.set("horizon", "2");
        ck.metadata.set("seed", std::to_string(seed));
        const std::string text = serialize_checkpoint(ck);
        EXPECT_EQ(text.rfind(kCheckpointFormat, 0), 0u);
        const Checkpoint back = deserialize_checkpoint(text);
        EXPECT_EQ(serialize_checkpoint(back), text);
        EXPECT_EQ(back.model.config, ck.model.config);
        EXPECT_EQ(back.model.series_ids, ck.model.series_ids);
        EXPECT_EQ(back.exo_means, ck.exo_means);
        auto pa = ck.model.parameters();
        auto pb = const_cast<ModelParameters&>(back.model).parameters();
        ASSERT_EQ(pa.size(), pb.size());
        for (std::size_t i = 0; i < pa.size(); ++i) {
            EXPECT_EQ(pa[i]->name(), pb[i]->name());
            EXPECT_EQ(pa[i]->value(), pb[i]->value());
        }
    }
}

TEST(Checkpoint, FileRoundTripAndCorruption) {
    cesrnn::testing::TempDir dir("ckpt");
    Checkpoint ck;
    ck.model = random_model(tiny(), 8);
    save_checkpoint(dir / "m.ckpt", ck);
    const Checkpoint back = load_checkpoint(dir / "m.ckpt");
    save_checkpoint(dir / "m2.ckpt", back);
    EXPECT_EQ(cesrnn::testing::read_text(dir / "m.ckpt"), cesrnn::testing::read_text(dir / "m2.ckpt"));

    std::string text = serialize_checkpoint(ck);
    EXPECT_THROW(deserialize_checkpoint("NOT A CHECKPOINT\n"), StateError);
    EXPECT_THROW(deserialize_checkpoint(text.substr(0, text.size() / 2)), StateError);
    EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), StateError);
}
