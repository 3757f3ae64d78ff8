#include "cesrnn/cells.hpp"
#include "cesrnn/errors.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <memory>

using namespace cesrnn;
using namespace cesrnn::cells;
using cesrnn::testing::for_all;
using cesrnn::testing::Gen;

namespace {

double sig(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// Independent element-by-element evaluation of the cell formulas.
void scalar_cell(const CellParameters& p, const ad::Vector& x, const ad::Vector& hr, const ad::Vector& hd,
                 const ad::Vector& cr, const ad::Vector& cd, ad::Vector& h, ad::Vector& c) {
    const int s = p.hidden_size;
    const int nx = p.input_size;
    std::vector<double> u;
    for (int k = 0; k < nx; ++k) u.push_back(x[k]);
    for (int k = 0; k < s; ++k) u.push_back(hr[k]);
    for (int k = 0; k < s; ++k) u.push_back(hd[k]);
    auto gate = [&](int row) {
        double acc = p.bias.value()(row, 0);
        for (std::size_t j = 0; j < u.size(); ++j) {
            acc += p.weights.value()(row, static_cast<Eigen::Index>(j)) * u[j];
        }
        return acc;
    };
    h.resize(s);
    c.resize(s);
    for (int k = 0; k < s; ++k) {
        const double f = sig(gate(k));
        const double i = sig(gate(s + k));
        const double cand = std::tanh(gate(2 * s + k));
        const double o = sig(gate(3 * s + k));
        const double mix = f * cr[k] + (1.0 - f) * cd[k];
        c[k] = (1.0 - i) * mix + i * cand;
        h[k] = o * std::tanh(c[k]);
    }
}

CellParameters random_cell(Gen& g, int nx, int s, double scale = 1.0) {
    CellParameters p("cell", nx, s);
    g.fill(p.weights, scale);
    g.fill(p.bias, scale);
    return p;
}

ad::Var weighted_sum(ad::Tape& tape, const ad::Var& v, const ad::Vector& w) {
    return ad::sum(v * tape.constant(w));
}

} // namespace

TEST(DrnnStep, ZeroParametersZeroStateIsAFixedPoint) {
    CellParameters p("c", 3, 4);
    p.weights.value().setZero();
    p.bias.value().setZero();
    ad::Tape tape;
    const ad::Vector x = ad::Vector::Constant(3, 0.7);
    const ad::Var z = tape.constant(ad::Vector::Zero(4));
    const CellOutput out = drnn_step(p, tape.constant(x), z, z, z, z);
    EXPECT_EQ(out.c.value(), ad::Vector::Zero(4));
    EXPECT_EQ(out.h.value(), ad::Vector::Zero(4));
    ad::Vector h, c;
    scalar_cell(p, x, ad::Vector::Zero(4), ad::Vector::Zero(4), ad::Vector::Zero(4), ad::Vector::Zero(4), h, c);
    EXPECT_EQ(h, ad::Vector::Zero(4));
}

TEST(DrnnStep, EqualCellStatesFuseToThemselves) {
    Gen g(3);
    for (int trial = 0; trial < 20; ++trial) {
        CellParameters p = random_cell(g, 2, 3);
        const ad::Vector c = g.vector(3);
        ad::Tape tape;
        const ad::Var x = tape.constant(g.vector(2));
        const ad::Var hr = tape.constant(g.vector(3));
        const ad::Var hd = tape.constant(g.vector(3));
        const CellOutput a = drnn_step(p, x, hr, hd, tape.constant(c), tape.constant(c));
        // Whatever the fusion gate, c_mix = c; rewrite the fusion rows and compare.
        p.weights.value().topRows(3).setRandom();
        p.bias.value().topRows(3).setRandom();
        const CellOutput b = drnn_step(p, x, hr, hd, tape.constant(c), tape.constant(c));
        EXPECT_EQ(a.c.value(), b.c.value());
        EXPECT_EQ(a.h.value(), b.h.value());
    }
}

TEST(DrnnStep, MatchesScalarOracle) {
    for_all(200, 12, [](Gen& g) {
        const int nx = g.integer(1, 5);
        CellParameters p = random_cell(g, nx, 3, 1.5);
        const ad::Vector x = g.vector(nx, 2.0), hr = g.vector(3), hd = g.vector(3), cr = g.vector(3, 2.0),
                         cd = g.vector(3, 2.0);
        ad::Tape tape;
        const CellOutput out = drnn_step(p, tape.constant(x), tape.constant(hr), tape.constant(hd), tape.constant(cr),
                                         tape.constant(cd));
        ad::Vector h, c;
        scalar_cell(p, x, hr, hd, cr, cd, h, c);
        for (int k = 0; k < 3; ++k) {
            EXPECT_NEAR(out.h.value()[k], h[k], 1e-12);
            EXPECT_NEAR(out.c.value()[k], c[k], 1e-12);
        }
    });
}

TEST(DrnnStep, ShapeMismatchIsShapeError) {
    CellParameters p("c", 3, 2);
    ad::Tape tape;
    const ad::Var s2 = tape.constant(ad::Vector::Zero(2));
    const ad::Var s3 = tape.constant(ad::Vector::Zero(3));
    EXPECT_THROW(drnn_step(p, tape.constant(ad::Vector::Zero(4)), s2, s2, s2, s2), ShapeError);
    EXPECT_THROW(drnn_step(p, tape.constant(ad::Vector::Zero(3)), s2, s3, s2, s2), ShapeError);
    CellState state(2, 2);
    EXPECT_THROW(state.push(s3, s3), ShapeError);
    AttentiveCellParameters ap("a", 3, 2);
    EXPECT_THROW(adrnn_step(ap, tape.constant(ad::Vector::Zero(3)), CellState(2, 2), CellState(2, 4)), ShapeError);
}

TEST(DrnnStep, HiddenOutputStaysInsideUnitBall) {
    for_all(300, 13, [](Gen& g) {
        CellParameters p = random_cell(g, 4, 5, 3.0);
        ad::Tape tape;
        CellState state(5, g.integer(1, 4));
        for (int t = 0; t < 20; ++t) {
            const CellOutput out = drnn_step(p, tape.constant(g.vector(4, 10.0)), state);
            EXPECT_LT(out.h.value().cwiseAbs().maxCoeff(), 1.0);
            state.push(out.h, out.c);
        }
    });
}

TEST(CellState, ColdStartReadsZerosUntilDilationSteps) {
    ad::Tape tape;
    CellState state(2, 3);
    EXPECT_EQ(state.h_recent(tape).value(), ad::Vector::Zero(2));
    for (int t = 1; t <= 3; ++t) {
        state.push(tape.constant(ad::Vector::Constant(2, t)), tape.constant(ad::Vector::Constant(2, -t)));
        EXPECT_EQ(state.h_recent(tape).value(), ad::Vector::Constant(2, t));
        if (t < 3) {
            EXPECT_EQ(state.h_delayed(tape).value(), ad::Vector::Zero(2));
        }
    }
    EXPECT_EQ(state.h_delayed(tape).value(), ad::Vector::Constant(2, 1));
    EXPECT_EQ(state.c_delayed(tape).value(), ad::Vector::Constant(2, -1));
    state.push(tape.constant(ad::Vector::Constant(2, 4)), tape.constant(ad::Vector::Constant(2, -4)));
    EXPECT_EQ(state.h_delayed(tape).value(), ad::Vector::Constant(2, 2));
}

TEST(Dilation, PerturbationReachesEveryDthStepThroughDelayedWiring) {
    Gen g(14);
    CellParameters p = random_cell(g, 2, 3);
    // Cut the recent path: no h_recent columns and a closed fusion gate.
    p.weights.value().middleCols(2, 3).setZero();
    p.weights.value().topRows(3).setZero();
    p.bias.value().topRows(3).setConstant(-1000.0);

    std::vector<ad::Vector> xs;
    for (int t = 0; t < 9; ++t) {
        xs.push_back(g.vector(2));
    }
    auto run = [&](const std::vector<ad::Vector>& inputs) {
        ad::Tape tape(false);
        CellState state(3, 2);
        std::vector<ad::Vector> hs;
        for (const auto& x : inputs) {
            const CellOutput out = drnn_step(p, tape.constant(x), state);
            hs.push_back(out.h.value());
            state.push(out.h, out.c);
        }
        return hs;
    };
    const auto base = run(xs);
    auto poked = xs;
    const int t0 = 2;
    poked[t0][0] += 0.5;
    const auto moved = run(poked);
    for (int t = 0; t < 9; ++t) {
        const bool changed = (moved[t] - base[t]).cwiseAbs().maxCoeff() > 0.0;
        const bool expected = t >= t0 && (t - t0) % 2 == 0;
        EXPECT_EQ(changed, expected) << "step " << t;
    }
}

TEST(Dilation, DilationOneMakesRecentAndDelayedSlotsIdentical) {
    Gen g(15);
    CellParameters p = random_cell(g, 2, 3);
    ad::Tape tape;
    CellState state(3, 1);
    for (int t = 0; t < 5; ++t) {
        const ad::Var x = tape.constant(g.vector(2));
        EXPECT_EQ(state.h_recent(tape).value(), state.h_delayed(tape).value());
        EXPECT_EQ(state.c_recent(tape).value(), state.c_delayed(tape).value());
        const CellOutput a = drnn_step(p, x, state);
        CellParameters q = p;
        for (Eigen::Index c = 0; c < q.weights.cols(); ++c) {
            q.weights.value().col(c).head(3) = g.vector(3, 2.0);
        }
        const CellOutput b = drnn_step(q, x, state);
        EXPECT_EQ(a.c.value(), b.c.value());
        state.push(a.h, a.c);
    }
}

TEST(DrnnStep, GradientsMatchCentralDifferences) {
    for_all(20, 16, [](Gen& g) {
        const int nx = 3, s = 3;
        CellParameters p = random_cell(g, nx, s);
        ad::Parameter x("x", nx), hr("hr", s), hd("hd", s), cr("cr", s), cd("cd", s);
        for (ad::Parameter* q : {&x, &hr, &hd, &cr, &cd}) {
            g.fill(*q, 1.0);
        }
        const ad::Vector wh = g.vector(s), wc = g.vector(s);
        auto loss = [&](bool record) {
            ad::Tape tape(record);
            const CellOutput out = drnn_step(p, tape.parameter(x), tape.parameter(hr), tape.parameter(hd),
                                             tape.parameter(cr), tape.parameter(cd));
            const ad::Var l = weighted_sum(tape, out.h, wh) + weighted_sum(tape, out.c, wc);
            if (record) {
                tape.backward(l);
            }
            return l.scalar();
        };
        std::vector<ad::Parameter*> all{&p.weights, &p.bias, &x, &hr, &hd, &cr, &cd};
        for (ad::Parameter* q : all) {
            q->zero_grad();
        }
        loss(true);
        for (ad::Parameter* q : all) {
            for (Eigen::Index i = 0; i < q->size(); ++i) {
                double& v = q->value().data()[i];
                const double keep = v;
                const double step = 1e-6 * std::max(1.0, std::abs(keep));
                v = keep + step;
                const double up = loss(false);
                v = keep - step;
                const double down = loss(false);
                v = keep;
                const double fd = (up - down) / (2 * step);
                const double an = q->grad().data()[i];
                const double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-5});
                EXPECT_LT(rel, 1e-4) << q->name() << "[" << i << "] analytic " << an << " fd " << fd;
            }
        }
    });
}

TEST(AdrnnStep, NeutralAttentionEqualsPlainCellOnRawInput) {
    for_all(50, 17, [](Gen& g) {
        AttentiveCellParameters p("l1", 4, 3);
        p.initialize(g.engine());
        g.fill(p.cell.bias, 0.5);
        ad::Tape tape;
        CellState a(3, 2), b(3, 2);
        for (int t = 0; t < 6; ++t) {
            const ad::Var x = tape.constant(g.vector(4, 2.0));
            const AttentiveOutput out = adrnn_step(p, x, a, b);
            EXPECT_EQ(out.attention.value(), ad::Vector::Ones(4));
            const CellOutput plain = drnn_step(p.cell, x, b);
            EXPECT_EQ(out.cell.h.value(), plain.h.value());
            EXPECT_EQ(out.cell.c.value(), plain.c.value());
            a.push(out.attention_cell.h, out.attention_cell.c);
            b.push(out.cell.h, out.cell.c);
        }
    });
}

TEST(AdrnnStep, SaturatedAttentionZeroesAComponent) {
    Gen g(18);
    AttentiveCellParameters p("l1", 3, 2);
    p.initialize(g.engine());
    p.projection_bias.value()(1, 0) = -1000.0;
    ad::Tape tape;
    const CellState a(2, 2), b(2, 2);
    ad::Vector xv = g.vector(3);
    const AttentiveOutput out = adrnn_step(p, tape.constant(xv), a, b);
    EXPECT_EQ(out.attention.value()[1], 0.0);
    xv[1] = 0.0;
    const CellOutput plain = drnn_step(p.cell, tape.constant(xv), b);
    EXPECT_EQ(out.cell.h.value(), plain.h.value());
}

TEST(AdrnnStep, AttentionStaysInsideOpenRangeZeroTwo) {
    Gen g(19);
    AttentiveCellParameters p("l1", 5, 4);
    p.initialize(g.engine());
    g.fill(p.projection, 2.0);
    g.fill(p.projection_bias, 2.0);
    auto tape = std::make_unique<ad::Tape>(false);
    CellState a(4, 2), b(4, 2);
    for (int t = 0; t < 1000; ++t) {
        const AttentiveOutput out = adrnn_step(p, tape->constant(g.vector(5, 3.0)), a, b);
        EXPECT_GT(out.attention.value().minCoeff(), 0.0);
        EXPECT_LT(out.attention.value().maxCoeff(), 2.0);
        a.push(out.attention_cell.h, out.attention_cell.c);
        b.push(out.cell.h, out.cell.c);
        if (t % 50 == 49) {
            auto next = std::make_unique<ad::Tape>(false);
            a.rebind(*next);
            b.rebind(*next);
            tape = std::move(next);
        }
    }
}

TEST(CellParameters, InitializationScaleAndZeroBias) {
    std::mt19937_64 rng(20);
    CellParameters p("c", 6, 5);
    p.initialize(rng);
    const double k = 1.0 / std::sqrt(16.0);
    EXPECT_LE(p.weights.value().cwiseAbs().maxCoeff(), k);
    EXPECT_GT(p.weights.value().cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(p.bias.value().cwiseAbs().maxCoeff(), 0.0);
    AttentiveCellParameters a("a", 6, 5);
    a.initialize(rng);
    EXPECT_EQ(a.projection.value().cwiseAbs().maxCoeff(), 0.0);
}
