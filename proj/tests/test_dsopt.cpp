#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "tdvsm/dsopt.hpp"
#include "tdvsm/dxflow.hpp"
#include "tdvsm/errors.hpp"

using namespace tdvsm;

namespace {

std::string data(const char* name) { return std::string(TDVSM_DATA_DIR) + "/" + name; }

FeederModel chain(int edges, double r, double x)
{
    FeederModel f;
    f.id = "t";
    f.nodes.resize(static_cast<std::size_t>(edges) + 1);
    for (std::size_t j = 0; j < f.nodes.size(); ++j) {
        f.nodes[j].id = static_cast<int>(j);
        f.nodes[j].v_min = 0.5;
        f.nodes[j].v_max = 1.5;
    }
    for (int e = 0; e < edges; ++e) f.edges.push_back({e, e + 1, r, x});
    for (std::size_t j = 1; j < f.nodes.size(); ++j) {
        f.nodes[j].load_p = {20, 20, 20};
        f.nodes[j].load_q = {10, 10, 10};
    }
    f.finalize();
    return f;
}

void add_der(FeederModel& f, int node, double q_cap)
{
    DerUnit d;
    d.node = node;
    d.s_rating = q_cap;
    d.set_p(0.0);
    f.ders.push_back(d);
    f.finalize();
}

// Largest / smallest sum of q over a grid, feasible when some v0 in the tap
// range keeps every node within limits (interval intersection per point).
std::pair<double, double> grid_range(const FeederModel& f, double v_tm, double step)
{
    const std::vector<double> zero(f.ders.size(), 0.0);
    const auto base = solve_lindistflow(f, 0.0, zero);
    const auto sens = lindist_q_sensitivity(f);
    const auto lim = der_q_limits(f.ders.at(0));
    double lo = kInf, hi = -kInf;
    for (double q = lim.q_min; q <= lim.q_max + 1e-12; q += step) {
        double a = std::pow(v_tm * f.tap_min, 2), b = std::pow(v_tm * f.tap_max, 2);
        for (std::size_t n = 0; n < f.nodes.size(); ++n) {
            const double shift = base.v_sq[n] + sens(static_cast<Eigen::Index>(n), 0) * q;
            a = std::max(a, f.nodes[n].v_min * f.nodes[n].v_min - shift);
            b = std::min(b, f.nodes[n].v_max * f.nodes[n].v_max - shift);
        }
        if (a <= b) {
            lo = std::min(lo, q);
            hi = std::max(hi, q);
        }
    }
    return {lo, hi};
}

struct Bundled {
    FeederModel feeder;
    BoundaryLink link;
};

Bundled bundled()
{
    const auto c = load_case(data("ieee30_37.case"));
    return {c.link_feeder(0), c.network.boundary_links[0]};
}

MlpModel linear_like(std::vector<double> slopes)
{
    MlpModel m;
    const auto d = static_cast<Eigen::Index>(slopes.size());
    m.w_in = Eigen::Map<Eigen::RowVectorXd>(slopes.data(), d);
    m.b_in = Eigen::VectorXd::Zero(1);
    m.w_out = Eigen::VectorXd::Ones(1);
    return m;
}

}  // namespace

TEST(Capability, SingleDerLooseLimits)
{
    auto f = chain(2, 0.01, 0.02);
    add_der(f, 2, 10.0);
    const auto cr = capability_range(f, 1.0);
    EXPECT_NEAR(cr.q_min_agg, -10.0, 1e-9);
    EXPECT_NEAR(cr.q_max_agg, 10.0, 1e-9);
    EXPECT_NEAR(solve_lindistflow(f, 1.0, cr.der_at_max).q0, cr.q0_zero - 10.0, 1e-9);
    EXPECT_NEAR(solve_lindistflow(f, 1.0, cr.der_at_min).q0, cr.q0_zero + 10.0, 1e-9);
    const auto [lo, hi] = grid_range(f, 1.0, 0.01);
    EXPECT_NEAR(cr.q_min_agg, lo, 1e-9);
    EXPECT_NEAR(cr.q_max_agg, hi, 1e-9);
    EXPECT_NE(std::find(cr.binding_max.begin(), cr.binding_max.end(), "q_der2.max"), cr.binding_max.end());
}

TEST(Capability, NoDersIsDegenerate)
{
    const auto f = chain(3, 0.01, 0.02);
    const auto cr = capability_range(f, 1.0);
    EXPECT_EQ(cr.q_min_agg, cr.q_max_agg);
    EXPECT_EQ(cr.q_max_agg, 0.0);
}

TEST(Capability, VoltageLimitClipsRange)
{
    auto f = chain(2, 0.05, 0.4);
    add_der(f, 2, 400.0);
    f.nodes[0].v_min = 0.99;  // root cannot be pulled down to make room
    f.nodes[2].v_max = 1.0;
    const auto cr = capability_range(f, 1.0);
    EXPECT_LT(cr.q_max_agg, 400.0 - 1.0);
    const auto [lo, hi] = grid_range(f, 1.0, 1e-3);
    EXPECT_NEAR(cr.q_max_agg, hi, 1e-3);
    EXPECT_NEAR(cr.q_min_agg, lo, 1e-3);
    EXPECT_NE(std::find(cr.binding_max.begin(), cr.binding_max.end(), "vmax_node2"), cr.binding_max.end());
}

TEST(Capability, UnreachableVoltageIsInfeasible)
{
    auto f = chain(2, 0.01, 0.02);
    f.nodes[1].v_min = 1.2;
    EXPECT_THROW(capability_range(f, 1.0), InfeasibleError);
}

TEST(Capability, MaximumGrowsWithDerRating)
{
    auto [f, link] = bundled();
    std::mt19937_64 rng(5);
    double prev = capability_range(f, 1.0).q_max_agg;
    for (int t = 0; t < 3; ++t) {
        auto& d = f.ders[rng() % f.ders.size()];
        d.s_rating *= 1.2;
        d.set_p(d.p_gen);
        const double now = capability_range(f, 1.0).q_max_agg;
        EXPECT_GE(now, prev - 1e-9);
        prev = now;
    }
}

TEST(DxWeights, IdentitiesAndOrdering)
{
    const auto eq = dx_weights(linear_like({-2.0, -2.0}), Eigen::Vector2d::Zero());
    EXPECT_DOUBLE_EQ(eq(0), 0.5);
    EXPECT_DOUBLE_EQ(eq(1), 0.5);

    const auto w = dx_weights(linear_like({-0.3, -1.7, -0.9, -0.1, -2.2}), Eigen::VectorXd::Zero(5));
    EXPECT_NEAR(w.sum(), 4.0, 1e-12);
    std::vector<int> by_w{0, 1, 2, 3, 4}, by_s{4, 1, 2, 0, 3};
    std::sort(by_w.begin(), by_w.end(), [&](int a, int b) { return w(a) < w(b); });
    EXPECT_EQ(by_w, by_s);
    EXPECT_THROW(dx_weights(linear_like({0.0, 0.0}), Eigen::Vector2d::Zero()), NumericalError);
}

TEST(Redispatch, ZeroRequestIsIdle)
{
    auto [f, link] = bundled();
    const auto r = redispatch(f, 0.0, link, Eigen::VectorXd::Constant(8, 0.5));
    for (double q : r.q) EXPECT_NEAR(q, 0.0, 1e-9);
    EXPECT_NEAR(r.objective, 0.0, 1e-9);
}

TEST(Redispatch, TwoDersMatchVertexEnumeration)
{
    auto f = chain(3, 0.01, 0.02);
    add_der(f, 2, 50.0);
    add_der(f, 3, 80.0);
    const BoundaryLink link{1, "t", 1};
    const Eigen::Vector2d w(0.2, 0.8);
    for (double req : {20.0, 45.0, 70.0, 110.0}) {
        // vertices of {q1 + q2 = R, 0 <= q1 <= 50, 0 <= q2 <= 80}
        const double a = std::max(0.0, req - 80.0), b = std::min(50.0, req);
        const double fa = w(0) * a + w(1) * (req - a), fb = w(0) * b + w(1) * (req - b);
        const double q1 = fa <= fb ? a : b;
        const auto r = redispatch(f, req / 1000.0, link, w);
        EXPECT_NEAR(r.q[0], q1, 1e-9) << req;
        EXPECT_NEAR(r.q[1], req - q1, 1e-9) << req;
        EXPECT_NEAR(r.objective, std::min(fa, fb), 1e-9) << req;
    }
}

TEST(Redispatch, BandCollapsesAtZeroAlpha)
{
    auto [f, link] = bundled();
    RedispatchOptions o;
    o.alpha = 0.0;
    const auto cr = capability_range(f, 1.0);
    const double req = 0.6 * cr.q_max_agg * link.beta / 1000.0;
    const auto r = redispatch(f, req, link, Eigen::VectorXd::LinSpaced(8, 0.1, 0.9), o);
    for (const auto& ph : r.q_phase) {
        EXPECT_NEAR(ph[0], ph[1], 1e-9);
        EXPECT_NEAR(ph[1], ph[2], 1e-9);
    }
    EXPECT_NEAR(r.q_agg, req * 1000.0 / link.beta, 1e-6);
}

TEST(Redispatch, BandHoldsAtTenPercent)
{
    auto [f, link] = bundled();
    RedispatchOptions o;
    o.alpha = 0.1;
    const auto cr = capability_range(f, 1.0);
    for (double share : {0.3, -0.5, 0.9}) {
        const double lim = share > 0 ? cr.q_max_agg : -cr.q_min_agg;
        const double req = share * lim * link.beta / 1000.0;
        const auto r = redispatch(f, req, link, Eigen::VectorXd::LinSpaced(8, 0.9, 0.1), o);
        for (const auto& ph : r.q_phase) {
            const double avg = (ph[0] + ph[1] + ph[2]) / 3.0;
            for (double v : ph) EXPECT_LE(std::abs(v - avg), 0.1 * std::abs(avg) + o.eps_band + 1e-9);
        }
    }
}

TEST(Redispatch, ParticipationFollowsWeights)
{
    auto [f, link] = bundled();
    const Eigen::VectorXd w = (Eigen::VectorXd(8) << 0.7, 0.1, 0.5, 0.3, 0.8, 0.2, 0.6, 0.4).finished();
    const auto cr = capability_range(f, 1.0);
    for (double share : {0.2, 0.5, -0.4}) {
        const double lim = share > 0 ? cr.q_max_agg : -cr.q_min_agg;
        const auto r = redispatch(f, share * lim * link.beta / 1000.0, link, w);
        for (int k = 0; k < 8; ++k) {
            if (std::abs(r.q[k]) < 1e-6) continue;
            for (int j = 0; j < 8; ++j) {
                if (w(j) >= w(k)) continue;
                const auto l = der_q_limits(f.ders[j]);
                EXPECT_NEAR(r.q[j], share > 0 ? l.q_max : l.q_min, 1e-6) << k << " " << j;
            }
        }
    }
}

TEST(Redispatch, RandomRequestsPassKkt)
{
    auto [f, link] = bundled();
    const auto cr = capability_range(f, 1.0);
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int t = 0; t < 20; ++t) {
        Eigen::VectorXd w(8);
        for (int k = 0; k < 8; ++k) w(k) = u(rng);
        const double q = cr.q_min_agg + u(rng) * (cr.q_max_agg - cr.q_min_agg);
        RedispatchOptions o;
        o.alpha = t % 2 ? 0.1 : 0.0;
        const auto r = redispatch(f, q * link.beta / 1000.0, link, w, o);
        EXPECT_LE(r.kkt.stationarity, 1e-5) << t;
        EXPECT_LE(r.kkt.primal, 1e-6) << t;
        EXPECT_LE(r.kkt.dual_sign, 1e-6) << t;
        EXPECT_LE(r.kkt.complementarity, 1e-6) << t;
        EXPECT_NEAR(r.q_agg, q, 1e-6) << t;
    }
}

TEST(Redispatch, BfsAgreesWithLinearPrediction)
{
    auto [f, link] = bundled();
    const auto cr = capability_range(f, 1.0);
    const auto r = redispatch(f, 0.7 * cr.q_max_agg * link.beta / 1000.0, link, Eigen::VectorXd::Constant(8, 1.0));
    apply_redispatch(f, r);
    BfsOptions bo;
    bo.fixed_tap = r.v0;
    const auto s = solve_bfs(f, balanced(1.0), bo);
    ASSERT_TRUE(s.converged);
    EXPECT_NEAR(s.q0, r.q0_predicted, 0.05 * std::abs(r.q0_predicted));
    EXPECT_NEAR(der_q_total(f), r.q_agg, 1e-9);
}

TEST(Redispatch, OutOfRangeRequestIsDiagnosed)
{
    auto [f, link] = bundled();
    const auto cr = capability_range(f, 1.0);
    try {
        redispatch(f, 1.5 * cr.q_max_agg * link.beta / 1000.0, link, Eigen::VectorXd::Constant(8, 1.0));
        FAIL();
    } catch (const InfeasibleError& e) {
        EXPECT_NE(std::string(e.what()).find("capability"), std::string::npos) << e.what();
    }
    EXPECT_THROW(redispatch(f, 0.1, link, Eigen::VectorXd::Constant(3, 1.0)), PreconditionError);
}

TEST(Redispatch, LpDumpIsWritten)
{
    auto [f, link] = bundled();
    std::ostringstream out;
    RedispatchOptions o;
    o.lp_dump = &out;
    redispatch(f, 0.0, link, Eigen::VectorXd::Constant(8, 1.0), o);
    EXPECT_NE(out.str().find(" request:"), std::string::npos);
    EXPECT_NE(out.str().find("band_der"), std::string::npos);
}
