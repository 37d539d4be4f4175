#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "tdvsm/dxflow.hpp"
#include "tdvsm/errors.hpp"

using namespace tdvsm;

namespace {

std::string data(const char* name) { return std::string(TDVSM_DATA_DIR) + "/" + name; }

FeederModel chain(std::vector<std::array<double, 2>> rx, double base_kva = 1000.0)
{
    FeederModel f;
    f.id = "t";
    f.base_kva = base_kva;
    f.nodes.resize(rx.size() + 1);
    for (std::size_t j = 0; j < f.nodes.size(); ++j) f.nodes[j].id = static_cast<int>(j);
    for (std::size_t e = 0; e < rx.size(); ++e)
        f.edges.push_back({static_cast<int>(e), static_cast<int>(e + 1), rx[e][0], rx[e][1]});
    f.finalize();
    return f;
}

void set_load(FeederModel& f, int node, double p, double q)
{
    f.nodes[node].load_p = {p / 3, p / 3, p / 3};
    f.nodes[node].load_q = {q / 3, q / 3, q / 3};
}

// exact receiving-end magnitude of a two-node line feeding constant power
// (all per unit): |V1|^4 + (2(rP + xQ) - V0^2)|V1|^2 + (r^2 + x^2)(P^2 + Q^2) = 0
double two_node_exact(double v0, double r, double x, double p, double q)
{
    const double b = 2 * (r * p + x * q) - v0 * v0;
    const double c = (r * r + x * x) * (p * p + q * q);
    return std::sqrt((-b + std::sqrt(b * b - 4 * c)) / 2);
}

const std::vector<double> kNoDer;

}  // namespace

TEST(LinDistFlow, SingleEdgeHandValue)
{
    auto f = chain({{0.01, 0.02}});
    set_load(f, 1, 100, 50);  // 0.1 / 0.05 pu on 1000 kVA
    const auto s = solve_lindistflow(f, 1.0, kNoDer);
    EXPECT_NEAR(s.p_flow[0], 100.0, 1e-12);
    EXPECT_NEAR(s.q_flow[0], 50.0, 1e-12);
    EXPECT_NEAR(s.v_sq[1], 0.996, 1e-12);
}

TEST(LinDistFlow, ZeroLoadIsFlat)
{
    const auto f = load_case(data("ieee30_37.case")).feeders[0];
    auto g = f.scaled(0.0, 0.0);
    for (auto& d : g.ders) d.p_gen = 0;
    const std::vector<double> q(g.ders.size(), 0.0);
    const auto s = solve_lindistflow(g, 1.0404, q);
    for (double v : s.v_sq) EXPECT_DOUBLE_EQ(v, 1.0404);
}

TEST(LinDistFlow, DerOffsettingItsLoadCancels)
{
    auto f = chain({{0.01, 0.02}, {0.01, 0.02}, {0.02, 0.01}});
    set_load(f, 1, 50, 20);
    set_load(f, 2, 80, 30);
    set_load(f, 3, 40, 10);
    auto without = f;
    set_load(without, 2, 0, 0);
    DerUnit d;
    d.node = 2;
    d.s_rating = 200;
    d.set_p(80);
    f.ders.push_back(d);
    f.finalize();
    const std::vector<double> q{30.0};
    const auto a = solve_lindistflow(f, 1.0, q);
    const auto b = solve_lindistflow(without, 1.0, kNoDer);
    for (std::size_t e = 0; e < 2; ++e) {
        EXPECT_NEAR(a.p_flow[e], b.p_flow[e], 1e-12);
        EXPECT_NEAR(a.q_flow[e], b.q_flow[e], 1e-12);
    }
}

TEST(LinDistFlow, SuperpositionAndTelescoping)
{
    const auto base = load_case(data("ieee30_37.case")).feeders[3];
    std::mt19937 rng(11);
    std::uniform_real_distribution<double> u(0.0, 30.0);
    auto with_random_loads = [&](FeederModel f) {
        for (auto& n : f.nodes)
            for (int ph = 0; ph < 3; ++ph) {
                n.load_p[ph] = u(rng);
                n.load_q[ph] = u(rng) / 2;
            }
        for (auto& d : f.ders) d.p_gen = 0;
        return f;
    };
    const auto fa = with_random_loads(base), fb = with_random_loads(base);
    auto fab = fa;
    for (std::size_t j = 0; j < fab.nodes.size(); ++j)
        for (int ph = 0; ph < 3; ++ph) {
            fab.nodes[j].load_p[ph] += fb.nodes[j].load_p[ph];
            fab.nodes[j].load_q[ph] += fb.nodes[j].load_q[ph];
        }
    auto f0 = base.scaled(0, 0);
    for (auto& d : f0.ders) d.p_gen = 0;
    const std::vector<double> q(base.ders.size(), 0.0);
    const auto sa = solve_lindistflow(fa, 1.0, q), sb = solve_lindistflow(fb, 1.0, q);
    const auto sab = solve_lindistflow(fab, 1.0, q), s0 = solve_lindistflow(f0, 1.0, q);
    for (std::size_t j = 0; j < base.nodes.size(); ++j)
        EXPECT_NEAR(sab.v_sq[j], sa.v_sq[j] + sb.v_sq[j] - s0.v_sq[j], 1e-12);

    // flow on each edge equals the net demand of the subtree below it
    for (std::size_t j = 1; j < fa.nodes.size(); ++j) {
        double sub = 0;
        for (std::size_t k = 0; k < fa.nodes.size(); ++k) {
            int a = static_cast<int>(k);
            while (a != -1 && a != static_cast<int>(j)) a = fa.parent[a];
            if (a == static_cast<int>(j)) sub += fa.nodes[k].load_p[0] + fa.nodes[k].load_p[1] + fa.nodes[k].load_p[2];
        }
        EXPECT_NEAR(sa.p_flow[fa.parent_edge[j]], sub, 1e-9);
    }
}

TEST(LinDistFlow, SensitivityMatchesPerturbation)
{
    const auto f = load_case(data("ieee30_37.case")).feeders[0];
    const auto m = lindist_q_sensitivity(f);
    std::vector<double> q(f.ders.size(), 0.0);
    const auto s0 = solve_lindistflow(f, 1.0, q);
    for (std::size_t k = 0; k < f.ders.size(); ++k) {
        auto qk = q;
        qk[k] = 1.0;
        const auto s1 = solve_lindistflow(f, 1.0, qk);
        for (std::size_t j = 0; j < f.nodes.size(); ++j)
            EXPECT_NEAR(m(j, k), s1.v_sq[j] - s0.v_sq[j], 1e-12);
    }
}

TEST(Bfs, NoLoadIdentity)
{
    auto f = chain({{0.01, 0.02}, {0.01, 0.02}});
    BfsOptions opt;
    opt.oltc = false;
    const auto s = solve_bfs(f, balanced(1.02), opt);
    ASSERT_TRUE(s.converged);
    for (const auto& v : s.v)
        for (int ph = 0; ph < 3; ++ph) EXPECT_NEAR(std::abs(v[ph]), 1.02, 1e-14);
    for (double p : s.p_flow) EXPECT_EQ(p, 0.0);
    EXPECT_EQ(s.tap, 1.0);
}

TEST(Bfs, SingleBranchMatchesExactTwoNode)
{
    auto f = chain({{0.02, 0.04}});
    set_load(f, 1, 300, 120);
    BfsOptions opt;
    opt.oltc = false;
    const auto s = solve_bfs(f, balanced(1.0), opt);
    ASSERT_TRUE(s.converged);
    const double exact = two_node_exact(1.0, 0.02, 0.04, 0.3, 0.12);
    for (int ph = 0; ph < 3; ++ph) EXPECT_NEAR(std::abs(s.v[1][ph]), exact, 1e-6);
    EXPECT_NEAR(std::abs(s.v[1][0]), std::abs(s.v[1][1]), 1e-12);
}

TEST(Bfs, OltcHoldsSecondaryNearNominal)
{
    auto f = chain({{0.01, 0.02}});
    const auto s = solve_bfs(f, balanced(0.95));
    const double step = (f.tap_max - f.tap_min) / f.tap_steps;
    EXPECT_LE(std::abs(0.95 * s.tap - 1.0), 0.95 * step / 2 + 1e-12);
    EXPECT_GE(s.tap, f.tap_min);
    EXPECT_LE(s.tap, f.tap_max);
    const auto hi = solve_bfs(f, balanced(2.0));
    EXPECT_DOUBLE_EQ(hi.tap, f.tap_min);
}

TEST(Bfs, BundledFeederNominal)
{
    const auto c = load_case(data("ieee30_37.case"));
    for (const auto& f : c.feeders) {
        const auto s = solve_bfs(f, balanced(1.0));
        ASSERT_TRUE(s.converged) << f.id;
        EXPECT_LE(s.sweeps, 20);
        for (std::size_t j = 0; j < f.nodes.size(); ++j)
            for (int ph = 0; ph < 3; ++ph) {
                EXPECT_GE(std::abs(s.v[j][ph]), 0.90);
                EXPECT_LE(std::abs(s.v[j][ph]), 1.05);
            }
    }
}

TEST(Bfs, PowerBalanceAndNonNegativeLosses)
{
    const auto c = load_case(data("ieee30_37.case"));
    for (double scale : {0.5, 1.0, 1.5}) {
        auto f = c.feeders[0].scaled(scale, scale);
        std::vector<double> q(f.ders.size());
        for (std::size_t k = 0; k < q.size(); ++k) q[k] = 0.5 * f.ders[k].q_max;
        const auto s = solve_bfs(f, balanced(1.0), q);
        ASSERT_TRUE(s.converged);
        double der_p = 0, der_q = 0;
        for (std::size_t k = 0; k < q.size(); ++k) {
            der_p += f.ders[k].p_gen;
            der_q += q[k];
        }
        EXPECT_NEAR(s.p0, f.total_load_p() - der_p + s.losses_p, 1e-9);
        EXPECT_GE(s.losses_p, 0.0);
        // reactive injection reduces substation reactive draw
        const auto s0 = solve_bfs(f, balanced(1.0), std::vector<double>(q.size(), 0.0));
        EXPECT_LT(s.q0, s0.q0);
        EXPECT_NEAR(s0.q0 - s.q0, der_q, 0.05 * der_q);
    }
}

TEST(Bfs, UnbalancedLoadsGiveUnequalPhases)
{
    const auto c = load_case(data("five_bus.case"));
    const auto s = solve_bfs(c.feeders[0], balanced(1.0));
    ASSERT_TRUE(s.converged);
    EXPECT_GT(std::abs(std::abs(s.v[3][0]) - std::abs(s.v[3][2])), 1e-5);
}

TEST(Bfs, HeavyLoadReportsNonConvergence)
{
    auto f = chain({{0.1, 0.2}});
    set_load(f, 1, 5000, 2000);
    BfsOptions opt;
    opt.oltc = false;
    const auto s = solve_bfs(f, balanced(1.0), opt);
    EXPECT_FALSE(s.converged);
}

TEST(Bfs, LinDistFlowGapIsSmallAndGrowsWithLoad)
{
    const auto c = load_case(data("ieee30_37.case"));
    const auto& base = c.feeders[0];
    BfsOptions opt;
    opt.fixed_tap = 1.0;
    double prev = -1;
    for (double scale : {0.5, 1.0, 1.5}) {
        const auto f = base.scaled(scale, scale);
        const std::vector<double> q(f.ders.size(), 0.0);
        const auto b = solve_bfs(f, balanced(1.0), q, opt);
        const auto l = solve_lindistflow(f, 1.0, q);
        double gap = 0;
        for (std::size_t j = 0; j < f.nodes.size(); ++j)
            gap = std::max(gap, std::abs(std::sqrt(l.v_sq[j]) - b.vmag_avg(j)));
        if (scale == 1.0) EXPECT_LE(gap, 0.01);
        EXPECT_GT(gap, prev);
        prev = gap;
    }
}

TEST(Bfs, ProfileCsvHasRowPerNodePhase)
{
    const auto f = load_case(data("five_bus.case")).feeders[0];
    std::ostringstream csv;
    BfsOptions opt;
    opt.profile_csv = &csv;
    solve_bfs(f, balanced(1.0), opt);
    const auto text = csv.str();
    EXPECT_EQ(static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')), 3 * f.nodes.size());
}

TEST(Boundary, AggregateScaling)
{
    DxSolution s;
    s.p0 = 1000;
    s.q0 = 300;
    BoundaryLink link;
    link.beta = 20;
    auto [p, q] = boundary_aggregate(s, link);
    EXPECT_DOUBLE_EQ(p, 20.0);
    EXPECT_DOUBLE_EQ(q, 6.0);
    link.beta = 40;
    std::tie(p, q) = boundary_aggregate(s, link);
    EXPECT_DOUBLE_EQ(p, 40.0);
    EXPECT_DOUBLE_EQ(q, 12.0);
}

TEST(Boundary, DerCountMismatchIsRejected)
{
    const auto f = load_case(data("five_bus.case")).feeders[0];
    const std::vector<double> q{1.0};
    EXPECT_THROW(solve_bfs(f, balanced(1.0), q), PreconditionError);
    EXPECT_THROW(solve_lindistflow(f, 1.0, q), PreconditionError);
}
