#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "tdvsm/errors.hpp"
#include "tdvsm/txflow.hpp"

using namespace tdvsm;

namespace {

std::string data(const char* name) { return std::string(TDVSM_DATA_DIR) + "/" + name; }

TransmissionNetwork two_bus(double load_mw)
{
    auto net = load_case(data("two_bus.case")).network;
    net.buses[1].load_p = load_mw;
    return net;
}

// Lossless two-bus with unity-pf load: Q balance forces V2 = V1 cos(theta)
// and P = V1 V2 sin(theta) / X, so sin(2 theta) = 2 X P / V1^2.
struct TwoBusExact {
    double theta;
    double v2;
};

TwoBusExact two_bus_exact(double v1, double x, double p)
{
    const double theta = 0.5 * std::asin(2.0 * x * p / (v1 * v1));
    return {theta, v1 * std::cos(theta)};
}

}  // namespace

TEST(TxFlow, NoLoadIsFlat)
{
    const auto net = two_bus(0.0);
    const auto sol = solve_nr(net, fixed_loads(net));
    ASSERT_TRUE(sol.converged);
    EXPECT_EQ(sol.iterations, 1);
    EXPECT_DOUBLE_EQ(sol.v_mag[1], 1.0);
    EXPECT_DOUBLE_EQ(sol.v_ang[1], 0.0);
    EXPECT_NEAR(sol.p_inj[0], 0.0, 1e-12);
}

TEST(TxFlow, TwoBusMatchesClosedForm)
{
    const auto net = two_bus(50.0);
    const auto sol = solve_nr(net, fixed_loads(net));
    ASSERT_TRUE(sol.converged);
    const auto exact = two_bus_exact(1.0, 0.1, 0.5);
    EXPECT_NEAR(exact.v2, 0.99875, 5e-6);
    EXPECT_NEAR(std::sin(2 * exact.theta), 0.1, 1e-15);
    EXPECT_NEAR(exact.theta * 180.0 / M_PI, 2.8696, 1e-4);
    EXPECT_NEAR(sol.v_mag[1], exact.v2, 1e-6);
    EXPECT_NEAR(sol.v_ang[1], -exact.theta, 1e-6);
    EXPECT_LE(sol.max_mismatch, 1e-8);
}

TEST(TxFlow, BeyondMaximumTransferDoesNotConverge)
{
    // P_max = V1^2 / (2X) = 5 pu
    const auto net = two_bus(600.0);
    const auto sol = solve_nr(net, fixed_loads(net));
    EXPECT_FALSE(sol.converged);
    EXPECT_GT(sol.max_mismatch, 1e-8);
}

TEST(TxFlow, PowerBalanceWithLosses)
{
    const auto c = load_case(data("five_bus.case"));
    auto loads = fixed_loads(c.network);
    loads.p[2] += 40;
    loads.q[2] += 15;
    loads.p[3] += 50;
    loads.q[3] += 18;
    const auto sol = solve_nr(c.network, loads);
    ASSERT_TRUE(sol.converged);
    double gen = 0, load = 0, inj = 0;
    for (double g : sol.gen_p) gen += g;
    for (double l : loads.p) load += l;
    for (double p : sol.p_inj) inj += p;  // = losses
    EXPECT_GT(inj, 0.0);
    EXPECT_NEAR(gen, load + inj, 10 * 1e-8 * c.network.base_mva);
}

TEST(TxFlow, ReactiveLimitSwitchesWorstUnit)
{
    auto net = load_case(data("five_bus.case")).network;
    net.generators[1].q_max = 5.0;  // bus 2 unit
    auto loads = fixed_loads(net);
    loads.p[2] += 60;
    loads.q[2] += 40;
    loads.p[3] += 60;
    loads.q[3] += 40;
    const auto sol = solve_nr(net, loads);
    ASSERT_TRUE(sol.converged);
    EXPECT_GE(sol.switches, 1);
    EXPECT_TRUE(sol.q_limited[1]);
    EXPECT_NEAR(sol.gen_q[1], 5.0, 1e-9);
    EXPECT_LT(sol.v_mag[1], net.generators[1].v_set);
    // regulating units not at a limit hold their set-point
    for (const auto& g : gen_sites(net))
        if (!sol.q_limited[g.bus_index]) EXPECT_NEAR(sol.v_mag[g.bus_index], g.v_set, 1e-12);

    // idempotence: warm re-solve converges at once without new switches
    const auto again = solve_nr(net, loads, {}, &sol);
    ASSERT_TRUE(again.converged);
    EXPECT_LE(again.iterations, 2);
    EXPECT_EQ(again.switches, 0);
}

TEST(TxFlow, QuadraticConvergence)
{
    const auto c = load_case(data("five_bus.case"));
    auto loads = fixed_loads(c.network);
    loads.p[2] += 40;
    loads.p[3] += 50;
    NrOptions opt;
    opt.tol = 1e-14;
    opt.enforce_q_limits = false;
    const auto sol = solve_nr(c.network, loads, opt);
    ASSERT_TRUE(sol.converged);
    // drop iterates sitting on the rounding floor
    std::vector<double> h;
    for (double e : sol.mismatch_history)
        if (e > 1e-12) h.push_back(e);
    ASSERT_GE(h.size(), 4u);
    const auto n = h.size();
    const double r1 = h[n - 3] / h[n - 4], r2 = h[n - 2] / h[n - 3], r3 = h[n - 1] / h[n - 2];
    EXPECT_LT(r2, r1);
    EXPECT_LT(r3, r2);
    EXPECT_LT(h[n - 1], 10 * h[n - 2] * h[n - 2]);
}

TEST(TxFlow, MismatchTraceCsv)
{
    const auto net = two_bus(50.0);
    std::ostringstream csv;
    NrOptions opt;
    opt.trace_csv = &csv;
    const auto sol = solve_nr(net, fixed_loads(net), opt);
    std::istringstream in(csv.str());
    std::string line;
    int rows = 0;
    while (std::getline(in, line)) {
        ++rows;
        EXPECT_NE(line.find(','), std::string::npos);
    }
    EXPECT_EQ(rows, sol.iterations);
}

TEST(TxSensitivity, TwoBusReactiveInjectionMatchesFiniteDifference)
{
    const auto net = two_bus(50.0);
    const auto loads = fixed_loads(net);
    const auto sol = solve_nr(net, loads);
    const std::vector<int> qb{1};
    const auto an = sensitivities(net, loads, sol, qb);
    const auto fd = sensitivities_fd(net, loads, sol, qb, 1e-5);
    EXPECT_GT(an.dv_dq(1, 0), 0.0);  // injection raises the voltage
    EXPECT_NEAR(an.dv_dq(1, 0), fd.dv_dq(1, 0), 1e-4 * std::abs(fd.dv_dq(1, 0)));
    EXPECT_DOUBLE_EQ(an.dv_dvg(0, 0), 1.0);  // slack holds its set-point
}

TEST(TxSensitivity, FiveBusEveryEntryMatchesFiniteDifference)
{
    const auto c = load_case(data("five_bus.case"));
    auto loads = fixed_loads(c.network);
    loads.p[2] += 40;
    loads.q[2] += 15;
    loads.p[3] += 50;
    loads.q[3] += 18;
    const auto sol = solve_nr(c.network, loads);
    ASSERT_TRUE(sol.converged);
    const std::vector<int> qb{1, 2, 3, 4};
    const auto an = sensitivities(c.network, loads, sol, qb);
    const auto fd = sensitivities_fd(c.network, loads, sol, qb, 1e-5);
    auto close = [](double a, double b) { return std::abs(a - b) <= 1e-3 * std::abs(b) + 1e-9; };
    for (Eigen::Index i = 0; i < an.dv_dvg.size(); ++i)
        EXPECT_TRUE(close(an.dv_dvg.data()[i], fd.dv_dvg.data()[i])) << i;
    for (Eigen::Index i = 0; i < an.dv_dq.size(); ++i)
        EXPECT_TRUE(close(an.dv_dq.data()[i], fd.dv_dq.data()[i])) << i;
    for (Eigen::Index i = 0; i < an.dqg_dvg.size(); ++i)
        EXPECT_TRUE(close(an.dqg_dvg(i), fd.dqg_dvg(i))) << i << ' ' << an.dqg_dvg(i) << ' ' << fd.dqg_dvg(i);
    // own regulated bus responds one-to-one, a unit held at its limit not at all
    const auto sites = gen_sites(c.network);
    for (std::size_t u = 0; u < sites.size(); ++u)
        EXPECT_DOUBLE_EQ(an.dv_dvg(sites[u].bus_index, u), sol.q_limited[sites[u].bus_index] ? 0.0 : 1.0);
}

TEST(TxSensitivity, SingleGeneratorReactiveResponseSign)
{
    // one source feeding an inductive load
    auto net = two_bus(50.0);
    net.buses[1].load_q = 20.0;
    const auto loads = fixed_loads(net);
    const auto sol = solve_nr(net, loads);
    const std::vector<int> qb{1};
    const auto an = sensitivities(net, loads, sol, qb);
    const auto fd = sensitivities_fd(net, loads, sol, qb);
    // a higher source voltage lowers the series reactive loss of a constant-power load
    EXPECT_LT(fd.dqg_dvg(0), 0.0);
    EXPECT_EQ(std::signbit(an.dqg_dvg(0)), std::signbit(fd.dqg_dvg(0)));
    EXPECT_NEAR(an.dqg_dvg(0), fd.dqg_dvg(0), 1e-3 * std::abs(fd.dqg_dvg(0)));
}

TEST(TxSensitivity, SingularNearCollapse)
{
    // exactly at the nose the reduced Jacobian loses rank
    auto net = two_bus(0.0);
    const auto loads = fixed_loads(net);
    TxSolution sol = solve_nr(net, loads);
    sol.v_mag[1] = std::sqrt(0.5);
    sol.v_ang[1] = -M_PI / 4;
    BusLoads nose = loads;
    nose.p[1] = 500.0;
    EXPECT_THROW(sensitivities(net, nose, sol, std::vector<int>{1}), NumericalError);
}
