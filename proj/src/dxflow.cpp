#include "tdvsm/dxflow.hpp"

#include <cmath>
#include <numbers>
#include <ostream>

#include "tdvsm/errors.hpp"

namespace tdvsm {

using cd = std::complex<double>;

PhaseVoltage balanced(double mag)
{
    const double a = 2.0 * std::numbers::pi / 3.0;
    return {std::polar(mag, 0.0), std::polar(mag, -a), std::polar(mag, a)};
}

double DxSolution::vmag_avg(std::size_t node) const
{
    return (std::abs(v[node][0]) + std::abs(v[node][1]) + std::abs(v[node][2])) / 3.0;
}

namespace {

double pick_tap(const FeederModel& f, double v_sub, const BfsOptions& opt)
{
    if (opt.held_tap) {
        const double step = (f.tap_max - f.tap_min) / f.tap_steps;
        if (std::abs(v_sub * *opt.held_tap - 1.0) <= opt.tap_deadband * step * v_sub) return *opt.held_tap;
    }
    double best = f.tap_min, err = std::abs(v_sub * f.tap_min - 1.0);
    for (int k = 1; k <= f.tap_steps; ++k) {
        const double t = f.tap_min + k * (f.tap_max - f.tap_min) / f.tap_steps;
        const double e = std::abs(v_sub * t - 1.0);
        if (e < err - 1e-15) {
            err = e;
            best = t;
        }
    }
    return best;
}

}  // namespace

DxSolution solve_bfs(const FeederModel& f, const PhaseVoltage& vs, const BfsOptions& opt)
{
    const auto n = f.nodes.size();
    const double s_ph = f.base_kva / 3.0;
    DxSolution sol;

    const double v_sub = (std::abs(vs[0]) + std::abs(vs[1]) + std::abs(vs[2])) / 3.0;
    sol.tap = opt.fixed_tap ? *opt.fixed_tap : (opt.oltc ? pick_tap(f, v_sub, opt) : 1.0);
    PhaseVoltage v0 = vs;
    for (auto& x : v0) x *= sol.tap;

    // per-phase net demand in pu of the per-phase base
    std::vector<std::array<cd, 3>> demand(n);
    for (std::size_t j = 0; j < n; ++j)
        for (int ph = 0; ph < 3; ++ph) demand[j][ph] = cd(f.nodes[j].load_p[ph], f.nodes[j].load_q[ph]) / s_ph;
    for (const auto& d : f.ders)
        for (int ph = 0; ph < 3; ++ph) demand[d.node_ix][ph] -= cd(d.p_gen / 3.0, d.q_phase[ph]) / s_ph;

    std::vector<PhaseImpedance> z(f.edges.size());
    for (std::size_t e = 0; e < f.edges.size(); ++e) z[e] = f.edges[e].phase_impedance();

    sol.v.assign(n, v0);
    std::vector<std::array<cd, 3>> inj(n), branch(n);
    for (int sweep = 1; sweep <= opt.max_sweeps; ++sweep) {
        sol.sweeps = sweep;
        for (std::size_t j = 0; j < n; ++j)
            for (int ph = 0; ph < 3; ++ph) inj[j][ph] = std::conj(demand[j][ph] / sol.v[j][ph]);
        // backward: branch current into each node = own injection + children
        for (auto it = f.order.rbegin(); it != f.order.rend(); ++it) {
            const int j = *it;
            branch[j] = inj[j];
            for (int c : f.children[j])
                for (int ph = 0; ph < 3; ++ph) branch[j][ph] += branch[c][ph];
        }
        // forward: voltage drop along each edge
        double change = 0.0;
        bool finite = true;
        for (int j : f.order) {
            if (j == 0) continue;
            const int p = f.parent[j];
            const auto& zz = z[f.parent_edge[j]];
            for (int a = 0; a < 3; ++a) {
                cd drop = 0.0;
                for (int b = 0; b < 3; ++b) drop += zz[a * 3 + b] * branch[j][b];
                const cd nv = sol.v[p][a] - drop;
                change = std::max(change, std::abs(nv - sol.v[j][a]));
                sol.v[j][a] = nv;
                if (!std::isfinite(nv.real()) || !std::isfinite(nv.imag()) || std::abs(nv) < 0.2) finite = false;
            }
        }
        if (!finite) break;
        if (change <= opt.tol) {
            sol.converged = true;
            break;
        }
    }

    sol.p_flow.assign(f.edges.size(), 0.0);
    sol.q_flow.assign(f.edges.size(), 0.0);
    for (std::size_t j = 1; j < n; ++j) {
        const int e = f.parent_edge[j];
        const int p = f.parent[j];
        cd s = 0.0;
        for (int ph = 0; ph < 3; ++ph) s += sol.v[p][ph] * std::conj(branch[j][ph]);
        sol.p_flow[e] = s.real() * s_ph;
        sol.q_flow[e] = s.imag() * s_ph;
    }
    cd s0 = 0.0;
    for (int ph = 0; ph < 3; ++ph) s0 += sol.v[0][ph] * std::conj(branch[0][ph]);
    sol.p0 = s0.real() * s_ph;
    sol.q0 = s0.imag() * s_ph;
    double net_p = 0.0;
    for (std::size_t j = 0; j < n; ++j)
        for (int ph = 0; ph < 3; ++ph) net_p += demand[j][ph].real() * s_ph;
    sol.losses_p = sol.p0 - net_p;

    if (opt.profile_csv) {
        for (std::size_t j = 0; j < n; ++j)
            for (int ph = 0; ph < 3; ++ph)
                *opt.profile_csv << f.nodes[j].id << ',' << "abc"[ph] << ',' << std::abs(sol.v[j][ph]) << '\n';
    }
    return sol;
}

DxSolution solve_bfs(const FeederModel& feeder, const PhaseVoltage& substation_v, std::span<const double> der_q,
                     const BfsOptions& opt)
{
    if (der_q.size() != feeder.ders.size()) throw PreconditionError("der_q size does not match the DER count");
    FeederModel f = feeder;
    for (std::size_t k = 0; k < f.ders.size(); ++k) f.ders[k].set_q(der_q[k]);
    return solve_bfs(f, substation_v, opt);
}

LinDistState solve_lindistflow(const FeederModel& f, double v0_sq, std::span<const double> der_q)
{
    if (der_q.size() != f.ders.size()) throw PreconditionError("der_q size does not match the DER count");
    const auto n = f.nodes.size();
    std::vector<double> np(n), nq(n);
    for (std::size_t j = 0; j < n; ++j) {
        const auto& nd = f.nodes[j];
        np[j] = nd.load_p[0] + nd.load_p[1] + nd.load_p[2];
        nq[j] = nd.load_q[0] + nd.load_q[1] + nd.load_q[2];
    }
    for (std::size_t k = 0; k < f.ders.size(); ++k) {
        np[f.ders[k].node_ix] -= f.ders[k].p_gen;
        nq[f.ders[k].node_ix] -= der_q[k];
    }
    LinDistState s;
    s.p_flow.assign(f.edges.size(), 0.0);
    s.q_flow.assign(f.edges.size(), 0.0);
    std::vector<double> down_p(n), down_q(n);
    for (auto it = f.order.rbegin(); it != f.order.rend(); ++it) {
        const int j = *it;
        down_p[j] = np[j];
        down_q[j] = nq[j];
        for (int c : f.children[j]) {
            down_p[j] += down_p[c];
            down_q[j] += down_q[c];
        }
        if (j != 0) {
            s.p_flow[f.parent_edge[j]] = down_p[j];
            s.q_flow[f.parent_edge[j]] = down_q[j];
        }
    }
    s.p0 = down_p[0];
    s.q0 = down_q[0];
    s.v_sq.assign(n, v0_sq);
    for (int j : f.order) {
        if (j == 0) continue;
        const auto& e = f.edges[f.parent_edge[j]];
        s.v_sq[j] = s.v_sq[f.parent[j]] - 2.0 * (e.r * down_p[j] + e.x * down_q[j]) / f.base_kva;
    }
    return s;
}

Eigen::MatrixXd lindist_q_sensitivity(const FeederModel& f)
{
    const auto n = f.nodes.size();
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(f.ders.size()));
    for (std::size_t k = 0; k < f.ders.size(); ++k) {
        std::vector<char> on_path(f.edges.size(), 0);
        for (int j = f.ders[k].node_ix; j != 0; j = f.parent[j]) on_path[f.parent_edge[j]] = 1;
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int i = static_cast<int>(j); i != 0; i = f.parent[i])
                if (on_path[f.parent_edge[i]]) acc += f.edges[f.parent_edge[i]].x;
            m(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)) = 2.0 * acc / f.base_kva;
        }
    }
    return m;
}

std::pair<double, double> boundary_aggregate(const DxSolution& sol, const BoundaryLink& link)
{
    return {link.beta * sol.p0 / 1000.0, link.beta * sol.q0 / 1000.0};
}

}  // namespace tdvsm
