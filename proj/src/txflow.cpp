#include "tdvsm/txflow.hpp"

#include <cmath>
#include <complex>
#include <ostream>

#include "tdvsm/errors.hpp"

namespace tdvsm {

namespace {

using cd = std::complex<double>;
using Eigen::MatrixXcd;
using Eigen::MatrixXd;
using Eigen::VectorXcd;
using Eigen::VectorXd;

MatrixXcd build_ybus(const TransmissionNetwork& net)
{
    const auto n = static_cast<Eigen::Index>(net.buses.size());
    MatrixXcd y = MatrixXcd::Zero(n, n);
    for (const auto& br : net.branches) {
        if (!br.in_service) continue;
        const int a = net.bus_index(br.from), b = net.bus_index(br.to);
        const cd ys = 1.0 / cd(br.r, br.x);
        const cd ysh(0.0, br.b_shunt / 2.0);
        y(a, a) += ys + ysh;
        y(b, b) += ys + ysh;
        y(a, b) -= ys;
        y(b, a) -= ys;
    }
    return y;
}

/// Bus classification and unknown indexing for one NR run.
struct Indexing {
    int slack = 0;
    std::vector<int> pvpq;  // angle unknowns
    std::vector<int> pq;    // magnitude unknowns
    std::vector<int> ang_col, mag_col;  // bus -> column (-1 when not an unknown)
};

Indexing make_indexing(const TransmissionNetwork& net, const std::vector<int>& site_of_bus,
                       const std::vector<char>& q_limited)
{
    Indexing ix;
    const int n = static_cast<int>(net.buses.size());
    ix.slack = net.slack_index();
    ix.ang_col.assign(n, -1);
    ix.mag_col.assign(n, -1);
    for (int i = 0; i < n; ++i) {
        if (i == ix.slack) continue;
        ix.pvpq.push_back(i);
        const bool regulated = site_of_bus[i] >= 0 && !q_limited[i];
        if (!regulated) ix.pq.push_back(i);
    }
    int col = 0;
    for (int i : ix.pvpq) ix.ang_col[i] = col++;
    for (int i : ix.pq) ix.mag_col[i] = col++;
    return ix;
}

VectorXcd complex_voltage(const std::vector<double>& vm, const std::vector<double>& va)
{
    VectorXcd v(static_cast<Eigen::Index>(vm.size()));
    for (std::size_t i = 0; i < vm.size(); ++i) v(static_cast<Eigen::Index>(i)) = std::polar(vm[i], va[i]);
    return v;
}

/// dS/dtheta and dS/d|V| as dense complex matrices.
void ds_dv(const MatrixXcd& y, const VectorXcd& v, MatrixXcd& ds_dang, MatrixXcd& ds_dmag)
{
    const VectorXcd ibus = y * v;
    const auto n = v.size();
    VectorXcd vnorm(n);
    for (Eigen::Index i = 0; i < n; ++i) vnorm(i) = v(i) / std::abs(v(i));
    ds_dang = MatrixXcd(n, n);
    ds_dmag = MatrixXcd(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index k = 0; k < n; ++k) {
            const cd diag_i = (i == k) ? ibus(i) : cd(0.0);
            ds_dang(i, k) = cd(0.0, 1.0) * v(i) * std::conj(diag_i - y(i, k) * v(k));
            ds_dmag(i, k) = v(i) * std::conj(y(i, k) * vnorm(k)) + ((i == k) ? std::conj(ibus(i)) * vnorm(i) : cd(0.0));
        }
}

MatrixXd reduced_jacobian(const Indexing& ix, const MatrixXcd& dang, const MatrixXcd& dmag)
{
    const auto na = ix.pvpq.size(), nm = ix.pq.size();
    MatrixXd j(na + nm, na + nm);
    for (std::size_t r = 0; r < na + nm; ++r) {
        const bool p_row = r < na;
        const int bus = p_row ? ix.pvpq[r] : ix.pq[r - na];
        for (std::size_t c = 0; c < na + nm; ++c) {
            const bool ang_col = c < na;
            const int k = ang_col ? ix.pvpq[c] : ix.pq[c - na];
            const cd d = ang_col ? dang(bus, k) : dmag(bus, k);
            j(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = p_row ? d.real() : d.imag();
        }
    }
    return j;
}

struct Problem {
    const TransmissionNetwork& net;
    const BusLoads& loads;
    std::vector<GenSite> sites;
    std::vector<int> site_of_bus;
    MatrixXcd y;

    Problem(const TransmissionNetwork& n, const BusLoads& l) : net(n), loads(l), sites(gen_sites(n)), y(build_ybus(n))
    {
        site_of_bus.assign(net.buses.size(), -1);
        for (std::size_t s = 0; s < sites.size(); ++s) site_of_bus[sites[s].bus_index] = static_cast<int>(s);
        if (loads.p.size() != net.buses.size() || loads.q.size() != net.buses.size())
            throw PreconditionError("bus load vectors do not match the bus count");
    }

    double limit_q(int bus, const std::vector<double>& q_fixed) const { return q_fixed[bus]; }
};

struct InnerResult {
    bool converged = false;
    int iterations = 0;
    double mismatch = 0.0;
};

/// Inner Newton loop on fixed bus types. @p q_fixed holds the generator
/// reactive output (MVAr) of limited buses.
InnerResult newton(const Problem& pb, const Indexing& ix, const std::vector<double>& q_fixed, std::vector<double>& vm,
                   std::vector<double>& va, const NrOptions& opt, std::vector<double>& history, int iter_offset)
{
    const auto n = pb.net.buses.size();
    const double base = pb.net.base_mva;
    VectorXd p_spec(n), q_spec(n);
    for (std::size_t i = 0; i < n; ++i) {
        const int s = pb.site_of_bus[i];
        const double pg = s >= 0 ? pb.sites[s].p : 0.0;
        p_spec(i) = (pg - pb.loads.p[i]) / base;
        q_spec(i) = (q_fixed[i] - pb.loads.q[i]) / base;
    }
    const auto na = ix.pvpq.size(), nm = ix.pq.size();
    InnerResult res;
    for (int it = 1; it <= opt.max_iter; ++it) {
        const VectorXcd v = complex_voltage(vm, va);
        const VectorXcd s = v.cwiseProduct((pb.y * v).conjugate());
        VectorXd f(na + nm);
        for (std::size_t r = 0; r < na; ++r) f(r) = p_spec(ix.pvpq[r]) - s(ix.pvpq[r]).real();
        for (std::size_t r = 0; r < nm; ++r) f(na + r) = q_spec(ix.pq[r]) - s(ix.pq[r]).imag();
        const double norm = f.size() ? f.cwiseAbs().maxCoeff() : 0.0;
        history.push_back(norm);
        res.iterations = it;
        res.mismatch = norm;
        if (opt.trace_csv) *opt.trace_csv << (iter_offset + it) << ',' << norm << '\n';
        if (!std::isfinite(norm) || norm > 1e8) return res;
        if (norm <= opt.tol) {
            res.converged = true;
            return res;
        }
        MatrixXcd dang, dmag;
        ds_dv(pb.y, v, dang, dmag);
        const MatrixXd j = reduced_jacobian(ix, dang, dmag);
        const VectorXd dx = j.partialPivLu().solve(f);
        if (!dx.allFinite()) return res;
        for (std::size_t r = 0; r < na; ++r) va[ix.pvpq[r]] += dx(r);
        for (std::size_t r = 0; r < nm; ++r) vm[ix.pq[r]] += dx(na + r);
    }
    return res;
}

}  // namespace

BusLoads fixed_loads(const TransmissionNetwork& net)
{
    BusLoads l;
    for (const auto& b : net.buses) {
        l.p.push_back(b.load_p);
        l.q.push_back(b.load_q);
    }
    return l;
}

TxSolution solve_nr(const TransmissionNetwork& net, const BusLoads& loads, const NrOptions& opt, const TxSolution* warm)
{
    const Problem pb(net, loads);
    const auto n = net.buses.size();
    TxSolution sol;
    sol.q_limited.assign(n, 0);
    std::vector<double> vm(n, 1.0), va(n, 0.0), q_fixed(n, 0.0);
    if (warm && warm->v_mag.size() == n && warm->converged) {
        vm = warm->v_mag;
        va = warm->v_ang;
        sol.q_limited = warm->q_limited;
    }
    const int slack = net.slack_index();
    for (std::size_t i = 0; i < n; ++i) {
        const int s = pb.site_of_bus[i];
        if (s < 0) continue;
        if (sol.q_limited[i]) {
            // keep the limit the unit was held at when warm-started
            const double qw = warm ? warm->gen_q[s] : 0.0;
            q_fixed[i] = std::abs(qw - pb.sites[s].q_max) < std::abs(qw - pb.sites[s].q_min) ? pb.sites[s].q_max
                                                                                              : pb.sites[s].q_min;
        } else {
            vm[i] = pb.sites[s].v_set;
        }
    }
    va[slack] = 0.0;

    const int max_outer = static_cast<int>(pb.sites.size()) + 1;
    bool ok = false;
    for (int outer = 0; outer <= max_outer; ++outer) {
        const Indexing ix = make_indexing(net, pb.site_of_bus, sol.q_limited);
        const auto r = newton(pb, ix, q_fixed, vm, va, opt, sol.mismatch_history, sol.iterations);
        sol.iterations += r.iterations;
        sol.max_mismatch = r.mismatch;
        if (!r.converged) {
            ok = false;
            break;
        }
        ok = true;
        if (!opt.enforce_q_limits) break;

        // worst reactive-limit violator among regulating non-slack units
        const VectorXcd v = complex_voltage(vm, va);
        const VectorXcd s = v.cwiseProduct((pb.y * v).conjugate());
        int worst = -1;
        double worst_viol = 1e-6;
        double worst_limit = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const int site = pb.site_of_bus[i];
            if (site < 0 || static_cast<int>(i) == slack || sol.q_limited[i]) continue;
            const double qg = s(static_cast<Eigen::Index>(i)).imag() * net.base_mva + loads.q[i];
            const auto& gs = pb.sites[site];
            const double viol = std::max(qg - gs.q_max, gs.q_min - qg);
            // strict '>' keeps the lowest bus id on ties
            if (viol > worst_viol) {
                worst_viol = viol;
                worst = static_cast<int>(i);
                worst_limit = qg > gs.q_max ? gs.q_max : gs.q_min;
            }
        }
        if (worst < 0) break;
        sol.q_limited[worst] = 1;
        q_fixed[worst] = worst_limit;
        ++sol.switches;
        ok = false;
    }

    sol.converged = ok;
    sol.v_mag = vm;
    sol.v_ang = va;
    const VectorXcd v = complex_voltage(vm, va);
    const VectorXcd s = v.cwiseProduct((pb.y * v).conjugate());
    sol.p_inj.resize(n);
    sol.q_inj.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        sol.p_inj[i] = s(static_cast<Eigen::Index>(i)).real() * net.base_mva;
        sol.q_inj[i] = s(static_cast<Eigen::Index>(i)).imag() * net.base_mva;
    }
    sol.gen_p.resize(pb.sites.size());
    sol.gen_q.resize(pb.sites.size());
    for (std::size_t k = 0; k < pb.sites.size(); ++k) {
        const int b = pb.sites[k].bus_index;
        sol.gen_p[k] = b == slack ? sol.p_inj[b] + loads.p[b] : pb.sites[k].p;
        sol.gen_q[k] = sol.q_limited[b] ? q_fixed[b] : sol.q_inj[b] + loads.q[b];
    }
    return sol;
}

TxSensitivities sensitivities(const TransmissionNetwork& net, const BusLoads& loads, const TxSolution& sol,
                              std::span<const int> q_buses)
{
    if (!sol.converged) throw PreconditionError("sensitivities require a converged power flow");
    const Problem pb(net, loads);
    const auto n = static_cast<Eigen::Index>(net.buses.size());
    const auto units = static_cast<Eigen::Index>(pb.sites.size());
    const Indexing ix = make_indexing(net, pb.site_of_bus, sol.q_limited);
    const VectorXcd v = complex_voltage(sol.v_mag, sol.v_ang);
    MatrixXcd dang, dmag;
    ds_dv(pb.y, v, dang, dmag);
    const MatrixXd j = reduced_jacobian(ix, dang, dmag);
    const auto lu = j.partialPivLu();
    if (j.size() > 0 && !(lu.rcond() > 1e-13)) throw NumericalError("singular power-flow Jacobian");
    const auto na = ix.pvpq.size(), nm = ix.pq.size();
    const double base = net.base_mva;

    TxSensitivities out;
    out.dv_dvg = MatrixXd::Zero(n, units);
    out.dv_dq = MatrixXd::Zero(n, static_cast<Eigen::Index>(q_buses.size()));
    out.dqg_dvg = VectorXd::Zero(units);

    for (Eigen::Index u = 0; u < units; ++u) {
        const int k = pb.sites[u].bus_index;
        if (sol.q_limited[k]) continue;
        VectorXd rhs(na + nm);
        for (std::size_t r = 0; r < na; ++r) rhs(r) = dmag(ix.pvpq[r], k).real();
        for (std::size_t r = 0; r < nm; ++r) rhs(na + r) = dmag(ix.pq[r], k).imag();
        const VectorXd dy = j.size() ? VectorXd(-lu.solve(rhs)) : VectorXd();
        for (Eigen::Index t = 0; t < n; ++t) {
            if (ix.mag_col[t] >= 0)
                out.dv_dvg(t, u) = dy(ix.mag_col[t]);
            else
                out.dv_dvg(t, u) = (t == k) ? 1.0 : 0.0;
        }
        // reactive output of the unit: direct term plus the state response
        double dq = dmag(k, k).imag();
        for (std::size_t c = 0; c < na; ++c) dq += dang(k, ix.pvpq[c]).imag() * dy(c);
        for (std::size_t c = 0; c < nm; ++c) dq += dmag(k, ix.pq[c]).imag() * dy(na + c);
        out.dqg_dvg(u) = dq * base;
    }

    for (std::size_t m = 0; m < q_buses.size(); ++m) {
        const int b = q_buses[m];
        if (ix.mag_col[b] < 0) continue;  // regulated bus absorbs the injection
        VectorXd rhs = VectorXd::Zero(na + nm);
        rhs(ix.mag_col[b]) = 1.0 / base;
        const VectorXd dy = lu.solve(rhs);
        for (Eigen::Index t = 0; t < n; ++t)
            if (ix.mag_col[t] >= 0) out.dv_dq(t, static_cast<Eigen::Index>(m)) = dy(ix.mag_col[t]);
    }
    if (!out.dv_dvg.allFinite() || !out.dv_dq.allFinite() || !out.dqg_dvg.allFinite())
        throw NumericalError("non-finite sensitivity entries");
    return out;
}

TxSensitivities sensitivities_fd(const TransmissionNetwork& net, const BusLoads& loads, const TxSolution& sol,
                                 std::span<const int> q_buses, double h)
{
    const auto sites = gen_sites(net);
    const auto n = static_cast<Eigen::Index>(net.buses.size());
    NrOptions opt;
    opt.tol = 1e-13;
    opt.max_iter = 50;
    opt.enforce_q_limits = false;

    auto resolve = [&](const TransmissionNetwork& nn, const BusLoads& ll) {
        auto s = solve_nr(nn, ll, opt, &sol);
        if (!s.converged) throw NumericalError("finite-difference power flow did not converge");
        return s;
    };
    auto shifted = [&](std::size_t u, double dv) {
        TransmissionNetwork nn = net;
        const auto& s = sites[u];
        if (s.ibr)
            nn.ibrs[s.unit].v_set += dv;
        else
            nn.generators[s.unit].v_set += dv;
        return nn;
    };

    TxSensitivities out;
    out.dv_dvg = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(sites.size()));
    out.dv_dq = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(q_buses.size()));
    out.dqg_dvg = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(sites.size()));
    for (std::size_t u = 0; u < sites.size(); ++u) {
        if (sol.q_limited[sites[u].bus_index]) continue;
        const auto up = resolve(shifted(u, h), loads);
        const auto dn = resolve(shifted(u, -h), loads);
        for (Eigen::Index t = 0; t < n; ++t)
            out.dv_dvg(t, static_cast<Eigen::Index>(u)) = (up.v_mag[t] - dn.v_mag[t]) / (2 * h);
        out.dqg_dvg(static_cast<Eigen::Index>(u)) = (up.gen_q[u] - dn.gen_q[u]) / (2 * h);
    }
    const double hq = h * net.base_mva;
    for (std::size_t m = 0; m < q_buses.size(); ++m) {
        BusLoads up = loads, dn = loads;
        up.q[q_buses[m]] -= hq;  // injection = negative demand
        dn.q[q_buses[m]] += hq;
        const auto su = resolve(net, up);
        const auto sd = resolve(net, dn);
        for (Eigen::Index t = 0; t < n; ++t)
            out.dv_dq(t, static_cast<Eigen::Index>(m)) = (su.v_mag[t] - sd.v_mag[t]) / (2 * hq);
    }
    return out;
}

}  // namespace tdvsm
