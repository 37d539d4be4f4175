#include "tdvsm/dsopt.hpp"

#include <cmath>
#include <ostream>

#include <fmt/format.h>

#include "tdvsm/dxflow.hpp"
#include "tdvsm/errors.hpp"

namespace tdvsm {

namespace {

constexpr const char* kPhase[3] = {"a", "b", "c"};

// v_sq(node) = v0_sq + drop(node) + sum_k sens(node, k) q_k under LinDistFlow.
struct VoltageModel {
    std::vector<double> drop;
    Eigen::MatrixXd sens;
};

VoltageModel voltage_model(const FeederModel& f)
{
    const std::vector<double> zero(f.ders.size(), 0.0);
    const auto s = solve_lindistflow(f, 0.0, zero);
    return {s.v_sq, lindist_q_sensitivity(f)};
}

int add_v0(LinearProgram& lp, const FeederModel& f, double v_tm)
{
    const double lo = v_tm * f.tap_min, hi = v_tm * f.tap_max;
    return lp.add_var("v0_sq", 0.0, lo * lo, hi * hi);
}

// der_vars[k]: the LP columns whose sum is DER k's reactive output.
void add_voltage_rows(LinearProgram& lp, const FeederModel& f, int v0, const std::vector<std::vector<int>>& der_vars)
{
    const auto vm = voltage_model(f);
    for (std::size_t n = 0; n < f.nodes.size(); ++n) {
        std::vector<std::pair<int, double>> terms{{v0, 1.0}};
        for (std::size_t k = 0; k < der_vars.size(); ++k) {
            const double s = vm.sens(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
            if (s == 0.0) continue;
            for (int v : der_vars[k]) terms.emplace_back(v, s);
        }
        const auto& nd = f.nodes[n];
        lp.add_row(fmt::format("vmax_node{}", nd.id), terms, RowSense::le, nd.v_max * nd.v_max - vm.drop[n]);
        lp.add_row(fmt::format("vmin_node{}", nd.id), std::move(terms), RowSense::ge, nd.v_min * nd.v_min - vm.drop[n]);
    }
}

std::vector<std::string> binding(const LinearProgram& lp, const LpResult& r)
{
    std::vector<std::string> out;
    for (int i : r.active_rows)
        if (std::abs(r.row_dual(i)) > 1e-12) out.push_back(lp.rows[i].name);
    for (int j = 0; j < lp.vars(); ++j) {
        if (std::abs(r.reduced_cost(j)) <= 1e-12) continue;
        if (r.x(j) <= lp.lower[j] + 1e-9 * (1.0 + std::abs(lp.lower[j]))) out.push_back(lp.var_names[j] + ".min");
        else if (r.x(j) >= lp.upper[j] - 1e-9 * (1.0 + std::abs(lp.upper[j]))) out.push_back(lp.var_names[j] + ".max");
    }
    return out;
}

std::string join(const std::vector<std::string>& v)
{
    std::string s;
    for (const auto& x : v) s += (s.empty() ? "" : ", ") + x;
    return s;
}

}  // namespace

CapabilityRange capability_range(const FeederModel& f, double v_tm, std::ostream* lp_dump)
{
    LinearProgram lp;
    const int v0 = add_v0(lp, f, v_tm);
    std::vector<std::vector<int>> der_vars;
    for (std::size_t k = 0; k < f.ders.size(); ++k) {
        const auto lim = der_q_limits(f.ders[k]);
        der_vars.push_back({lp.add_var(fmt::format("q_der{}", f.ders[k].node), 1.0, lim.q_min, lim.q_max)});
    }
    add_voltage_rows(lp, f, v0, der_vars);
    if (lp_dump) write_lp(*lp_dump, lp);

    CapabilityRange cr;
    const std::vector<double> zero(f.ders.size(), 0.0);
    cr.q0_zero = solve_lindistflow(f, 1.0, zero).q0;
    for (int sense : {+1, -1}) {
        for (const auto& dv : der_vars) lp.cost[dv[0]] = sense;
        const auto r = solve_lp(lp);
        if (r.status != LpStatus::optimal)
            throw InfeasibleError(fmt::format("feeder {}: voltage limits cannot be met within the tap range ({})", f.id,
                                              join(r.violated)));
        std::vector<double> q;
        double total = 0.0;
        for (const auto& dv : der_vars) {
            q.push_back(r.x(dv[0]));
            total += r.x(dv[0]);
        }
        if (sense > 0) {
            cr.q_min_agg = total;
            cr.der_at_min = std::move(q);
            cr.binding_min = binding(lp, r);
        } else {
            cr.q_max_agg = total;
            cr.der_at_max = std::move(q);
            cr.binding_max = binding(lp, r);
        }
    }
    return cr;
}

Eigen::VectorXd dx_weights(const MlpModel& dx_model, const Eigen::VectorXd& q_op)
{
    const Eigen::VectorXd s = gradient(dx_model, q_op).cwiseAbs();
    const double total = s.sum();
    if (!(total > 1e-12)) throw NumericalError("DER sensitivities are all zero; weights undefined");
    return (1.0 - (s / total).array()).matrix();
}

RedispatchResult redispatch(const FeederModel& f, double request_mvar, const BoundaryLink& link, const Eigen::VectorXd& w,
                            const RedispatchOptions& opt)
{
    const auto nd = f.ders.size();
    if (static_cast<std::size_t>(w.size()) != nd)
        throw PreconditionError(fmt::format("feeder {}: {} weights for {} DERs", f.id, w.size(), nd));
    if (opt.alpha < 0.0) throw PreconditionError("unbalance band must be non-negative");
    const double target = request_mvar * 1000.0 / link.beta;
    const double dir = target >= 0.0 ? 1.0 : -1.0;

    LinearProgram lp;
    const int v0 = add_v0(lp, f, opt.v_tm);
    std::vector<std::vector<int>> der_vars(nd);
    for (std::size_t k = 0; k < nd; ++k)
        for (int ph = 0; ph < 3; ++ph)
            der_vars[k].push_back(lp.add_var(fmt::format("q_der{}_{}", f.ders[k].node, kPhase[ph]), dir * w(static_cast<Eigen::Index>(k)),
                                             -kInf, kInf));
    add_voltage_rows(lp, f, v0, der_vars);

    std::vector<std::pair<int, double>> all;
    for (std::size_t k = 0; k < nd; ++k) {
        const auto& dv = der_vars[k];
        const int node = f.ders[k].node;
        const auto lim = der_q_limits(f.ders[k]);
        std::vector<std::pair<int, double>> sum{{dv[0], 1.0}, {dv[1], 1.0}, {dv[2], 1.0}};
        lp.add_row(fmt::format("qmax_der{}", node), sum, RowSense::le, dir > 0 ? lim.q_max : std::min(lim.q_max, 0.0));
        lp.add_row(fmt::format("qmin_der{}", node), sum, RowSense::ge, dir > 0 ? std::max(lim.q_min, 0.0) : lim.q_min);
        if (opt.alpha == 0.0) {
            lp.add_row(fmt::format("balance_der{}_ab", node), {{dv[0], 1.0}, {dv[1], -1.0}}, RowSense::eq, 0.0);
            lp.add_row(fmt::format("balance_der{}_bc", node), {{dv[1], 1.0}, {dv[2], -1.0}}, RowSense::eq, 0.0);
        } else {
            // |q_ph - avg| <= alpha |avg| + eps, with |avg| = dir * avg
            for (int ph = 0; ph < 3; ++ph) {
                std::vector<std::pair<int, double>> up, dn;
                for (int o = 0; o < 3; ++o) {
                    const double dev = (o == ph ? 1.0 : 0.0) - 1.0 / 3.0;
                    up.emplace_back(dv[o], dev - opt.alpha * dir / 3.0);
                    dn.emplace_back(dv[o], -dev - opt.alpha * dir / 3.0);
                }
                lp.add_row(fmt::format("band_der{}_{}_hi", node, kPhase[ph]), std::move(up), RowSense::le, opt.eps_band);
                lp.add_row(fmt::format("band_der{}_{}_lo", node, kPhase[ph]), std::move(dn), RowSense::le, opt.eps_band);
            }
        }
        all.insert(all.end(), sum.begin(), sum.end());
    }
    lp.add_row("request", all, RowSense::eq, target);
    if (opt.lp_dump) write_lp(*opt.lp_dump, lp);

    const auto r = solve_lp(lp);
    if (r.status != LpStatus::optimal) {
        std::string range = "unavailable";
        try {
            const auto cr = capability_range(f, opt.v_tm);
            range = fmt::format("[{:.3f}, {:.3f}]", cr.q_min_agg, cr.q_max_agg);
        } catch (const InfeasibleError&) {
        }
        throw InfeasibleError(fmt::format("feeder {}: request of {:.3f} kVAr per copy cannot be met (capability {} kVAr; "
                                          "conflicting: {})",
                                          f.id, target, range, join(r.violated)));
    }

    RedispatchResult res;
    res.feasible = true;
    for (std::size_t k = 0; k < nd; ++k) {
        std::array<double, 3> ph{};
        for (int p = 0; p < 3; ++p) ph[p] = r.x(der_vars[k][p]);
        res.q_phase.push_back(ph);
        res.q.push_back(ph[0] + ph[1] + ph[2]);
        res.q_agg += res.q.back();
    }
    res.objective = r.objective;
    res.v0 = std::sqrt(r.x(v0));
    res.q0_predicted = solve_lindistflow(f, r.x(v0), res.q).q0;
    for (int i : r.active_rows) res.active.push_back(lp.rows[i].name);
    res.kkt = check_lp_kkt(lp, r.x, r.row_dual);
    return res;
}

void apply_redispatch(FeederModel& f, const RedispatchResult& r)
{
    if (r.q_phase.size() != f.ders.size()) throw PreconditionError("dispatch does not match the feeder's DERs");
    for (std::size_t k = 0; k < f.ders.size(); ++k) f.ders[k].q_phase = r.q_phase[k];
}

double der_q_total(const FeederModel& f)
{
    double s = 0.0;
    for (const auto& d : f.ders) s += d.q_total();
    return s;
}

}  // namespace tdvsm
