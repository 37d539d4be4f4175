#include "tdvsm/tsopt.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "tdvsm/dsopt.hpp"

namespace tdvsm {

TsoWeights build_weights(const Eigen::VectorXd& grad_v, const Eigen::VectorXd& grad_q)
{
    auto group = [](const Eigen::VectorXd& g, const char* what) -> Eigen::VectorXd {
        if (g.size() == 0) return g;
        if (!g.allFinite()) throw NumericalError(fmt::format("non-finite VSM sensitivity in the {} group", what));
        const Eigen::VectorXd s = g.cwiseAbs();
        const double total = s.sum();
        if (!(total > 1e-12)) throw NumericalError(fmt::format("VSM sensitivities of the {} group are all zero", what));
        return (1.0 - (s / total).array()).matrix();
    };
    return {group(grad_v, "voltage set-point"), group(grad_q, "DER support")};
}

namespace {

void check(const TsoProblem& p)
{
    const auto nu = p.units(), nl = p.links(), nb = static_cast<int>(p.v.size());
    auto need = [](bool ok, const char* what) {
        if (!ok) throw PreconditionError(fmt::format("TSO problem: inconsistent {}", what));
    };
    need(p.weights.a_v.size() == nu && p.weights.a_q.size() == nl, "weights");
    need(p.v_min.size() == nb && p.v_max.size() == nb, "bus limits");
    need(p.dv_dvg.rows() == nb && p.dv_dvg.cols() == nu, "dV/dVg");
    need(p.dv_dq.rows() == nb && p.dv_dq.cols() == nl, "dV/dQ");
    need(p.v_set.size() == nu && p.vg_min.size() == nu && p.vg_max.size() == nu, "set-point boxes");
    need(p.qg.size() == nu && p.qg_min.size() == nu && p.qg_max.size() == nu && p.dqg_dvg.size() == nu, "reactive limits");
    need(p.dq_min.size() == nl && p.dq_max.size() == nl, "DER boxes");
}

std::string name_of(const std::vector<std::string>& names, int i, const char* prefix)
{
    return static_cast<std::size_t>(i) < names.size() ? names[i] : fmt::format("{}{}", prefix, i + 1);
}

// Every row except the VSM target holds at zero dispatch: limits already
// violated at the present point are relaxed to the present value.
QuadraticProgram network_rows(const TsoProblem& p)
{
    const int nu = p.units(), nl = p.links(), n = nu + nl;
    QuadraticProgram qp;
    qp.h.resize(n);
    qp.h.head(nu) = 2.0 * p.weights.a_v.cwiseMax(p.weight_floor);
    qp.h.tail(nl) = 2.0 * p.weights.a_q.cwiseMax(p.weight_floor);
    qp.g = Eigen::VectorXd::Zero(n);
    qp.a.resize(0, n);

    for (Eigen::Index b = 0; b < p.v.size(); ++b) {
        Eigen::RowVectorXd row(n);
        row << p.dv_dvg.row(b), p.dv_dq.row(b);
        if (row.cwiseAbs().maxCoeff() == 0.0) continue;
        const auto bus = name_of(p.bus_names, static_cast<int>(b), "bus");
        qp.add_row(row, std::max(p.v_max(b), p.v(b)) - p.v(b), "vmax_" + bus);
        qp.add_row(-row, p.v(b) - std::min(p.v_min(b), p.v(b)), "vmin_" + bus);
    }
    for (int u = 0; u < nu; ++u) {
        const auto unit = name_of(p.unit_names, u, "unit");
        qp.add_bounds(u, std::min(p.vg_min(u), p.v_set(u)) - p.v_set(u), std::max(p.vg_max(u), p.v_set(u)) - p.v_set(u),
                      unit + ".vset");
        if (p.dqg_dvg(u) != 0.0) {
            Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(n);
            row(u) = p.dqg_dvg(u);
            qp.add_row(row, std::max(p.qg_max(u), p.qg(u)) - p.qg(u), unit + ".qmax");
            qp.add_row(-row, p.qg(u) - std::min(p.qg_min(u), p.qg(u)), unit + ".qmin");
        }
    }
    for (int l = 0; l < nl; ++l)
        qp.add_bounds(nu + l, std::min(p.dq_min(l), 0.0), std::max(p.dq_max(l), 0.0),
                      name_of(p.link_names, l, "link") + ".dq");
    return qp;
}

Eigen::VectorXd vsm_gradient(const TsoProblem& p)
{
    Eigen::VectorXd g(p.units() + p.links());
    g << p.grad_v, p.grad_q;
    return g;
}

TsoDispatch make_dispatch(const TsoProblem& p, const Eigen::VectorXd& x)
{
    TsoDispatch d;
    d.dv_g = x.head(p.units());
    d.dq_l = x.tail(p.links());
    d.v_predicted = p.v + p.dv_dvg * d.dv_g + p.dv_dq * d.dq_l;
    d.vsm_predicted = p.vsm_current + vsm_gradient(p).dot(x);
    d.objective = d.dv_g.dot(p.weights.a_v.cwiseProduct(d.dv_g)) + d.dq_l.dot(p.weights.a_q.cwiseProduct(d.dq_l));
    return d;
}

TsoDispatch max_vsm_dispatch(const TsoProblem& p, const QuadraticProgram& rows)
{
    const Eigen::VectorXd g = vsm_gradient(p);
    LinearProgram lp;
    for (Eigen::Index j = 0; j < g.size(); ++j) lp.add_var(fmt::format("x{}", j), -g(j), -kInf, kInf);
    for (int i = 0; i < rows.rows(); ++i) {
        std::vector<std::pair<int, double>> t;
        for (Eigen::Index j = 0; j < g.size(); ++j)
            if (rows.a(i, j) != 0.0) t.emplace_back(static_cast<int>(j), rows.a(i, j));
        lp.add_row(rows.row_names[i], std::move(t), RowSense::le, rows.b(i));
    }
    const auto r = solve_lp(lp);
    if (r.status != LpStatus::optimal) throw NumericalError("maximum achievable VSM could not be determined");
    auto d = make_dispatch(p, r.x);
    for (int i : r.active_rows) d.active.push_back(lp.rows[i].name);
    return d;
}

}  // namespace

QuadraticProgram tso_qp(const TsoProblem& p)
{
    check(p);
    auto qp = network_rows(p);
    qp.add_row(-vsm_gradient(p).transpose(), p.vsm_current - p.vsm_min, "vsm_target");
    return qp;
}

TsoDispatch solve_tso(const TsoProblem& p)
{
    check(p);
    const int n = p.units() + p.links();
    const double gap = p.vsm_min - p.vsm_current;
    if (gap <= 0.0) {
        auto d = make_dispatch(p, Eigen::VectorXd::Zero(n));
        d.kkt = {};
        return d;
    }
    auto qp = tso_qp(p);
    QpResult r;
    try {
        r = solve_qp(qp);
    } catch (const InfeasibleError&) {
        qp.a.conservativeResize(qp.rows() - 1, n);
        qp.b.conservativeResize(qp.rows() - 1);
        qp.row_names.pop_back();
        auto best = max_vsm_dispatch(p, qp);
        const double top = best.vsm_predicted;
        throw TargetUnreachableError(
            fmt::format("VSM target {:.3f} MW is out of reach; at most {:.3f} MW within the control limits", p.vsm_min, top),
            top, std::move(best));
    }
    auto d = make_dispatch(p, r.x);
    for (int i : r.active) d.active.push_back(qp.row_names[i]);
    d.kkt = check_qp_kkt(qp, r.x, r.mu);
    return d;
}

double surrogate_vsm(const TdSystem& sys, const CoSimResult& state, const MlpModel& vsm_model)
{
    const auto x = state_vector(sys, state);
    if (x.size() != vsm_model.dim())
        throw PreconditionError(fmt::format("surrogate expects {} inputs, the system has {}", vsm_model.dim(), x.size()));
    if (!vsm_model.inputs.empty() && vsm_model.inputs != state_layout(sys.net).names())
        throw PreconditionError("surrogate input ordering does not match the system");
    return forward(vsm_model, x);
}

TsoProblem build_tso_problem(const TdSystem& sys, const CoSimResult& state, const MlpModel& vsm_model, double vsm_min,
                             const TsoBuildOptions& opt)
{
    if (!state.converged) throw PreconditionError("TSO problem needs a converged operating point");
    const auto& net = sys.net;
    const auto layout = state_layout(net);
    const auto sites = gen_sites(net);
    const auto x = state_vector(sys, state);
    const double vsm = surrogate_vsm(sys, state, vsm_model);
    const Eigen::VectorXd grad = gradient(vsm_model, x);

    TsoProblem p;
    p.vsm_current = vsm;
    p.vsm_min = vsm_min;
    const auto nu = static_cast<Eigen::Index>(sites.size());
    const auto nl = static_cast<Eigen::Index>(net.boundary_links.size());
    const auto nb = static_cast<Eigen::Index>(net.buses.size());

    p.grad_v.resize(nu);
    p.v_set.resize(nu);
    p.vg_min.resize(nu);
    p.vg_max.resize(nu);
    p.qg.resize(nu);
    p.qg_min.resize(nu);
    p.qg_max.resize(nu);
    for (Eigen::Index u = 0; u < nu; ++u) {
        const auto& s = sites[static_cast<std::size_t>(u)];
        p.grad_v(u) = grad(static_cast<Eigen::Index>(layout.vg(static_cast<std::size_t>(u))));
        p.v_set(u) = s.v_set;
        p.vg_min(u) = net.buses[s.bus_index].v_min;
        p.vg_max(u) = net.buses[s.bus_index].v_max;
        p.qg(u) = state.tx.gen_q[static_cast<std::size_t>(u)];
        p.qg_min(u) = s.q_min;
        p.qg_max(u) = s.q_max;
        p.unit_names.push_back(fmt::format("{}{}", s.ibr ? "IBR" : "G", net.buses[s.bus_index].id));
    }

    std::vector<int> q_buses;
    p.grad_q.resize(nl);
    p.dq_min.resize(nl);
    p.dq_max.resize(nl);
    for (Eigen::Index l = 0; l < nl; ++l) {
        const auto& link = net.boundary_links[static_cast<std::size_t>(l)];
        const int b = net.bus_index(link.tx_bus);
        q_buses.push_back(b);
        const auto it = std::find(layout.load_buses.begin(), layout.load_buses.end(), b);
        if (it == layout.load_buses.end()) throw PreconditionError(fmt::format("link bus {} carries no load", link.tx_bus));
        const auto j = static_cast<std::size_t>(it - layout.load_buses.begin());
        p.grad_q(l) = -grad(static_cast<Eigen::Index>(layout.ql(j)));

        const auto& feeder = sys.link_feeders[static_cast<std::size_t>(l)];
        const auto cr = capability_range(feeder, state.tx.v_mag[b]);
        const double now = der_q_total(feeder);
        p.dq_min(l) = std::min(0.0, link.beta * (cr.q_min_agg - now) / 1000.0);
        p.dq_max(l) = std::max(0.0, link.beta * (cr.q_max_agg - now) / 1000.0);
        p.link_names.push_back(fmt::format("L{}:{}", link.tx_bus, link.feeder));
    }

    const auto sens = sensitivities(net, state.bus_loads, state.tx, q_buses);
    p.dv_dvg = sens.dv_dvg;
    p.dv_dq = sens.dv_dq;
    p.dqg_dvg = sens.dqg_dvg;
    p.v = Eigen::Map<const Eigen::VectorXd>(state.tx.v_mag.data(), nb);
    p.v_min.resize(nb);
    p.v_max.resize(nb);
    for (Eigen::Index b = 0; b < nb; ++b) {
        p.v_min(b) = net.buses[static_cast<std::size_t>(b)].v_min;
        p.v_max(b) = net.buses[static_cast<std::size_t>(b)].v_max;
        p.bus_names.push_back(fmt::format("bus{}", net.buses[static_cast<std::size_t>(b)].id));
    }

    if (opt.weights == WeightMode::sensitivity) p.weights = build_weights(p.grad_v, p.grad_q);
    else p.weights = {Eigen::VectorXd::Ones(nu), Eigen::VectorXd::Ones(nl)};
    return p;
}

TdSystem shift_setpoints(const TdSystem& sys, const Eigen::VectorXd& dv_g)
{
    auto out = sys;
    const auto sites = gen_sites(sys.net);
    if (static_cast<std::size_t>(dv_g.size()) != sites.size()) throw PreconditionError("one set-point change per unit expected");
    for (std::size_t u = 0; u < sites.size(); ++u) {
        const double d = dv_g(static_cast<Eigen::Index>(u));
        if (sites[u].ibr) out.net.ibrs[sites[u].unit].v_set += d;
        else out.net.generators[sites[u].unit].v_set += d;
    }
    return out;
}

Verification verify_dispatch(const TdSystem& sys, const TsoDispatch& d, const MlpModel& vsm_model, const CoSimOptions& opt,
                             const CoSimResult* warm)
{
    auto next = shift_setpoints(sys, d.dv_g);
    if (static_cast<std::size_t>(d.dq_l.size()) != sys.net.boundary_links.size())
        throw PreconditionError("one DER support change per boundary link expected");
    for (std::size_t l = 0; l < sys.net.boundary_links.size(); ++l)
        next.net.buses[next.net.bus_index(sys.net.boundary_links[l].tx_bus)].load_q -= d.dq_l(static_cast<Eigen::Index>(l));
    Verification v;
    v.state = cosimulate(next, opt, warm);
    if (!v.state.converged) throw NumericalError("co-simulation diverged after applying the dispatch");
    v.vsm = surrogate_vsm(next, v.state, vsm_model);
    for (std::size_t b = 0; b < next.net.buses.size(); ++b) {
        const double vm = v.state.tx.v_mag[b];
        v.v_violation = std::max({v.v_violation, vm - next.net.buses[b].v_max, next.net.buses[b].v_min - vm});
    }
    return v;
}

}  // namespace tdvsm
