#include "tdvsm/cosim.hpp"

#include <cmath>
#include <optional>
#include <ostream>

#include "tdvsm/errors.hpp"

namespace tdvsm {

TdSystem make_system(const Case& c)
{
    TdSystem sys;
    sys.net = c.network;
    for (std::size_t l = 0; l < c.network.boundary_links.size(); ++l) sys.link_feeders.push_back(c.link_feeder(l));
    return sys;
}

CoSimResult cosimulate(const TdSystem& sys, const CoSimOptions& opt, const CoSimResult* warm)
{
    const auto& net = sys.net;
    const auto& links = net.boundary_links;
    if (sys.link_feeders.size() != links.size()) throw PreconditionError("one feeder per boundary link required");

    const auto nl = links.size();
    std::vector<int> link_bus(nl);
    for (std::size_t l = 0; l < nl; ++l) link_bus[l] = net.bus_index(links[l].tx_bus);

    const BusLoads fixed = fixed_loads(net);
    const bool use_warm = warm && warm->converged && warm->boundary.size() == nl;

    std::vector<double> v_iface(nl, 1.0), prev_q(nl, std::nan(""));
    std::vector<std::optional<double>> tap(nl);
    if (use_warm)
        for (std::size_t l = 0; l < nl; ++l) {
            v_iface[l] = warm->boundary[l].v;
            prev_q[l] = warm->boundary[l].q_l;
            tap[l] = warm->dx[l].tap;
        }

    CoSimResult res;
    res.dx.resize(nl);
    res.boundary.resize(nl);
    const TxSolution* tx_warm = use_warm ? &warm->tx : nullptr;
    TxSolution tx_prev;

    for (int round = 1; round <= opt.max_rounds; ++round) {
        res.rounds = round;
        BusLoads loads = fixed;
        double dq = 0.0;
        for (std::size_t l = 0; l < nl; ++l) {
            BfsOptions bo = opt.bfs;
            if (!bo.held_tap) bo.held_tap = tap[l];
            res.dx[l] = solve_bfs(sys.link_feeders[l], balanced(v_iface[l]), bo);
            if (!res.dx[l].converged) return res;
            tap[l] = res.dx[l].tap;
            const auto [pl, ql] = boundary_aggregate(res.dx[l], links[l]);
            loads.p[link_bus[l]] += pl;
            loads.q[link_bus[l]] += ql;
            res.boundary[l] = {links[l].tx_bus, pl, ql, v_iface[l]};
            dq = std::max(dq, std::isnan(prev_q[l]) ? std::numeric_limits<double>::infinity() : std::abs(ql - prev_q[l]));
            prev_q[l] = ql;
        }
        res.tx = solve_nr(net, loads, opt.nr, tx_warm);
        res.bus_loads = loads;
        if (!res.tx.converged) return res;
        tx_prev = res.tx;
        tx_warm = &tx_prev;

        double dv = 0.0;
        for (std::size_t l = 0; l < nl; ++l) {
            const double v_new = res.tx.v_mag[link_bus[l]];
            dv = std::max(dv, std::abs(v_new - v_iface[l]));
            v_iface[l] = v_new;
        }
        if (opt.trace_csv)
            for (std::size_t l = 0; l < nl; ++l)
                *opt.trace_csv << round << ',' << links[l].tx_bus << ',' << v_iface[l] << ',' << res.boundary[l].p_l
                               << ',' << res.boundary[l].q_l << '\n';
        if (dv <= opt.v_tol && dq <= opt.q_tol) {
            res.converged = true;
            return res;
        }
        if (nl == 0) {
            res.converged = true;
            return res;
        }
    }
    return res;
}

Eigen::VectorXd state_vector(const TdSystem& sys, const CoSimResult& r)
{
    const auto layout = state_layout(sys.net);
    const auto sites = gen_sites(sys.net);
    Eigen::VectorXd x(static_cast<Eigen::Index>(layout.dim()));
    for (std::size_t u = 0; u < sites.size(); ++u) {
        x(layout.pg(u)) = r.tx.gen_p[u];
        x(layout.vg(u)) = sites[u].v_set;
    }
    for (std::size_t j = 0; j < layout.loads(); ++j) {
        x(layout.pl(j)) = r.bus_loads.p[layout.load_buses[j]];
        x(layout.ql(j)) = r.bus_loads.q[layout.load_buses[j]];
    }
    return x;
}

CoSimResult cosimulate(const TdSystem& sys, const Contingency& c, const CoSimOptions& opt, const CoSimResult* warm)
{
    if (c.kind == Contingency::Kind::none) return cosimulate(sys, opt, warm);
    TdSystem s{apply_contingency(sys.net, c), sys.link_feeders};
    return cosimulate(s, opt, warm);
}

}  // namespace tdvsm
