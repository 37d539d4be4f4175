#pragma once

// Loosely coupled T&D co-simulation: feeders are solved at the current
// interface voltage, their beta-scaled substation demand is pushed to the
// transmission buses, the transmission flow is solved and the new bus
// voltages are sent back down, until both exchanged quantities settle.

#include <iosfwd>
#include <vector>

#include "tdvsm/dxflow.hpp"
#include "tdvsm/netmodel.hpp"
#include "tdvsm/txflow.hpp"

namespace tdvsm {

/// A complete operating state: the transmission network (generator
/// set-points, fixed loads, branch status) and one feeder per boundary link
/// (loads, DER outputs and reactive set-points).
struct TdSystem {
    TransmissionNetwork net;
    std::vector<FeederModel> link_feeders;  // parallel to net.boundary_links
};

TdSystem make_system(const Case& c);

struct CoSimOptions {
    double v_tol = 1e-5;  // pu, boundary voltage change between rounds
    double q_tol = 1e-3;  // MVAr, boundary reactive demand change between rounds
    int max_rounds = 50;
    NrOptions nr;
    BfsOptions bfs;
    std::ostream* trace_csv = nullptr;  // "round,bus,V,P_L,Q_L"
};

struct BoundaryState {
    int bus = 0;  // bus id
    double p_l = 0.0;  // MW
    double q_l = 0.0;  // MVAr
    double v = 1.0;    // pu, interface voltage the feeder was solved at
};

struct CoSimResult {
    TxSolution tx;
    std::vector<DxSolution> dx;           // per boundary link
    std::vector<BoundaryState> boundary;  // per boundary link
    BusLoads bus_loads;                   // total transmission demand per bus
    bool converged = false;
    int rounds = 0;
};

/// Runs the alternation. Divergence of either side or of the exchange is
/// reported through CoSimResult::converged. A converged @p warm result seeds
/// interface voltages, exchanged demand and the transmission state.
CoSimResult cosimulate(const TdSystem& sys, const CoSimOptions& opt = {}, const CoSimResult* warm = nullptr);

/// Surrogate input vector [Pg.., Vg.., PL.., QL..] of a converged point
/// (state_layout ordering; slack Pg is the solved value).
Eigen::VectorXd state_vector(const TdSystem& sys, const CoSimResult& r);

/// Applies @p c to the transmission side first (IslandingError propagates).
CoSimResult cosimulate(const TdSystem& sys, const Contingency& c, const CoSimOptions& opt = {},
                       const CoSimResult* warm = nullptr);

}  // namespace tdvsm
