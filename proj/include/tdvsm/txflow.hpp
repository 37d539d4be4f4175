#pragma once

// Polar Newton-Raphson power flow for the transmission network with PV->PQ
// switching on generator reactive limits, plus implicit-function
// sensitivities of bus voltages and generator reactive output.

#include <iosfwd>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "tdvsm/netmodel.hpp"

namespace tdvsm {

/// Total demand per bus index (MW, MVAr).
struct BusLoads {
    std::vector<double> p;
    std::vector<double> q;
};

/// Fixed transmission-level loads from the bus table.
BusLoads fixed_loads(const TransmissionNetwork& net);

struct NrOptions {
    double tol = 1e-8;  // max power mismatch, pu
    int max_iter = 30;
    bool enforce_q_limits = true;
    std::ostream* trace_csv = nullptr;  // "iter,mismatch" rows when set
};

struct TxSolution {
    std::vector<double> v_mag;  // pu
    std::vector<double> v_ang;  // rad, slack = 0
    std::vector<double> p_inj;  // MW, net injection per bus
    std::vector<double> q_inj;  // MVAr
    std::vector<double> gen_p;  // MW per generating unit (gen_sites order)
    std::vector<double> gen_q;  // MVAr per generating unit
    std::vector<char> q_limited;  // per bus: regulated bus held at a reactive limit
    std::vector<double> mismatch_history;
    bool converged = false;
    int iterations = 0;
    int switches = 0;
    double max_mismatch = std::numeric_limits<double>::infinity();
};

/// Solves the power flow with generator set-points taken from @p net and the
/// demand in @p loads. Non-convergence is reported through
/// TxSolution::converged, never thrown. A converged @p warm solution seeds
/// voltages and the PV->PQ switch state.
TxSolution solve_nr(const TransmissionNetwork& net, const BusLoads& loads, const NrOptions& opt = {},
                    const TxSolution* warm = nullptr);

struct TxSensitivities {
    Eigen::MatrixXd dv_dvg;   // |buses| x |units|, pu/pu
    Eigen::MatrixXd dv_dq;    // |buses| x |q_buses|, pu/MVAr of reactive injection
    Eigen::VectorXd dqg_dvg;  // |units|, MVAr/pu
};

/// Derivatives at a converged solution, from the final Jacobian. Units held
/// at a reactive limit have zero voltage-control columns. Throws
/// NumericalError when the Jacobian is singular (collapse point).
TxSensitivities sensitivities(const TransmissionNetwork& net, const BusLoads& loads, const TxSolution& sol,
                              std::span<const int> q_buses);

/// Same quantities by central finite differences with step @p h (pu).
TxSensitivities sensitivities_fd(const TransmissionNetwork& net, const BusLoads& loads, const TxSolution& sol,
                                 std::span<const int> q_buses, double h = 1e-5);

}  // namespace tdvsm
