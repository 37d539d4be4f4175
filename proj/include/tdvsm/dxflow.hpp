#pragma once

// Radial feeder solvers: a three-phase backward/forward sweep used as the
// nonlinear reference, and the single-phase-equivalent LinDistFlow model
// used by the distribution optimizations.

#include <array>
#include <complex>
#include <iosfwd>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "tdvsm/netmodel.hpp"

namespace tdvsm {

using PhaseVoltage = std::array<std::complex<double>, 3>;

/// Balanced phasors of magnitude @p mag (a, b, c at 0, -120, +120 degrees).
PhaseVoltage balanced(double mag);

struct BfsOptions {
    double tol = 1e-8;  // pu voltage update
    int max_sweeps = 100;
    bool oltc = true;                  // pick the tap step bringing node 0 nearest 1.0 pu
    std::optional<double> fixed_tap;   // overrides the OLTC when set
    std::optional<double> held_tap;    // present OLTC position; kept while inside the deadband
    double tap_deadband = 1.0;         // in tap steps, around 1.0 pu at node 0
    std::ostream* profile_csv = nullptr;  // "node,phase,vmag"
};

struct DxSolution {
    std::vector<PhaseVoltage> v;  // per node, pu
    std::vector<double> p_flow;   // kW per edge, sending end, all phases
    std::vector<double> q_flow;   // kVAr per edge
    double p0 = 0.0;              // kW substation injection into the feeder
    double q0 = 0.0;              // kVAr
    double losses_p = 0.0;        // kW
    double tap = 1.0;
    bool converged = false;
    int sweeps = 0;

    double vmag_avg(std::size_t node) const;
};

/// DER reactive set-points are taken from DerUnit::q_phase.
DxSolution solve_bfs(const FeederModel& feeder, const PhaseVoltage& substation_v, const BfsOptions& opt = {});

/// Convenience overload: aggregate DER set-points (kVAr) split equally per phase.
DxSolution solve_bfs(const FeederModel& feeder, const PhaseVoltage& substation_v, std::span<const double> der_q,
                     const BfsOptions& opt = {});

struct LinDistState {
    std::vector<double> v_sq;    // per node, pu^2
    std::vector<double> p_flow;  // kW per edge
    std::vector<double> q_flow;  // kVAr per edge

    double q0 = 0.0;  // kVAr drawn at the substation (root-node demand included)
    double p0 = 0.0;
};

/// Exact (non-iterative) LinDistFlow solution with DER aggregate reactive
/// injections @p der_q (kVAr). Loads are phase-aggregated.
LinDistState solve_lindistflow(const FeederModel& feeder, double v0_sq, std::span<const double> der_q);

/// d v_sq / d q_k per kVAr for every node and DER (constant under LinDistFlow).
Eigen::MatrixXd lindist_q_sensitivity(const FeederModel& feeder);

/// (P_L, Q_L) in MW/MVAr seen by the transmission bus: beta * (p0, q0).
std::pair<double, double> boundary_aggregate(const DxSolution& sol, const BoundaryLink& link);

}  // namespace tdvsm
