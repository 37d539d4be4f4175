#pragma once

// Iterative TSO-DSO coordination: the transmission QP asks each feeder for a
// change of aggregate DER reactive support, the feeders redispatch their
// DERs, set-points and DER outputs are applied to the co-simulated system
// and the surrogate margin is re-evaluated, until the target is reached.

#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tdvsm/cosim.hpp"
#include "tdvsm/dsopt.hpp"
#include "tdvsm/mlpvsm.hpp"
#include "tdvsm/tsopt.hpp"

namespace tdvsm {

struct CoordOptions {
    double target = 0.0;  // VSM^min, MW
    WeightMode weights = WeightMode::sensitivity;
    int max_iters = 10;
    double tol = 0.5;         // MW below target still counted as reached
    double max_drop = 1.0;    // MW; a larger fall between iterations aborts
    double active_tol = 1e-3; // |delta| above which a control counts as used
    double alpha = 0.1;
    double eps_band = 0.01;
    int jobs = 1;
    CoSimOptions cosim;
};

struct FeederStep {
    int link = 0;  // index into the boundary links
    std::string feeder;
    int tx_bus = 0;
    int beta = 1;
    double support_before = 0.0;  // MVAr at the transmission bus
    double requested = 0.0;       // MVAr change asked by the TSO
    double applied = 0.0;         // MVAr change after clamping to capability
    double shortfall = 0.0;       // requested - applied
    double realized = 0.0;        // MVAr change delivered by the redispatch
    double capability_min = 0.0, capability_max = 0.0;  // MVAr
    std::vector<double> weights;  // per DER
    RedispatchResult dispatch;
};

struct IterationRecord {
    int iteration = 0;  // 1-based
    double vsm_before = 0.0;
    double vsm_predicted = 0.0;
    double vsm_verified = 0.0;
    double gap = 0.0;  // target - verified
    bool target_reachable = true;
    Eigen::VectorXd grad_v, grad_q;  // surrogate sensitivities at the start
    TsoWeights weights;
    Eigen::VectorXd dv_g;  // pu
    Eigen::VectorXd dq_l;  // MVAr requested per link
    std::vector<std::string> tso_active;
    KktReport tso_kkt;
    std::vector<FeederStep> feeders;  // links with a non-zero request
    double v_violation = 0.0;         // pu at the verified point
    double requested_mvar = 0.0;      // sum |dq_l|
    int active_controls = 0;
};

struct CoordinationTrace {
    std::string case_name;
    double target = 0.0;
    WeightMode weights = WeightMode::sensitivity;
    double vsm_initial = 0.0;
    double vsm_final = 0.0;
    std::vector<std::string> unit_names, link_names;
    std::vector<int> unit_buses, link_buses;  // bus ids
    std::vector<IterationRecord> iterations;
    bool converged = false;
    bool aborted = false;
    std::string message;
    double total_requested_mvar = 0.0;
    int controllers_used = 0;  // distinct controls moved in any iteration
};

/// @p dx_models is parallel to sys.link_feeders; it may be empty with equal
/// weights. Returns the final state of the system through @p final_sys when given.
CoordinationTrace run_loop(const TdSystem& sys, const MlpModel& vsm_model, const std::vector<MlpModel>& dx_models,
                           const CoordOptions& opt, TdSystem* final_sys = nullptr);

const char* to_string(WeightMode m);
WeightMode weight_mode_from(const std::string& s);

/// Structured trace (JSON).
void write_trace(std::ostream& out, const CoordinationTrace& t);

/// iteration,vsm_before_mw,vsm_predicted_mw,vsm_verified_mw,gap_mw,requested_mvar,active_controls,target_reachable
void write_vsm_csv(std::ostream& out, const CoordinationTrace& t);

/// iteration,control,kind,bus,weight,sensitivity,delta
void write_dispatch_tx_csv(std::ostream& out, const CoordinationTrace& t);

/// iteration,der_node,weight,q_a_kvar,q_b_kvar,q_c_kvar,q_total_kvar for the feeder of boundary link @p link
void write_dispatch_dx_csv(std::ostream& out, const CoordinationTrace& t, int link);

/// Markdown summary of one or more traces read back from write_trace output.
std::string render_report(const std::vector<std::string>& trace_json);

}  // namespace tdvsm
