#pragma once

// Transmission-side QP: smallest sensitivity-weighted change of generator
// voltage set-points and aggregate DER reactive support that lifts the
// linearized surrogate VSM to a target, under linearized voltage and
// generator reactive limits.

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tdvsm/cosim.hpp"
#include "tdvsm/errors.hpp"
#include "tdvsm/mlpvsm.hpp"
#include "tdvsm/optim.hpp"

namespace tdvsm {

enum class WeightMode { sensitivity, equal };

struct TsoWeights {
    Eigen::VectorXd a_v;  // per generating unit
    Eigen::VectorXd a_q;  // per boundary link
};

/// a = 1 - |s| / sum |s| within each group. Throws NumericalError when a
/// non-empty group has no sensitivity at all.
TsoWeights build_weights(const Eigen::VectorXd& grad_v, const Eigen::VectorXd& grad_q);

/// Controls are ordered [dV_g per unit (gen_sites order), dQ^g_L per boundary link].
struct TsoProblem {
    double vsm_current = 0.0;  // MW
    double vsm_min = 0.0;      // MW
    Eigen::VectorXd grad_v;    // MW/pu
    Eigen::VectorXd grad_q;    // MW/MVAr of DER support (net load reduction)
    TsoWeights weights;
    double weight_floor = 1e-6;  // keeps the Hessian positive when a weight is 0

    Eigen::VectorXd v, v_min, v_max;  // per bus
    Eigen::MatrixXd dv_dvg;           // buses x units
    Eigen::MatrixXd dv_dq;            // buses x links
    Eigen::VectorXd v_set, vg_min, vg_max;  // per unit; set-point box
    Eigen::VectorXd qg, qg_min, qg_max, dqg_dvg;  // per unit, MVAr
    Eigen::VectorXd dq_min, dq_max;  // per link, MVAr

    std::vector<std::string> unit_names, link_names, bus_names;

    int units() const { return static_cast<int>(grad_v.size()); }
    int links() const { return static_cast<int>(grad_q.size()); }
};

struct TsoDispatch {
    Eigen::VectorXd dv_g;  // pu per unit
    Eigen::VectorXd dq_l;  // MVAr per link
    Eigen::VectorXd v_predicted;
    double vsm_predicted = 0.0;  // linearized
    double objective = 0.0;
    std::vector<std::string> active;
    KktReport kkt;  // independent check of the QP solution
};

/// Target cannot be met inside the boxes; carries the dispatch that
/// maximizes the linearized VSM instead.
class TargetUnreachableError : public InfeasibleError {
public:
    TargetUnreachableError(const std::string& what, double max_vsm, TsoDispatch best)
        : InfeasibleError(what), max_vsm(max_vsm), best(std::move(best))
    {
    }
    double max_vsm;
    TsoDispatch best;
};

/// The QP over [dV_g, dQ^g_L]: network rows, boxes and the linearized VSM
/// target row (named "vsm_target", always last).
QuadraticProgram tso_qp(const TsoProblem& p);

/// Zero dispatch when the current VSM already meets the target.
TsoDispatch solve_tso(const TsoProblem& p);

struct TsoBuildOptions {
    WeightMode weights = WeightMode::sensitivity;
};

/// Linearizes @p sys around the converged point @p state: surrogate value
/// and gradient, power-flow sensitivities, generator limits and DER boxes
/// from each feeder's capability range at its present interface voltage.
TsoProblem build_tso_problem(const TdSystem& sys, const CoSimResult& state, const MlpModel& vsm_model, double vsm_min,
                             const TsoBuildOptions& opt = {});

/// Copy of @p sys with every unit's voltage set-point shifted by @p dv_g.
TdSystem shift_setpoints(const TdSystem& sys, const Eigen::VectorXd& dv_g);

struct Verification {
    double vsm = 0.0;  // surrogate at the re-solved operating point, MW
    double v_violation = 0.0;  // worst bus voltage outside its limits, pu
    CoSimResult state;
};

/// Applies the set-point changes, realizes dQ^g_L as a reactive load
/// reduction at each link bus, co-simulates and evaluates the surrogate.
/// Throws NumericalError if the co-simulation does not converge.
Verification verify_dispatch(const TdSystem& sys, const TsoDispatch& d, const MlpModel& vsm_model,
                             const CoSimOptions& opt = {}, const CoSimResult* warm = nullptr);

/// Surrogate at a converged point.
double surrogate_vsm(const TdSystem& sys, const CoSimResult& state, const MlpModel& vsm_model);

}  // namespace tdvsm
