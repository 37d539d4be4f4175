#pragma once

// Distribution-side optimizations on the LinDistFlow model: the range of
// aggregate DER reactive support a feeder can offer at its substation, and
// the weighted per-phase DER dispatch that delivers a requested amount.

#include <array>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tdvsm/mlpvsm.hpp"
#include "tdvsm/netmodel.hpp"
#include "tdvsm/optim.hpp"

namespace tdvsm {

/// Aggregate support q_agg = sum of DER reactive injections (kVAr), which
/// under LinDistFlow is exactly the drop in substation reactive draw
/// relative to every DER at zero.
struct CapabilityRange {
    double q_min_agg = 0.0;
    double q_max_agg = 0.0;
    double q0_zero = 0.0;  // kVAr substation draw with every DER at zero
    std::vector<double> der_at_min, der_at_max;        // set-points at each extreme
    std::vector<std::string> binding_min, binding_max;  // active rows and bounds
};

/// The substation secondary voltage is free within v_tm * [tap_min, tap_max].
/// Throws InfeasibleError when the voltage limits cannot be met at all.
CapabilityRange capability_range(const FeederModel& feeder, double v_tm, std::ostream* lp_dump = nullptr);

/// w_j = 1 - |s_j| / sum |s|, s the model gradient at @p q_op. Throws
/// NumericalError when every sensitivity vanishes.
Eigen::VectorXd dx_weights(const MlpModel& dx_model, const Eigen::VectorXd& q_op);

struct RedispatchOptions {
    double alpha = 0.1;      // per-phase band around the DER's phase average
    double eps_band = 0.01;  // kVAr slack added to the band when alpha > 0
    double v_tm = 1.0;       // pu at the transmission side of the substation
    std::ostream* lp_dump = nullptr;
};

struct RedispatchResult {
    std::vector<std::array<double, 3>> q_phase;  // kVAr per DER per phase
    std::vector<double> q;                       // kVAr per DER
    double q_agg = 0.0;                          // kVAr, one feeder copy
    double objective = 0.0;
    double v0 = 1.0;              // pu substation secondary voltage chosen by the LP
    double q0_predicted = 0.0;    // kVAr substation draw under LinDistFlow
    std::vector<std::string> active;
    KktReport kkt;                // independent check of the LP solution
    bool feasible = false;
};

/// min sum_j w_j |q_j| with every DER pushing in the direction of the
/// request, subject to LinDistFlow voltage limits, DER boxes, the per-phase
/// band and sum_j q_j = request * 1000 / beta. Throws InfeasibleError naming
/// the conflict when the request cannot be met.
RedispatchResult redispatch(const FeederModel& feeder, double request_mvar, const BoundaryLink& link,
                            const Eigen::VectorXd& w, const RedispatchOptions& opt = {});

/// Writes the per-phase set-points into the feeder's DERs.
void apply_redispatch(FeederModel& feeder, const RedispatchResult& r);

/// Current aggregate DER reactive output of one feeder copy, kVAr.
double der_q_total(const FeederModel& feeder);

}  // namespace tdvsm
