#pragma once

// Voltage stability margin by uniform load growth, probabilistic operating
// point sampling and dataset generation over scenarios and contingencies.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tdvsm/cosim.hpp"

namespace tdvsm {

/// Shares of IBR rating available as active power, by resource kind.
struct GenMixProfile {
    std::string name = "nominal";
    double wind_lo = 0.0, wind_hi = 0.0;  // fraction of icr
    double solar_lo = 0.0, solar_hi = 0.0;
    bool use_case_output = true;  // keep the case IBR output, ignore the ranges
};

enum class Spread { uniform, truncated_normal };

struct ScenarioConfig {
    Spread distribution = Spread::uniform;
    double load_p_spread = 0.2;   // per-bus / per-feeder multiplier in [1 - s, 1 + s]
    double load_q_spread = 0.2;   // sampled independently of the P multiplier
    double gen_p_spread = 0.2;    // non-slack synchronous units, relative to case output
    bool sample_vg = true;
    double vg_spread = 0.02;      // pu, absolute around the case set-point
    std::vector<GenMixProfile> profiles{
        {"wind-heavy", 0.5, 0.9, 0.1, 0.5, false},
        {"solar-heavy", 0.1, 0.5, 0.5, 0.9, false},
    };
    int max_resample = 20;
};

struct MarginOptions {
    double step = 0.05;         // coarse load-growth step
    double width = 1e-3;        // final bisection bracket
    double lambda_cap = 20.0;   // stop marching here and report the cap
    CoSimOptions cosim;
};

/// A sampled operating point: the system with set-points and loads realized.
struct Scenario {
    std::uint64_t seed = 0;
    std::string profile;
    TdSystem sys;
};

struct VsmSample {
    std::uint64_t seed = 0;
    std::string contingency = "none";
    Eigen::VectorXd x;
    double lambda_max = 1.0;
    double vsm = 0.0;  // MW
};

struct Dataset {
    std::vector<std::string> feature_names;
    std::vector<VsmSample> samples;

    Eigen::MatrixXd features() const;  // samples x d
    Eigen::VectorXd targets() const;   // vsm
};

std::uint64_t scenario_seed(std::uint64_t master, std::uint64_t index);

/// Deterministic in @p seed. Throws InfeasibleError after max_resample
/// draws whose base point fails to co-simulate or overdraws the slack.
Scenario sample_scenario(const TdSystem& base, const ScenarioConfig& cfg, std::uint64_t seed,
                         const MarginOptions& mopt = {});

/// System at loading factor @p lambda: every load scaled at constant power
/// factor, non-slack synchronous units picking up the extra demand in
/// proportion to their headroom, the slack covering the rest.
TdSystem scale_loading(const TdSystem& sys, double lambda, double base_load_mw);

/// Transmission-side active demand of a converged point, MW.
double total_load_mw(const CoSimResult& r);

/// Coarse march followed by bisection. Throws InfeasibleError when the base
/// point does not converge under @p c.
VsmSample compute_vsm(const TdSystem& sys, const Contingency& c, const MarginOptions& opt = {});

/// Reference march at a fixed fine step until the first failure.
VsmSample scan_vsm(const TdSystem& sys, const Contingency& c, double step, const MarginOptions& opt = {});

struct DatasetConfig {
    int scenarios = 100;
    std::uint64_t seed = 1;
    std::vector<Contingency> contingencies;  // "none" is always included first
    int jobs = 1;
    ScenarioConfig sampling;
    MarginOptions margin;
};

struct DatasetReport {
    Dataset data;
    std::vector<std::string> skipped;    // "seed,contingency: reason"
    std::vector<std::string> anomalies;  // contingency margin above base margin
};

DatasetReport generate_dataset(const Case& c, const DatasetConfig& cfg);

/// Header seed,contingency,<feature names>,lambda_max,vsm_mw; 9 significant digits.
void write_dataset_csv(std::ostream& out, const Dataset& d);
Dataset read_dataset_csv(std::istream& in);

}  // namespace tdvsm
