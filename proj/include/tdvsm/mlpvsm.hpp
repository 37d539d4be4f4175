#pragma once

// Single-hidden-layer tanh surrogates: VSM from the transmission state
// vector, and boundary reactive demand from DER reactive set-points.
// Trained full-batch with iRprop-.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tdvsm/dxflow.hpp"
#include "tdvsm/netmodel.hpp"

namespace tdvsm {

struct MlpModel {
    Eigen::MatrixXd w_in;   // k x d
    Eigen::VectorXd b_in;   // k
    Eigen::VectorXd w_out;  // k
    double b_out = 0.0;

    // z-score stats; empty x_mean means inputs are used as given
    Eigen::VectorXd x_mean, x_std;
    double y_mean = 0.0, y_std = 1.0;

    std::vector<std::string> inputs;  // ordering contract
    std::string dataset_hash;
    std::string config_echo;  // JSON text of the training configuration

    Eigen::Index dim() const { return w_in.cols(); }
    Eigen::Index hidden() const { return w_in.rows(); }
    bool normalized() const { return x_mean.size() > 0; }
};

/// Physical-unit evaluation: y_mean + y_std * (b_out + sum_s C_s tanh(W_s z + b_s)),
/// z the normalized input.
double forward(const MlpModel& m, const Eigen::VectorXd& x);

/// d forward / d x in physical units.
Eigen::VectorXd gradient(const MlpModel& m, const Eigen::VectorXd& x);

/// Pre-activations h = W z + b at @p x (normalization applied).
Eigen::VectorXd hidden_preactivation(const MlpModel& m, const Eigen::VectorXd& x);

/// Same function with normalization folded into the weights, so the plain
/// expression b_out + sum C_s tanh(W_s x + b_s) holds in physical units.
MlpModel explicit_form(const MlpModel& m);

struct TrainConfig {
    int hidden = 20;
    double eta_plus = 1.2;
    double eta_minus = 0.5;
    double delta0 = 0.1;
    double delta_min = 1e-6;
    double delta_max = 50.0;
    int max_epochs = 3000;
    int patience = 300;  // epochs without validation improvement
    double val_fraction = 0.2;
    bool normalize = true;
    std::uint64_t seed = 1;
};

struct Metrics {
    double r2 = 0.0;
    double mae_pct = 0.0;
    double mse = 0.0;
    int excluded = 0;  // samples left out of MAE% for |y| below 1e-6
};

/// Throws PreconditionError for mismatched/short inputs or zero-variance truth.
Metrics metrics(const Eigen::VectorXd& y_true, const Eigen::VectorXd& y_pred);

struct TrainResult {
    MlpModel model;
    Metrics validation;  // held-out split, physical units (r2 NaN if the split has no variance)
    int epochs = 0;
    int best_epoch = 0;
    std::vector<double> train_mse;  // per epoch, normalized target scale
    std::vector<double> val_mse;
};

/// Requires at least 50 samples. Deterministic in cfg.seed.
TrainResult train_rprop(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const TrainConfig& cfg,
                        std::vector<std::string> inputs = {});

struct CvResult {
    double mean_r2 = 0.0;
    double mean_mae_pct = 0.0;
    Metrics pooled;  // over all out-of-fold predictions
    std::vector<Metrics> folds;
};

CvResult kfold_cv(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const TrainConfig& cfg, int folds = 5);

std::string dataset_hash(const Eigen::MatrixXd& X, const Eigen::VectorXd& y);

std::string model_to_json(const MlpModel& m);
MlpModel model_from_json(const std::string& text);
void save_model(const MlpModel& m, const std::filesystem::path& path);
MlpModel load_model(const std::filesystem::path& path);

struct DxTrainConfig {
    int samples = 300;
    double v_sub = 1.0;  // pu at the transmission bus
    TrainConfig train{.hidden = 10};
};

struct DxTrainResult {
    MlpModel model;  // DER q (kVAr, DER order) -> Q_L (MVAr at the transmission bus)
    Metrics validation;
    double base_q_l = 0.0;  // BFS value with every DER at zero
};

/// Latin-hypercube samples over the DER reactive boxes, labelled with the
/// nonlinear feeder solution at a fixed tap.
DxTrainResult train_dx_model(const FeederModel& feeder, const BoundaryLink& link, const DxTrainConfig& cfg);

}  // namespace tdvsm
