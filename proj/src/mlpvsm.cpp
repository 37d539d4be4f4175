#include "tdvsm/mlpvsm.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "tdvsm/errors.hpp"

namespace tdvsm {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using json = nlohmann::json;

namespace {

// mt19937_64 output is fully specified, so these stay reproducible across
// standard libraries (unlike std::uniform_*_distribution).
double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::vector<Index> permutation(Index n, std::mt19937_64& rng)
{
    std::vector<Index> p(static_cast<std::size_t>(n));
    std::iota(p.begin(), p.end(), Index(0));
    for (Index i = n - 1; i > 0; --i) std::swap(p[i], p[static_cast<Index>(rng() % static_cast<std::uint64_t>(i + 1))]);
    return p;
}

MatrixXd rows(const MatrixXd& X, const std::vector<Index>& idx)
{
    MatrixXd out(static_cast<Index>(idx.size()), X.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Index>(i)) = X.row(idx[i]);
    return out;
}

VectorXd rows(const VectorXd& y, const std::vector<Index>& idx)
{
    VectorXd out(static_cast<Index>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) out(static_cast<Index>(i)) = y(idx[i]);
    return out;
}

VectorXd normalize(const MlpModel& m, const VectorXd& x)
{
    if (x.size() != m.dim()) throw PreconditionError(fmt::format("input has {} entries, model expects {}", x.size(), m.dim()));
    if (!m.normalized()) return x;
    return (x - m.x_mean).cwiseQuotient(m.x_std);
}

// theta = [W (k x d, column-major) | b (k) | c (k) | c0]
struct View {
    Eigen::Map<const MatrixXd> W;
    Eigen::Map<const VectorXd> b, c;
    double c0;

    View(const VectorXd& t, Index k, Index d)
        : W(t.data(), k, d), b(t.data() + k * d, k), c(t.data() + k * d + k, k), c0(t(k * d + 2 * k))
    {
    }
};

double loss(const VectorXd& theta, Index k, const MatrixXd& X, const VectorXd& y, VectorXd* grad)
{
    const View p(theta, k, X.cols());
    const Index n = X.rows();
    const MatrixXd H = ((X * p.W.transpose()).rowwise() + p.b.transpose()).array().tanh().matrix();
    const VectorXd e = (H * p.c).array() + p.c0 - y.array();
    const double mse = e.squaredNorm() / static_cast<double>(n);
    if (grad) {
        const Index d = X.cols();
        grad->resize(theta.size());
        const VectorXd de = (2.0 / static_cast<double>(n)) * e;
        const MatrixXd dH = ((de * p.c.transpose()).array() * (1.0 - H.array().square())).matrix();
        Eigen::Map<MatrixXd>(grad->data(), k, d) = dH.transpose() * X;
        grad->segment(k * d, k) = dH.colwise().sum().transpose();
        grad->segment(k * d + k, k) = H.transpose() * de;
        (*grad)(k * d + 2 * k) = de.sum();
    }
    return mse;
}

struct Fit {
    VectorXd theta;
    int epochs = 0;
    int best_epoch = 0;
    std::vector<double> train_mse, val_mse;
};

Fit rprop(const MatrixXd& Xt, const VectorXd& yt, const MatrixXd& Xv, const VectorXd& yv, const TrainConfig& cfg,
          std::mt19937_64& rng)
{
    const Index k = cfg.hidden, d = Xt.cols();
    const Index np = k * d + 2 * k + 1;
    VectorXd theta(np);
    const double a_in = 1.0 / std::sqrt(static_cast<double>(std::max<Index>(d, 1)));
    const double a_out = 1.0 / std::sqrt(static_cast<double>(k));
    for (Index i = 0; i < np; ++i) theta(i) = (i < k * d + k ? a_in : a_out) * (2.0 * unit(rng) - 1.0);

    VectorXd step = VectorXd::Constant(np, cfg.delta0), prev = VectorXd::Zero(np), g;
    const bool has_val = Xv.rows() > 0;
    Fit fit;
    fit.theta = theta;
    double best = std::numeric_limits<double>::infinity();
    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        const double tr = loss(theta, k, Xt, yt, &g);
        if (!std::isfinite(tr)) throw NumericalError(fmt::format("training MSE became non-finite at epoch {}", epoch));
        const double va = has_val ? loss(theta, k, Xv, yv, nullptr) : tr;
        fit.train_mse.push_back(tr);
        fit.val_mse.push_back(va);
        fit.epochs = epoch;
        if (va < best) {
            best = va;
            fit.theta = theta;
            fit.best_epoch = epoch;
        } else if (epoch - fit.best_epoch >= cfg.patience) {
            break;
        }
        // iRprop-
        for (Index i = 0; i < np; ++i) {
            const double s = g(i) * prev(i);
            if (s > 0.0) {
                step(i) = std::min(step(i) * cfg.eta_plus, cfg.delta_max);
            } else if (s < 0.0) {
                step(i) = std::max(step(i) * cfg.eta_minus, cfg.delta_min);
                g(i) = 0.0;
            }
            if (g(i) > 0.0)
                theta(i) -= step(i);
            else if (g(i) < 0.0)
                theta(i) += step(i);
            prev(i) = g(i);
        }
    }
    return fit;
}

MlpModel assemble(const VectorXd& theta, Index k, Index d)
{
    const View p(theta, k, d);
    MlpModel m;
    m.w_in = p.W;
    m.b_in = p.b;
    m.w_out = p.c;
    m.b_out = p.c0;
    return m;
}

void set_stats(MlpModel& m, const MatrixXd& X, const VectorXd& y, bool normalize)
{
    if (!normalize) return;
    const double n = static_cast<double>(X.rows());
    m.x_mean = X.colwise().mean().transpose();
    m.x_std = ((X.rowwise() - m.x_mean.transpose()).array().square().colwise().sum() / n).sqrt().matrix().transpose();
    for (Index j = 0; j < m.x_std.size(); ++j)
        if (!(m.x_std(j) > 1e-12)) m.x_std(j) = 1.0;
    m.y_mean = y.mean();
    m.y_std = std::sqrt((y.array() - m.y_mean).square().sum() / n);
    if (!(m.y_std > 1e-12)) m.y_std = 1.0;
}

MatrixXd normalized_rows(const MlpModel& m, const MatrixXd& X)
{
    if (!m.normalized()) return X;
    return (X.rowwise() - m.x_mean.transpose()).array().rowwise() / m.x_std.transpose().array();
}

VectorXd predict(const MlpModel& m, const MatrixXd& X)
{
    VectorXd out(X.rows());
    for (Index i = 0; i < X.rows(); ++i) out(i) = forward(m, X.row(i).transpose());
    return out;
}

Metrics safe_metrics(const VectorXd& y, const VectorXd& yhat)
{
    if (y.size() >= 2 && (y.array() - y.mean()).square().sum() > 0.0) return metrics(y, yhat);
    Metrics m;
    m.r2 = std::numeric_limits<double>::quiet_NaN();
    m.mse = y.size() ? (y - yhat).squaredNorm() / static_cast<double>(y.size()) : 0.0;
    return m;
}

struct Trained {
    MlpModel model;
    Fit fit;
};

Trained train_split(const MatrixXd& Xt, const VectorXd& yt, const MatrixXd& Xv, const VectorXd& yv,
                    const TrainConfig& cfg, std::mt19937_64& rng)
{
    if (cfg.hidden < 1) throw PreconditionError("hidden width must be at least 1");
    if (!(cfg.eta_minus < 1.0 && 1.0 < cfg.eta_plus)) throw PreconditionError("step factors must satisfy eta- < 1 < eta+");
    MlpModel stats;
    set_stats(stats, Xt, yt, cfg.normalize);
    const VectorXd ytn = (yt.array() - stats.y_mean) / stats.y_std;
    const VectorXd yvn = (yv.array() - stats.y_mean) / stats.y_std;
    const MatrixXd Xtn = normalized_rows(stats, Xt), Xvn = normalized_rows(stats, Xv);
    auto fit = rprop(Xtn, ytn, Xvn, yvn, cfg, rng);
    auto m = assemble(fit.theta, cfg.hidden, Xt.cols());
    m.x_mean = stats.x_mean;
    m.x_std = stats.x_std;
    m.y_mean = stats.y_mean;
    m.y_std = stats.y_std;
    return {std::move(m), std::move(fit)};
}

std::pair<std::vector<Index>, std::vector<Index>> holdout(Index n, double frac, std::mt19937_64& rng)
{
    const auto perm = permutation(n, rng);
    Index nv = static_cast<Index>(std::llround(frac * static_cast<double>(n)));
    if (frac > 0.0 && n >= 2) nv = std::clamp<Index>(nv, 1, n - 1);
    else nv = 0;
    return {std::vector<Index>(perm.begin() + nv, perm.end()), std::vector<Index>(perm.begin(), perm.begin() + nv)};
}

std::string config_json(const TrainConfig& c)
{
    return json{{"hidden", c.hidden},        {"eta_plus", c.eta_plus},   {"eta_minus", c.eta_minus},
                {"delta0", c.delta0},        {"delta_min", c.delta_min}, {"delta_max", c.delta_max},
                {"max_epochs", c.max_epochs}, {"patience", c.patience},   {"val_fraction", c.val_fraction},
                {"normalize", c.normalize},  {"seed", c.seed}}
        .dump();
}

}  // namespace

VectorXd hidden_preactivation(const MlpModel& m, const VectorXd& x) { return m.w_in * normalize(m, x) + m.b_in; }

double forward(const MlpModel& m, const VectorXd& x)
{
    const VectorXd h = hidden_preactivation(m, x);
    return m.y_mean + m.y_std * (m.b_out + m.w_out.dot(h.array().tanh().matrix()));
}

VectorXd gradient(const MlpModel& m, const VectorXd& x)
{
    const VectorXd t = hidden_preactivation(m, x).array().tanh();
    const VectorXd s = m.w_out.cwiseProduct((1.0 - t.array().square()).matrix());
    VectorXd g = m.y_std * (m.w_in.transpose() * s);
    if (m.normalized()) g = g.cwiseQuotient(m.x_std);
    return g;
}

MlpModel explicit_form(const MlpModel& m)
{
    MlpModel e = m;
    if (m.normalized()) {
        e.w_in = m.w_in * m.x_std.cwiseInverse().asDiagonal();
        e.b_in = m.b_in - e.w_in * m.x_mean;
    }
    e.w_out = m.y_std * m.w_out;
    e.b_out = m.y_mean + m.y_std * m.b_out;
    e.x_mean.resize(0);
    e.x_std.resize(0);
    e.y_mean = 0.0;
    e.y_std = 1.0;
    return e;
}

Metrics metrics(const VectorXd& y, const VectorXd& yhat)
{
    if (y.size() != yhat.size()) throw PreconditionError("prediction and truth lengths differ");
    if (y.size() < 2) throw PreconditionError("at least two samples are required for metrics");
    const double n = static_cast<double>(y.size());
    const double ss_tot = (y.array() - y.mean()).square().sum();
    if (ss_tot <= 0.0) throw PreconditionError("R² undefined: truth has zero variance");
    Metrics r;
    const double ss_res = (y - yhat).squaredNorm();
    r.mse = ss_res / n;
    r.r2 = 1.0 - ss_res / ss_tot;
    double acc = 0.0;
    int used = 0;
    for (Index i = 0; i < y.size(); ++i) {
        if (std::abs(y(i)) < 1e-6) {
            ++r.excluded;
            continue;
        }
        acc += std::abs(y(i) - yhat(i)) / std::abs(y(i));
        ++used;
    }
    r.mae_pct = used ? 100.0 * acc / used : 0.0;
    return r;
}

TrainResult train_rprop(const MatrixXd& X, const VectorXd& y, const TrainConfig& cfg, std::vector<std::string> inputs)
{
    if (X.rows() != y.size()) throw PreconditionError("feature and target counts differ");
    if (X.rows() < 50) throw PreconditionError("≥ 50 samples required");
    if (!inputs.empty() && static_cast<Index>(inputs.size()) != X.cols())
        throw PreconditionError("input names do not match the feature count");
    std::mt19937_64 rng(cfg.seed);
    const auto [tr, va] = holdout(X.rows(), cfg.val_fraction, rng);
    const MatrixXd Xv = rows(X, va);
    const VectorXd yv = rows(y, va);
    auto t = train_split(rows(X, tr), rows(y, tr), Xv, yv, cfg, rng);

    TrainResult r;
    r.model = std::move(t.model);
    r.model.inputs = std::move(inputs);
    r.model.dataset_hash = dataset_hash(X, y);
    r.model.config_echo = config_json(cfg);
    r.validation = safe_metrics(yv, predict(r.model, Xv));
    r.epochs = t.fit.epochs;
    r.best_epoch = t.fit.best_epoch;
    r.train_mse = std::move(t.fit.train_mse);
    r.val_mse = std::move(t.fit.val_mse);
    return r;
}

CvResult kfold_cv(const MatrixXd& X, const VectorXd& y, const TrainConfig& cfg, int folds)
{
    const Index n = X.rows();
    if (folds < 2 || n < folds) throw PreconditionError(fmt::format("{} folds need at least {} samples", folds, folds));
    std::mt19937_64 rng(cfg.seed);
    const auto perm = permutation(n, rng);
    VectorXd oof(n);
    CvResult cv;
    bool per_fold = true;
    for (int f = 0; f < folds; ++f) {
        std::vector<Index> tr, te;
        for (Index i = 0; i < n; ++i) (i % folds == f ? te : tr).push_back(perm[static_cast<std::size_t>(i)]);
        const MatrixXd Xtr = rows(X, tr);
        const VectorXd ytr = rows(y, tr);
        std::mt19937_64 frng(cfg.seed + static_cast<std::uint64_t>(f) + 1);
        const auto [itr, iva] = holdout(Xtr.rows(), cfg.val_fraction, frng);
        const auto t = train_split(rows(Xtr, itr), rows(ytr, itr), rows(Xtr, iva), rows(ytr, iva), cfg, frng);
        const MatrixXd Xte = rows(X, te);
        const VectorXd pred = predict(t.model, Xte);
        for (std::size_t i = 0; i < te.size(); ++i) oof(te[i]) = pred(static_cast<Index>(i));
        const auto m = safe_metrics(rows(y, te), pred);
        per_fold = per_fold && std::isfinite(m.r2);
        cv.folds.push_back(m);
    }
    cv.pooled = safe_metrics(y, oof);
    if (per_fold) {
        for (const auto& m : cv.folds) {
            cv.mean_r2 += m.r2 / folds;
            cv.mean_mae_pct += m.mae_pct / folds;
        }
    } else {
        cv.mean_r2 = cv.pooled.r2;
        cv.mean_mae_pct = cv.pooled.mae_pct;
    }
    return cv;
}

std::string dataset_hash(const MatrixXd& X, const VectorXd& y)
{
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&](double v) {
        unsigned char bytes[sizeof(double)];
        std::memcpy(bytes, &v, sizeof v);
        for (unsigned char c : bytes) {
            h ^= c;
            h *= 1099511628211ULL;
        }
    };
    for (Index i = 0; i < X.rows(); ++i) {
        for (Index j = 0; j < X.cols(); ++j) mix(X(i, j));
        mix(y(i));
    }
    return fmt::format("{:016x}", h);
}

namespace {

json to_json(const VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

VectorXd vec(const json& j, const char* what)
{
    if (!j.is_array()) throw CaseError(fmt::format("model: '{}' must be an array", what));
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const VectorXd>(v.data(), static_cast<Index>(v.size()));
}

}  // namespace

std::string model_to_json(const MlpModel& m)
{
    json rows_in = json::array();
    for (Index i = 0; i < m.w_in.rows(); ++i) rows_in.push_back(to_json(m.w_in.row(i).transpose()));
    json j{{"format", "tdvsm-mlp"},
           {"version", 1},
           {"activation", "tanh"},
           {"dim", m.dim()},
           {"hidden", m.hidden()},
           {"inputs", m.inputs},
           {"w_input", rows_in},
           {"b_input", to_json(m.b_in)},
           {"w_output", to_json(m.w_out)},
           {"b_output", m.b_out},
           {"x_mean", to_json(m.x_mean)},
           {"x_std", to_json(m.x_std)},
           {"y_mean", m.y_mean},
           {"y_std", m.y_std},
           {"dataset_hash", m.dataset_hash},
           {"config", m.config_echo.empty() ? json::object() : json::parse(m.config_echo)}};
    return j.dump(1);
}

MlpModel model_from_json(const std::string& text)
{
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw CaseError(fmt::format("model: {}", e.what()));
    }
    if (j.value("format", "") != "tdvsm-mlp") throw CaseError("model: not a tdvsm-mlp document");
    try {
        MlpModel m;
        const auto d = j.at("dim").get<Index>(), k = j.at("hidden").get<Index>();
        const auto& w = j.at("w_input");
        if (!w.is_array() || static_cast<Index>(w.size()) != k) throw CaseError("model: w_input must have 'hidden' rows");
        m.w_in.resize(k, d);
        for (Index i = 0; i < k; ++i) {
            const VectorXd r = vec(w[static_cast<std::size_t>(i)], "w_input");
            if (r.size() != d) throw CaseError(fmt::format("model: w_input row {} must have 'dim' entries", i));
            m.w_in.row(i) = r.transpose();
        }
        m.b_in = vec(j.at("b_input"), "b_input");
        m.w_out = vec(j.at("w_output"), "w_output");
        m.b_out = j.at("b_output").get<double>();
        m.x_mean = vec(j.at("x_mean"), "x_mean");
        m.x_std = vec(j.at("x_std"), "x_std");
        m.y_mean = j.at("y_mean").get<double>();
        m.y_std = j.at("y_std").get<double>();
        m.inputs = j.value("inputs", std::vector<std::string>{});
        m.dataset_hash = j.value("dataset_hash", "");
        if (j.contains("config") && !j["config"].empty()) m.config_echo = j["config"].dump();
        if (m.b_in.size() != k || m.w_out.size() != k) throw CaseError("model: bias/output sizes must equal 'hidden'");
        if (m.x_mean.size() != m.x_std.size() || (m.x_mean.size() != 0 && m.x_mean.size() != d))
            throw CaseError("model: normalization stats must be empty or have 'dim' entries");
        if (!m.inputs.empty() && static_cast<Index>(m.inputs.size()) != d)
            throw CaseError("model: input names must have 'dim' entries");
        if (!m.w_in.allFinite() || !m.b_in.allFinite() || !m.w_out.allFinite() || !std::isfinite(m.b_out))
            throw CaseError("model: non-finite parameter");
        return m;
    } catch (const json::exception& e) {
        throw CaseError(fmt::format("model: {}", e.what()));
    }
}

void save_model(const MlpModel& m, const std::filesystem::path& path)
{
    std::ofstream out(path);
    if (!out) throw CaseError(fmt::format("cannot write {}", path.string()));
    out << model_to_json(m) << '\n';
}

MlpModel load_model(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw CaseError(fmt::format("cannot read {}", path.string()));
    std::stringstream ss;
    ss << in.rdbuf();
    return model_from_json(ss.str());
}

DxTrainResult train_dx_model(const FeederModel& f, const BoundaryLink& link, const DxTrainConfig& cfg)
{
    const auto nd = static_cast<Index>(f.ders.size());
    if (nd == 0) throw PreconditionError(fmt::format("feeder {} has no DERs", f.id));
    const Index n = cfg.samples;

    const std::vector<double> zero(static_cast<std::size_t>(nd), 0.0);
    const auto base = solve_bfs(f, balanced(cfg.v_sub), zero);
    if (!base.converged) throw NumericalError(fmt::format("feeder {} does not solve at zero DER output", f.id));
    BfsOptions opt;
    opt.fixed_tap = base.tap;

    std::mt19937_64 rng(cfg.train.seed ^ 0xD1B54A32D192ED03ULL);
    MatrixXd X(n, nd);
    for (Index j = 0; j < nd; ++j) {
        const auto strata = permutation(n, rng);
        const auto& d = f.ders[static_cast<std::size_t>(j)];
        for (Index i = 0; i < n; ++i) {
            const double u = (static_cast<double>(strata[static_cast<std::size_t>(i)]) + unit(rng)) / static_cast<double>(n);
            X(i, j) = d.q_min + u * (d.q_max - d.q_min);
        }
    }
    VectorXd y(n);
    std::vector<double> q(static_cast<std::size_t>(nd));
    for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < nd; ++j) q[static_cast<std::size_t>(j)] = X(i, j);
        const auto s = solve_bfs(f, balanced(cfg.v_sub), q, opt);
        if (!s.converged) throw NumericalError(fmt::format("feeder {} diverged for a sampled DER dispatch", f.id));
        y(i) = boundary_aggregate(s, link).second;
    }

    std::vector<std::string> names;
    for (const auto& d : f.ders) names.push_back(fmt::format("q_der_{}", d.node));
    auto t = train_rprop(X, y, cfg.train, names);
    return {std::move(t.model), t.validation, boundary_aggregate(base, link).second};
}

}  // namespace tdvsm
