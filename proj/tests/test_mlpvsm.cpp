#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "tdvsm/errors.hpp"
#include "tdvsm/mlpvsm.hpp"

using namespace tdvsm;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

std::string data(const char* name) { return std::string(TDVSM_DATA_DIR) + "/" + name; }

MlpModel random_model(std::mt19937_64& rng, int k, int d, bool normalized)
{
    std::normal_distribution<double> n(0.0, 1.0);
    MlpModel m;
    m.w_in = MatrixXd::NullaryExpr(k, d, [&] { return n(rng); });
    m.b_in = VectorXd::NullaryExpr(k, [&] { return n(rng); });
    m.w_out = VectorXd::NullaryExpr(k, [&] { return n(rng); });
    m.b_out = n(rng);
    if (normalized) {
        m.x_mean = VectorXd::NullaryExpr(d, [&] { return 10 * n(rng); });
        m.x_std = VectorXd::NullaryExpr(d, [&] { return 0.5 + std::abs(n(rng)); });
        m.y_mean = 50 + n(rng);
        m.y_std = 3 + std::abs(n(rng));
    }
    return m;
}

MlpModel hand_model(int d)
{
    MlpModel m;
    m.w_in = MatrixXd::Zero(1, d);
    m.w_in(0, 0) = 1.0;
    m.b_in = VectorXd::Zero(1);
    m.w_out = VectorXd::Constant(1, 2.0);
    m.b_out = 0.5;
    return m;
}

// samples of a teacher network on a standard-normal cloud
std::pair<MatrixXd, VectorXd> teacher_data(int n, int d, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    const auto teacher = random_model(rng, 5, d, false);
    MatrixXd X = MatrixXd::NullaryExpr(n, d, [&] { return g(rng); });
    VectorXd y(n);
    for (int i = 0; i < n; ++i) y(i) = forward(teacher, X.row(i).transpose());
    return {X, y};
}

// independent extended-precision evaluation of the same network
long double forward_ld(const MlpModel& m, const VectorXd& x)
{
    long double acc = m.b_out;
    for (Eigen::Index s = 0; s < m.hidden(); ++s) {
        long double h = m.b_in(s);
        for (Eigen::Index j = 0; j < m.dim(); ++j) {
            long double z = x(j);
            if (m.normalized()) z = (z - m.x_mean(j)) / static_cast<long double>(m.x_std(j));
            h += m.w_in(s, j) * z;
        }
        acc += m.w_out(s) * std::tanh(h);
    }
    return m.y_mean + m.y_std * acc;
}

}  // namespace

TEST(Mlp, ForwardHandValues)
{
    MlpModel zero;
    zero.w_in = MatrixXd::Zero(3, 4);
    zero.b_in = VectorXd::Zero(3);
    zero.w_out = VectorXd::Zero(3);
    zero.b_out = 0.5;
    EXPECT_DOUBLE_EQ(forward(zero, VectorXd::Random(4)), 0.5);
    EXPECT_EQ(gradient(zero, VectorXd::Random(4)), VectorXd::Zero(4));

    const auto m = hand_model(3);
    VectorXd x = VectorXd::Zero(3);
    x(0) = 0.5;
    EXPECT_NEAR(forward(m, x), 0.5 + 2 * std::tanh(0.5), 1e-15);
    EXPECT_NEAR(forward(m, x), 1.424234, 1e-6);
    EXPECT_NEAR(gradient(m, x)(0), 1.572895, 1e-6);
    EXPECT_EQ(gradient(m, x)(1), 0.0);
    EXPECT_THROW(forward(m, VectorXd::Zero(2)), PreconditionError);
}

TEST(Mlp, OddSymmetryWithoutBiases)
{
    std::mt19937_64 rng(3);
    auto m = random_model(rng, 6, 4, false);
    m.b_in.setZero();
    m.b_out = 0;
    const VectorXd x = VectorXd::Random(4);
    EXPECT_NEAR(forward(m, -x), -forward(m, x), 1e-14);
}

TEST(Mlp, GradientMatchesFiniteDifference)
{
    std::mt19937_64 rng(17);
    std::normal_distribution<double> n(0.0, 1.0);
    double worst = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const int d = 1 + trial % 7;
        const auto m = random_model(rng, 1 + trial % 9, d, trial % 2 == 0);
        VectorXd x = VectorXd::NullaryExpr(d, [&] { return n(rng); });
        if (m.normalized()) x = m.x_mean + m.x_std.cwiseProduct(x);
        const VectorXd g = gradient(m, x);
        for (int j = 0; j < d; ++j) {
            const double h = 1e-6 * (m.normalized() ? m.x_std(j) : 1.0);
            VectorXd xp = x, xm = x;
            xp(j) += h;
            xm(j) -= h;
            const double fd = static_cast<double>((forward_ld(m, xp) - forward_ld(m, xm)) / (2 * ((long double)xp(j) - x(j))));
            worst = std::max(worst, std::abs(g(j) - fd) / std::max(std::abs(fd), 1e-8));
        }
    }
    EXPECT_LE(worst, 1e-6);
}

TEST(Mlp, ExplicitFormAgrees)
{
    std::mt19937_64 rng(5);
    const auto m = random_model(rng, 8, 5, true);
    const auto e = explicit_form(m);
    EXPECT_FALSE(e.normalized());
    for (int t = 0; t < 20; ++t) {
        const VectorXd x = m.x_mean + 3 * VectorXd::Random(5);
        EXPECT_NEAR(forward(e, x), forward(m, x), 1e-10 * std::max(1.0, std::abs(forward(m, x))));
        EXPECT_LE((gradient(e, x) - gradient(m, x)).norm(), 1e-10 * std::max(1.0, gradient(m, x).norm()));
    }
}

TEST(Metrics, Definitions)
{
    VectorXd y(4);
    y << 1, 2, 3, 4;
    auto m = metrics(y, y);
    EXPECT_DOUBLE_EQ(m.r2, 1.0);
    EXPECT_DOUBLE_EQ(m.mae_pct, 0.0);
    m = metrics(y, VectorXd::Constant(4, y.mean()));
    EXPECT_NEAR(m.r2, 0.0, 1e-15);

    VectorXd t(2), p(2);
    t << 100, 200;
    p << 110, 180;
    EXPECT_NEAR(metrics(t, p).mae_pct, 10.0, 1e-12);

    EXPECT_THROW(metrics(VectorXd::Constant(3, 2.0), VectorXd::Zero(3)), PreconditionError);
    VectorXd z(3), zp(3);
    z << 0, 1, 2;
    zp << 0.5, 1, 2;
    const auto ex = metrics(z, zp);
    EXPECT_EQ(ex.excluded, 1);
    EXPECT_DOUBLE_EQ(ex.mae_pct, 0.0);
}

TEST(Train, RecoversRealizableTargets)
{
    const auto [X, y] = teacher_data(2000, 6, 99);
    TrainConfig cfg;
    cfg.hidden = 10;
    const auto r = train_rprop(X, y, cfg);
    EXPECT_GE(r.validation.r2, 0.999);
}

TEST(Train, ConstantTargets)
{
    MatrixXd X = MatrixXd::Random(80, 3);
    VectorXd y = VectorXd::Constant(80, 7.25);
    TrainConfig cfg;
    cfg.hidden = 4;
    const auto r = train_rprop(X, y, cfg);
    // parameter steps bottom out at delta_min, which bounds how close the fit gets
    EXPECT_NEAR(forward(r.model, X.row(0).transpose()), 7.25, 1e-3);
    EXPECT_LE(r.validation.mse, 1e-6);
}

TEST(Train, DeterministicAndBestSoFar)
{
    const auto [X, y] = teacher_data(200, 4, 7);
    TrainConfig cfg;
    cfg.hidden = 6;
    cfg.max_epochs = 400;
    const auto a = train_rprop(X, y, cfg), b = train_rprop(X, y, cfg);
    EXPECT_EQ(model_to_json(a.model), model_to_json(b.model));
    const double best = *std::min_element(a.val_mse.begin(), a.val_mse.end());
    EXPECT_EQ(a.val_mse[a.best_epoch - 1], best);
    cfg.seed = 2;
    EXPECT_NE(model_to_json(train_rprop(X, y, cfg).model), model_to_json(a.model));
}

TEST(Train, RejectsSmallDatasets)
{
    try {
        train_rprop(MatrixXd::Zero(10, 2), VectorXd::Zero(10), {});
        FAIL();
    } catch (const PreconditionError& e) {
        EXPECT_STREQ(e.what(), "≥ 50 samples required");
    }
}

TEST(Train, NormalizationIsARobustnessNotACrutch)
{
    const auto [X, y] = teacher_data(600, 4, 21);
    TrainConfig cfg;
    cfg.hidden = 8;
    const double with = train_rprop(X, y, cfg).validation.r2;
    cfg.normalize = false;
    const double without = train_rprop(X, y, cfg).validation.r2;
    EXPECT_LT(std::abs(with - without), 0.05);
}

TEST(CrossValidation, RealizableAndLeaveOneOut)
{
    const auto [X, y] = teacher_data(1000, 4, 31);
    TrainConfig cfg;
    cfg.hidden = 8;
    const auto cv = kfold_cv(X, y, cfg, 5);
    EXPECT_EQ(cv.folds.size(), 5u);
    EXPECT_GE(cv.mean_r2, 0.99);

    const auto [Xs, ys] = teacher_data(8, 2, 4);
    cfg.max_epochs = 50;
    const auto loo = kfold_cv(Xs, ys, cfg, 8);
    EXPECT_EQ(loo.folds.size(), 8u);
    EXPECT_TRUE(std::isfinite(loo.mean_r2));
    EXPECT_THROW(kfold_cv(Xs, ys, cfg, 9), PreconditionError);
}

TEST(ModelIo, RoundTripsBitExactly)
{
    const auto [X, y] = teacher_data(120, 5, 8);
    TrainConfig cfg;
    cfg.hidden = 5;
    cfg.max_epochs = 100;
    const auto r = train_rprop(X, y, cfg, {"a", "b", "c", "d", "e"});
    const auto text = model_to_json(r.model);
    const auto back = model_from_json(text);
    EXPECT_EQ(back.w_in, r.model.w_in);
    EXPECT_EQ(back.x_std, r.model.x_std);
    EXPECT_EQ(back.b_out, r.model.b_out);
    EXPECT_EQ(back.inputs, r.model.inputs);
    EXPECT_EQ(back.dataset_hash, dataset_hash(X, y));
    const VectorXd x = X.row(3).transpose();
    EXPECT_NEAR(forward(back, x), forward(r.model, x), 1e-12);
    EXPECT_EQ(model_to_json(back), text);

    auto broken = text;
    broken.replace(broken.rfind("\"hidden\": 5"), 11, "\"hidden\": 4");
    EXPECT_THROW(model_from_json(broken), CaseError);
}

TEST(DxModel, LosslessSingleDerIsAffine)
{
    FeederModel f;
    f.id = "lossless";
    f.base_kva = 1000;
    f.nodes.resize(2);
    f.nodes[1].id = 1;
    f.nodes[1].load_p = {100, 100, 100};
    f.nodes[1].load_q = {200, 200, 100};
    f.edges.push_back({0, 1, 0.0, 0.0});
    DerUnit d;
    d.node = 1;
    d.s_rating = 100;
    d.set_p(0);
    f.ders.push_back(d);
    f.finalize();
    BoundaryLink link;
    link.beta = 2;
    DxTrainConfig cfg;
    cfg.samples = 200;
    const auto r = train_dx_model(f, link, cfg);
    // no series impedance: Q_L = beta (500 - q) / 1000 exactly
    for (double q = -100; q <= 100; q += 10) {
        const double affine = 2 * (500 - q) / 1000;
        EXPECT_NEAR(forward(r.model, VectorXd::Constant(1, q)), affine, 0.01 * affine) << q;
    }
}

TEST(DxModel, BundledFeederBaseValueAndGradientSigns)
{
    const auto c = load_case(data("ieee30_37.case"));
    const auto& f = c.link_feeder(0);
    const auto r = train_dx_model(f, c.network.boundary_links[0], {});
    EXPECT_GE(r.validation.r2, 0.99);
    const VectorXd zero = VectorXd::Zero(static_cast<Eigen::Index>(f.ders.size()));
    EXPECT_NEAR(forward(r.model, zero), r.base_q_l, 0.02 * std::abs(r.base_q_l));
    const VectorXd g = gradient(r.model, zero);
    for (Eigen::Index j = 0; j < g.size(); ++j) EXPECT_LT(g(j), 0.0) << j;
}
