#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "tdvsm/errors.hpp"
#include "tdvsm/optim.hpp"

namespace tdvsm {

void QuadraticProgram::add_row(const Eigen::RowVectorXd& coeffs, double rhs, std::string name)
{
    if (coeffs.size() != vars()) throw PreconditionError(fmt::format("row {}: wrong coefficient count", name));
    const Eigen::Index r = a.rows();
    a.conservativeResize(r + 1, vars());
    a.row(r) = coeffs;
    b.conservativeResize(r + 1);
    b(r) = rhs;
    row_names.push_back(std::move(name));
}

void QuadraticProgram::add_bounds(int j, double lo, double hi, const std::string& name)
{
    Eigen::RowVectorXd e = Eigen::RowVectorXd::Zero(vars());
    e(j) = 1.0;
    if (std::isfinite(hi)) add_row(e, hi, name + ".max");
    if (std::isfinite(lo)) add_row(-e, -lo, name + ".min");
}

double QuadraticProgram::objective(const Eigen::VectorXd& x) const
{
    return 0.5 * x.dot(h.cwiseProduct(x)) + g.dot(x);
}

namespace {

void check_shape(const QuadraticProgram& qp)
{
    const int n = qp.vars();
    if (qp.g.size() != n || qp.a.rows() != qp.rows() || (qp.rows() && qp.a.cols() != n))
        throw PreconditionError("quadratic program dimensions do not agree");
    if (n && qp.h.minCoeff() <= 0.0) throw PreconditionError("quadratic program needs a positive diagonal Hessian");
}

Eigen::VectorXd feasible_start(const QuadraticProgram& qp)
{
    const int n = qp.vars();
    Eigen::VectorXd x0 = -qp.g.cwiseQuotient(qp.h);
    if (qp.rows() == 0 || ((qp.a * x0 - qp.b).maxCoeff() <= 0.0)) return x0;
    LinearProgram lp;
    for (int j = 0; j < n; ++j) lp.add_var(fmt::format("x{}", j), 0.0, -kInf, kInf);
    for (int i = 0; i < qp.rows(); ++i) {
        std::vector<std::pair<int, double>> terms;
        for (int j = 0; j < n; ++j)
            if (qp.a(i, j) != 0.0) terms.emplace_back(j, qp.a(i, j));
        lp.add_row(qp.row_names.size() == static_cast<std::size_t>(qp.rows()) ? qp.row_names[i] : fmt::format("r{}", i),
                   std::move(terms), RowSense::le, qp.b(i));
    }
    const auto r = solve_lp(lp);
    if (r.status != LpStatus::optimal) {
        std::string rows;
        for (const auto& v : r.violated) rows += (rows.empty() ? "" : ", ") + v;
        throw InfeasibleError(fmt::format("quadratic program has no feasible point (conflicting: {})", rows));
    }
    return r.x;
}

}  // namespace

QpResult solve_qp(const QuadraticProgram& qp)
{
    check_shape(qp);
    const int n = qp.vars(), m = qp.rows();
    QpResult res;
    Eigen::VectorXd x = feasible_start(qp);
    const Eigen::VectorXd hinv = qp.h.cwiseInverse();

    auto slack = [&](int i) { return qp.b(i) - qp.a.row(i).dot(x); };
    auto scale = [&](int i) { return 1.0 + std::abs(qp.b(i)) + qp.a.row(i).cwiseAbs().maxCoeff() * x.cwiseAbs().maxCoeff(); };

    std::vector<int> work;
    auto independent = [&](int cand) {
        Eigen::MatrixXd s(static_cast<Eigen::Index>(work.size()) + 1, n);
        for (std::size_t k = 0; k < work.size(); ++k) s.row(static_cast<Eigen::Index>(k)) = qp.a.row(work[k]);
        s.row(s.rows() - 1) = qp.a.row(cand);
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(s.transpose());
        qr.setThreshold(1e-10);
        return qr.rank() == s.rows();
    };
    for (int i = 0; i < m && static_cast<int>(work.size()) < n; ++i)
        if (slack(i) <= 1e-9 * scale(i) && independent(i)) work.push_back(i);

    const int limit = 50 * (n + m) + 100;
    for (res.iterations = 0; res.iterations < limit; ++res.iterations) {
        const Eigen::VectorXd q = qp.h.cwiseProduct(x) + qp.g;
        const auto nw = static_cast<Eigen::Index>(work.size());
        Eigen::MatrixXd aw(nw, n);
        for (Eigen::Index k = 0; k < nw; ++k) aw.row(k) = qp.a.row(work[static_cast<std::size_t>(k)]);
        Eigen::VectorXd lambda(nw);
        if (nw) {
            const Eigen::MatrixXd mm = aw * hinv.asDiagonal() * aw.transpose();
            lambda = mm.ldlt().solve(-aw * hinv.cwiseProduct(q));
        }
        const Eigen::VectorXd p = -hinv.cwiseProduct(q + aw.transpose() * lambda);

        if (p.cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + x.cwiseAbs().maxCoeff())) {
            Eigen::Index drop = -1;
            double most = -1e-12;
            for (Eigen::Index k = 0; k < nw; ++k)
                if (lambda(k) < most) {
                    most = lambda(k);
                    drop = k;
                }
            if (drop < 0) {
                res.mu = Eigen::VectorXd::Zero(m);
                for (Eigen::Index k = 0; k < nw; ++k)
                    res.mu(work[static_cast<std::size_t>(k)]) = std::max(0.0, lambda(k));
                res.x = x;
                res.objective = qp.objective(x);
                res.active = work;
                return res;
            }
            work.erase(work.begin() + drop);
            continue;
        }

        double alpha = 1.0;
        int block = -1;
        for (int i = 0; i < m; ++i) {
            if (std::find(work.begin(), work.end(), i) != work.end()) continue;
            const double ap = qp.a.row(i).dot(p);
            if (ap <= 1e-14 * (1.0 + p.cwiseAbs().maxCoeff())) continue;
            const double step = std::max(0.0, slack(i)) / ap;
            if (step < alpha) {
                alpha = step;
                block = i;
            }
        }
        x += alpha * p;
        if (block >= 0) work.insert(std::upper_bound(work.begin(), work.end(), block), block);
    }
    throw NumericalError("active-set iteration limit reached");
}

QpResult solve_qp_dual_gradient(const QuadraticProgram& qp, int max_iter, double tol)
{
    check_shape(qp);
    const int m = qp.rows();
    const Eigen::VectorXd hinv = qp.h.cwiseInverse();
    QpResult res;
    auto primal = [&](const Eigen::VectorXd& mu) -> Eigen::VectorXd {
        return -hinv.cwiseProduct(qp.g + qp.a.transpose() * mu);
    };
    if (m == 0) {
        res.x = -hinv.cwiseProduct(qp.g);
        res.mu = Eigen::VectorXd::Zero(0);
        res.objective = qp.objective(res.x);
        return res;
    }
    const Eigen::MatrixXd k = qp.a * hinv.asDiagonal() * qp.a.transpose();
    const double lip = std::max(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(k, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff(), 1e-300);

    Eigen::VectorXd mu = Eigen::VectorXd::Zero(m), nu = mu;
    double t = 1.0;
    for (res.iterations = 0; res.iterations < max_iter; ++res.iterations) {
        const Eigen::VectorXd grad = qp.b - qp.a * primal(nu);
        const Eigen::VectorXd next = (nu - grad / lip).cwiseMax(0.0);
        const double change = (next - mu).cwiseAbs().maxCoeff();
        const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
        if ((nu - next).dot(next - mu) > 0.0) {
            t = 1.0;
            nu = next;
        } else {
            nu = next + ((t - 1.0) / t_next) * (next - mu);
            t = t_next;
        }
        mu = next;
        if (change <= tol * (1.0 + mu.cwiseAbs().maxCoeff())) break;
    }
    res.mu = mu;
    res.x = primal(mu);
    res.objective = qp.objective(res.x);
    for (int i = 0; i < m; ++i)
        if (mu(i) > 0.0) res.active.push_back(i);
    return res;
}

KktReport check_qp_kkt(const QuadraticProgram& qp, const Eigen::VectorXd& x, const Eigen::VectorXd& mu)
{
    KktReport k;
    Eigen::VectorXd grad = qp.h.cwiseProduct(x) + qp.g;
    if (qp.rows() == 0) {
        k.stationarity = grad.size() ? grad.cwiseAbs().maxCoeff() : 0.0;
        return k;
    }
    k.stationarity = (grad + qp.a.transpose() * mu).cwiseAbs().maxCoeff();
    const Eigen::VectorXd s = qp.b - qp.a * x;
    k.primal = std::max(0.0, -s.minCoeff());
    k.dual_sign = std::max(0.0, -mu.minCoeff());
    k.complementarity = mu.cwiseProduct(s).cwiseAbs().maxCoeff();
    return k;
}

}  // namespace tdvsm
