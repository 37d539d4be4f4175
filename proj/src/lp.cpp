#include <algorithm>
#include <cmath>
#include <ostream>

#include <fmt/format.h>

#include "tdvsm/errors.hpp"
#include "tdvsm/optim.hpp"

namespace tdvsm {

int LinearProgram::add_var(std::string name, double c, double lo, double hi)
{
    var_names.push_back(std::move(name));
    cost.push_back(c);
    lower.push_back(lo);
    upper.push_back(hi);
    return vars() - 1;
}

int LinearProgram::add_row(std::string name, std::vector<std::pair<int, double>> terms, RowSense s, double rhs)
{
    for (const auto& [j, v] : terms)
        if (j < 0 || j >= vars()) throw PreconditionError(fmt::format("row {}: variable {} out of range", name, j));
    rows.push_back({std::move(name), std::move(terms), s, rhs});
    return static_cast<int>(rows.size()) - 1;
}

Eigen::MatrixXd LinearProgram::matrix() const
{
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows.size()), vars());
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (const auto& [j, v] : rows[i].terms) a(static_cast<Eigen::Index>(i), j) += v;
    return a;
}

Eigen::VectorXd LinearProgram::row_values(const Eigen::VectorXd& x) const { return matrix() * x; }

namespace {

// Standard form: min c'y, A y = b, y >= 0, b >= 0.
struct StandardForm {
    Eigen::MatrixXd a;
    Eigen::VectorXd b, c;
    std::vector<double> flip;  // per row, +1 or -1
    std::vector<int> start_col;  // per row: slack usable as a starting basis column, else -1
    std::vector<int> col_var;    // structural column -> original variable, -1 for slacks
    std::vector<double> col_sign;
    std::vector<double> offset;  // per original variable
    std::vector<int> bound_var;  // variable behind each upper-bound row
    int orig_rows = 0;
};

StandardForm standardize(const LinearProgram& lp)
{
    const int nv = lp.vars();
    StandardForm s;
    s.offset.assign(static_cast<std::size_t>(nv), 0.0);
    std::vector<int> first_col(static_cast<std::size_t>(nv), -1), second_col(static_cast<std::size_t>(nv), -1);
    std::vector<int> bounded;
    for (int j = 0; j < nv; ++j) {
        const double lo = lp.lower[j], hi = lp.upper[j];
        if (lo > hi) throw InfeasibleError(fmt::format("variable {}: lower bound above upper bound", lp.var_names[j]));
        first_col[j] = static_cast<int>(s.col_var.size());
        if (std::isfinite(lo)) {
            s.offset[j] = lo;
            s.col_var.push_back(j);
            s.col_sign.push_back(1.0);
            if (std::isfinite(hi)) bounded.push_back(j);
        } else if (std::isfinite(hi)) {
            s.offset[j] = hi;
            s.col_var.push_back(j);
            s.col_sign.push_back(-1.0);
        } else {
            s.col_var.push_back(j);
            s.col_sign.push_back(1.0);
            second_col[j] = static_cast<int>(s.col_var.size());
            s.col_var.push_back(j);
            s.col_sign.push_back(-1.0);
        }
    }
    const int n_struct = static_cast<int>(s.col_var.size());
    s.orig_rows = static_cast<int>(lp.rows.size());
    const int m = s.orig_rows + static_cast<int>(bounded.size());
    int n_slack = 0;
    for (const auto& r : lp.rows)
        if (r.sense != RowSense::eq) ++n_slack;
    n_slack += static_cast<int>(bounded.size());
    const int n = n_struct + n_slack;

    s.a = Eigen::MatrixXd::Zero(m, n);
    s.b = Eigen::VectorXd::Zero(m);
    s.c = Eigen::VectorXd::Zero(n);
    s.flip.assign(static_cast<std::size_t>(m), 1.0);
    s.start_col.assign(static_cast<std::size_t>(m), -1);
    for (int k = 0; k < n_struct; ++k) s.c(k) = lp.cost[s.col_var[k]] * s.col_sign[k];
    s.col_var.resize(static_cast<std::size_t>(n), -1);
    s.col_sign.resize(static_cast<std::size_t>(n), 0.0);

    int slack = n_struct;
    for (int i = 0; i < s.orig_rows; ++i) {
        const auto& r = lp.rows[i];
        double rhs = r.rhs;
        for (const auto& [j, v] : r.terms) {
            rhs -= v * s.offset[j];
            s.a(i, first_col[j]) += v * s.col_sign[first_col[j]];
            if (second_col[j] >= 0) s.a(i, second_col[j]) -= v;
        }
        int sc = -1;
        if (r.sense != RowSense::eq) {
            sc = slack++;
            s.a(i, sc) = r.sense == RowSense::le ? 1.0 : -1.0;
        }
        s.b(i) = rhs;
        if (rhs < 0) {
            s.a.row(i) *= -1.0;
            s.b(i) = -rhs;
            s.flip[i] = -1.0;
        }
        if (sc >= 0 && s.a(i, sc) > 0) s.start_col[i] = sc;
    }
    for (std::size_t t = 0; t < bounded.size(); ++t) {
        const int j = bounded[t];
        const int i = s.orig_rows + static_cast<int>(t);
        s.a(i, first_col[j]) = 1.0;
        s.a(i, slack) = 1.0;
        s.start_col[i] = slack++;
        s.b(i) = lp.upper[j] - lp.lower[j];
    }
    s.bound_var = bounded;
    return s;
}

class Tableau {
public:
    Tableau(const StandardForm& s) : m_(static_cast<int>(s.a.rows())), n_(static_cast<int>(s.a.cols()))
    {
        t_ = Eigen::MatrixXd::Zero(m_ + 1, n_ + m_ + 1);
        t_.topLeftCorner(m_, n_) = s.a;
        t_.block(0, n_, m_, m_).setIdentity();
        t_.col(cols() - 1).head(m_) = s.b;
        basis_.resize(static_cast<std::size_t>(m_));
        for (int i = 0; i < m_; ++i) basis_[i] = s.start_col[i] >= 0 ? s.start_col[i] : n_ + i;
    }

    int rows() const { return m_; }
    int structural() const { return n_; }
    int cols() const { return static_cast<int>(t_.cols()); }
    bool artificial(int k) const { return k >= n_ && k < n_ + m_; }
    const std::vector<int>& basis() const { return basis_; }
    double value(int r) const { return t_(r, cols() - 1); }
    double entry(int r, int k) const { return t_(r, k); }
    double objective() const { return -t_(m_, cols() - 1); }

    void set_costs(const Eigen::VectorXd& c)  // over all columns but rhs
    {
        t_.row(m_).setZero();
        t_.row(m_).head(c.size()) = c.transpose();
        for (int r = 0; r < m_; ++r) {
            const double cb = basis_[r] < c.size() ? c(basis_[r]) : 0.0;
            if (cb != 0.0) t_.row(m_) -= cb * t_.row(r);
        }
    }

    void pivot(int r, int k)
    {
        t_.row(r) /= t_(r, k);
        for (int i = 0; i <= m_; ++i) {
            if (i == r) continue;
            const double f = t_(i, k);
            if (f != 0.0) t_.row(i) -= f * t_.row(r);
        }
        t_(r, k) = 1.0;
        basis_[r] = k;
        ++pivots_;
    }

    // Returns false when unbounded.
    bool run(bool allow_artificial, double cost_tol, int& pivots)
    {
        constexpr double kPivotTol = 1e-11;
        const int limit = 50 * (m_ + cols());
        for (int it = 0; it < limit; ++it) {
            int enter = -1;
            for (int k = 0; k < cols() - 1; ++k) {
                if (!allow_artificial && artificial(k)) continue;
                if (t_(m_, k) < -cost_tol) {
                    enter = k;
                    break;
                }
            }
            if (enter < 0) {
                pivots = pivots_;
                return true;
            }
            int leave = -1;
            double best = kInf;
            for (int r = 0; r < m_; ++r) {
                const double e = t_(r, enter);
                if (e <= kPivotTol) continue;
                const double ratio = value(r) / e;
                const double tie = 1e-12 * (1.0 + std::abs(ratio));
                if (leave < 0 || ratio < best - tie) {
                    best = ratio;
                    leave = r;
                } else if (ratio <= best + tie && basis_[r] < basis_[leave]) {
                    best = std::min(best, ratio);
                    leave = r;
                }
            }
            if (leave < 0) {
                pivots = pivots_;
                return false;
            }
            pivot(leave, enter);
        }
        throw NumericalError("simplex iteration limit reached");
    }

private:
    int m_, n_;
    Eigen::MatrixXd t_;
    std::vector<int> basis_;
    int pivots_ = 0;
};

}  // namespace

LpResult solve_lp(const LinearProgram& lp)
{
    const int nv = lp.vars();
    LpResult res;
    const auto s = standardize(lp);
    Tableau tab(s);
    const int m = tab.rows(), n = tab.structural();

    const double b_scale = 1.0 + (m ? s.b.cwiseAbs().maxCoeff() : 0.0);
    Eigen::VectorXd c1 = Eigen::VectorXd::Zero(n + m);
    c1.segment(n, m).setOnes();
    tab.set_costs(c1);
    tab.run(true, 1e-12, res.pivots);
    if (tab.objective() > 1e-9 * b_scale) {
        for (int r = 0; r < m; ++r)
            if (tab.artificial(tab.basis()[r]) && tab.value(r) > 1e-9 * b_scale) {
                const int row = tab.basis()[r] - n;
                res.violated.push_back(row < s.orig_rows ? lp.rows[row].name
                                                         : fmt::format("upper bound of {}", lp.var_names[s.bound_var[row - s.orig_rows]]));
            }
        std::sort(res.violated.begin(), res.violated.end());
        res.status = LpStatus::infeasible;
        return res;
    }
    for (int r = 0; r < m; ++r) {
        if (!tab.artificial(tab.basis()[r])) continue;
        for (int k = 0; k < n; ++k)
            if (std::abs(tab.entry(r, k)) > 1e-9) {
                tab.pivot(r, k);
                break;
            }
    }

    Eigen::VectorXd c2 = Eigen::VectorXd::Zero(n + m);
    c2.head(n) = s.c;
    const double c_scale = std::max(1.0, n ? s.c.cwiseAbs().maxCoeff() : 0.0);
    tab.set_costs(c2);
    if (!tab.run(false, 1e-11 * c_scale, res.pivots)) {
        res.status = LpStatus::unbounded;
        return res;
    }

    // refactor the final basis for accurate primal and dual values
    Eigen::MatrixXd full(m, n + m);
    full << s.a, Eigen::MatrixXd::Identity(m, m);
    Eigen::MatrixXd bmat(m, m);
    Eigen::VectorXd cb(m);
    for (int r = 0; r < m; ++r) {
        bmat.col(r) = full.col(tab.basis()[r]);
        cb(r) = c2(tab.basis()[r]);
    }
    Eigen::VectorXd y_std = Eigen::VectorXd::Zero(n + m);
    Eigen::VectorXd pi = Eigen::VectorXd::Zero(m);
    if (m > 0) {
        Eigen::FullPivLU<Eigen::MatrixXd> lu(bmat);
        const Eigen::VectorXd xb = lu.solve(s.b);
        if (!lu.isInvertible() || (bmat * xb - s.b).cwiseAbs().maxCoeff() > 1e-9 * b_scale)
            throw NumericalError("simplex basis is singular at the optimum");
        for (int r = 0; r < m; ++r) y_std(tab.basis()[r]) = std::max(0.0, xb(r));
        pi = lu.transpose().solve(cb);
    }

    res.x = Eigen::Map<const Eigen::VectorXd>(s.offset.data(), nv);
    for (int k = 0; k < n; ++k)
        if (s.col_var[k] >= 0) res.x(s.col_var[k]) += s.col_sign[k] * y_std(k);
    for (int j = 0; j < nv; ++j) res.x(j) = std::clamp(res.x(j), lp.lower[j], lp.upper[j]);

    const auto nr = static_cast<Eigen::Index>(lp.rows.size());
    res.row_dual.resize(nr);
    for (Eigen::Index i = 0; i < nr; ++i) res.row_dual(i) = s.flip[i] * pi(i);
    const Eigen::MatrixXd a = lp.matrix();
    const Eigen::VectorXd c = Eigen::Map<const Eigen::VectorXd>(lp.cost.data(), nv);
    res.reduced_cost = c - a.transpose() * res.row_dual;
    res.objective = c.dot(res.x);
    const Eigen::VectorXd ax = a * res.x;
    for (Eigen::Index i = 0; i < nr; ++i) {
        const auto& r = lp.rows[i];
        if (r.sense == RowSense::eq || std::abs(ax(i) - r.rhs) <= 1e-7 * (1.0 + std::abs(r.rhs)))
            res.active_rows.push_back(static_cast<int>(i));
    }
    res.status = LpStatus::optimal;
    return res;
}

KktReport check_lp_kkt(const LinearProgram& lp, const Eigen::VectorXd& x, const Eigen::VectorXd& y, double active_tol)
{
    KktReport k;
    const Eigen::MatrixXd a = lp.matrix();
    const Eigen::VectorXd ax = a * x;
    for (std::size_t i = 0; i < lp.rows.size(); ++i) {
        const auto& r = lp.rows[i];
        const double v = ax(static_cast<Eigen::Index>(i)), yi = y(static_cast<Eigen::Index>(i));
        switch (r.sense) {
        case RowSense::le:
            k.primal = std::max(k.primal, v - r.rhs);
            k.dual_sign = std::max(k.dual_sign, yi);
            break;
        case RowSense::ge:
            k.primal = std::max(k.primal, r.rhs - v);
            k.dual_sign = std::max(k.dual_sign, -yi);
            break;
        case RowSense::eq:
            k.primal = std::max(k.primal, std::abs(v - r.rhs));
            break;
        }
        if (r.sense != RowSense::eq) k.complementarity = std::max(k.complementarity, std::abs(yi * (r.rhs - v)));
    }
    for (int j = 0; j < lp.vars(); ++j) {
        k.primal = std::max({k.primal, lp.lower[j] - x(j), x(j) - lp.upper[j]});
        const double d = lp.cost[j] - a.col(j).dot(y);
        const bool at_lo = std::isfinite(lp.lower[j]) && x(j) - lp.lower[j] <= active_tol * (1.0 + std::abs(lp.lower[j]));
        const bool at_hi = std::isfinite(lp.upper[j]) && lp.upper[j] - x(j) <= active_tol * (1.0 + std::abs(lp.upper[j]));
        double viol = 0.0;
        if (at_lo && at_hi) viol = 0.0;
        else if (at_lo) viol = std::max(0.0, -d);
        else if (at_hi) viol = std::max(0.0, d);
        else viol = std::abs(d);
        k.stationarity = std::max(k.stationarity, viol);
    }
    return k;
}

namespace {

std::string lp_name(const std::string& s, const char* fallback, std::size_t i)
{
    std::string out;
    for (char ch : s) out += (std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '.') ? ch : '_';
    if (out.empty() || std::isdigit(static_cast<unsigned char>(out[0])) || out[0] == '.')
        out = fmt::format("{}{}_{}", fallback, i, out);
    return out;
}

void write_terms(std::ostream& out, const std::vector<std::pair<int, double>>& terms, const std::vector<std::string>& names)
{
    bool first = true;
    for (const auto& [j, v] : terms) {
        if (v == 0.0) continue;
        out << (v < 0 ? " - " : first ? " " : " + ") << fmt::format("{:.17g} {}", std::abs(v), names[j]);
        first = false;
    }
    if (first) out << " 0 " << (names.empty() ? "x" : names[0]);
}

}  // namespace

void write_lp(std::ostream& out, const LinearProgram& lp)
{
    std::vector<std::string> names;
    for (std::size_t j = 0; j < lp.var_names.size(); ++j) names.push_back(lp_name(lp.var_names[j], "x", j));
    std::vector<std::pair<int, double>> obj;
    for (int j = 0; j < lp.vars(); ++j) obj.emplace_back(j, lp.cost[j]);
    out << "Minimize\n obj:";
    write_terms(out, obj, names);
    out << "\nSubject To\n";
    for (std::size_t i = 0; i < lp.rows.size(); ++i) {
        const auto& r = lp.rows[i];
        out << ' ' << lp_name(r.name, "r", i) << ':';
        write_terms(out, r.terms, names);
        out << (r.sense == RowSense::le ? " <= " : r.sense == RowSense::ge ? " >= " : " = ")
            << fmt::format("{:.17g}", r.rhs) << '\n';
    }
    out << "Bounds\n";
    auto num = [](double v) { return std::isinf(v) ? std::string(v < 0 ? "-inf" : "+inf") : fmt::format("{:.17g}", v); };
    for (int j = 0; j < lp.vars(); ++j) {
        if (std::isinf(lp.lower[j]) && std::isinf(lp.upper[j])) out << ' ' << names[j] << " free\n";
        else out << ' ' << num(lp.lower[j]) << " <= " << names[j] << " <= " << num(lp.upper[j]) << '\n';
    }
    out << "End\n";
}

}  // namespace tdvsm
