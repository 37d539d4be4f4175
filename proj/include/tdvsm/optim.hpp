#pragma once

// Dense linear and convex quadratic programming for the small problems that
// appear in the dispatch layer (tens of variables, at most a few hundred
// rows). Deterministic pivoting everywhere; speed is not a goal.

#include <iosfwd>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace tdvsm {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

enum class RowSense { le, ge, eq };

struct LpRow {
    std::string name;
    std::vector<std::pair<int, double>> terms;  // (variable, coefficient)
    RowSense sense = RowSense::le;
    double rhs = 0.0;
};

/// minimize c'x subject to row constraints and lower <= x <= upper.
struct LinearProgram {
    std::vector<std::string> var_names;
    std::vector<double> cost, lower, upper;
    std::vector<LpRow> rows;

    int add_var(std::string name, double c, double lo, double hi);
    int add_row(std::string name, std::vector<std::pair<int, double>> terms, RowSense s, double rhs);

    int vars() const { return static_cast<int>(cost.size()); }
    Eigen::MatrixXd matrix() const;  // rows x vars
    Eigen::VectorXd row_values(const Eigen::VectorXd& x) const;
};

enum class LpStatus { optimal, infeasible, unbounded };

struct LpResult {
    LpStatus status = LpStatus::infeasible;
    Eigen::VectorXd x;
    double objective = 0.0;
    // Row duals y and reduced costs d = c - A'y. At an optimum y <= 0 on
    // binding <= rows, y >= 0 on binding >= rows, d >= 0 at lower bounds and
    // d <= 0 at upper bounds.
    Eigen::VectorXd row_dual;
    Eigen::VectorXd reduced_cost;
    std::vector<int> active_rows;
    std::vector<std::string> violated;  // rows still infeasible after phase one
    int pivots = 0;
};

/// Two-phase dense tableau simplex with Bland's rule.
LpResult solve_lp(const LinearProgram& lp);

struct KktReport {
    double primal = 0.0;          // worst row or bound violation
    double stationarity = 0.0;    // reduced-cost sign / gradient residual
    double dual_sign = 0.0;       // worst multiplier of the wrong sign
    double complementarity = 0.0; // worst |multiplier * slack|

    bool ok(double stat_tol, double feas_tol) const
    {
        return primal <= feas_tol && stationarity <= stat_tol && dual_sign <= feas_tol && complementarity <= feas_tol;
    }
};

/// Optimality check that only uses the problem data, a point and row duals.
KktReport check_lp_kkt(const LinearProgram& lp, const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                       double active_tol = 1e-7);

/// CPLEX LP text layout.
void write_lp(std::ostream& out, const LinearProgram& lp);

// ---------------------------------------------------------------------------

/// minimize 0.5 x' diag(h) x + g'x subject to A x <= b, h > 0.
struct QuadraticProgram {
    Eigen::VectorXd h;
    Eigen::VectorXd g;
    Eigen::MatrixXd a;
    Eigen::VectorXd b;
    std::vector<std::string> row_names;

    int vars() const { return static_cast<int>(h.size()); }
    int rows() const { return static_cast<int>(b.size()); }
    /// Appends lo <= x_j <= hi as one or two rows (infinite sides skipped).
    void add_bounds(int j, double lo, double hi, const std::string& name);
    void add_row(const Eigen::RowVectorXd& coeffs, double rhs, std::string name);
    double objective(const Eigen::VectorXd& x) const;
};

struct QpResult {
    Eigen::VectorXd x;
    Eigen::VectorXd mu;  // >= 0 per row; H x + g + A' mu = 0 at the optimum
    double objective = 0.0;
    std::vector<int> active;  // working set at termination, ascending
    int iterations = 0;
};

/// Primal active-set method started from a phase-one vertex. Ties are broken
/// by the lowest row index. Throws InfeasibleError when no point satisfies
/// A x <= b, NumericalError if the iteration cap is hit.
QpResult solve_qp(const QuadraticProgram& qp);

/// Accelerated projected gradient on the dual, used as an independent check
/// of solve_qp.
QpResult solve_qp_dual_gradient(const QuadraticProgram& qp, int max_iter = 500000, double tol = 1e-13);

KktReport check_qp_kkt(const QuadraticProgram& qp, const Eigen::VectorXd& x, const Eigen::VectorXd& mu);

}  // namespace tdvsm
