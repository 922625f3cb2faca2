#pragma once

#include <cstddef>
#include <limits>
#include <string>
#include <vector>

// Convex quadratic programs with a diagonal Hessian:
//
//   minimize    1/2 sum_i quadratic[i] * x_i^2 + linear^T x
//   subject to  equality rows:   a^T x  = rhs
//               range rows:      lo <= c^T x <= hi   (either side may be infinite)
//               box:             lower <= x <= upper
//
// solved by a primal-dual interior-point method. A solution comes with its KKT
// certificate evaluated on the original constraints.

namespace dlrgrid::qp {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct Term {
  std::size_t var;
  double coef;
};

struct EqualityRow {
  std::vector<Term> terms;
  double rhs = 0.0;
};

struct RangeRow {
  std::vector<Term> terms;
  double lower = -kInf;
  double upper = kInf;
};

struct QpProblem {
  std::vector<double> quadratic;  // >= 0
  std::vector<double> linear;
  std::vector<double> lower;
  std::vector<double> upper;
  std::vector<EqualityRow> equalities;
  std::vector<RangeRow> ranges;

  std::size_t variables() const noexcept { return linear.size(); }
  std::size_t add_variable(double quad, double lin, double lo = -kInf, double hi = kInf);
  void add_equality(std::vector<Term> terms, double rhs);
  void add_range(std::vector<Term> terms, double lo, double hi);

  /// Throws InvalidArgument on inconsistent sizes, negative curvature or bad indices.
  void validate() const;
  double objective(const std::vector<double>& x) const;
};

enum class QpStatus { Solved, Infeasible, IterationLimit };
std::string to_string(QpStatus s);

struct KktCertificate {
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  double complementarity = 0.0;

  double worst() const;
};

struct QpSettings {
  /// Stopping tolerance on residuals scaled by the size of the problem data.
  double tol = 1e-8;
  int max_iter = 100;
  /// Problems with n + equalities at or below this size use a dense factorization.
  std::size_t dense_threshold = 160;
};

struct QpResult {
  QpStatus status = QpStatus::IterationLimit;
  std::vector<double> x;
  std::vector<double> eq_duals;     // per equality row
  std::vector<double> range_duals;  // per range row: upper multiplier minus lower multiplier
  std::vector<double> bound_duals;  // per variable, same sign convention
  double objective = 0.0;
  KktCertificate kkt;
  int iterations = 0;
  std::string message;
};

QpResult solve_qp(const QpProblem& problem, const QpSettings& settings = {});

/// KKT residuals of a candidate primal/dual point on the original problem.
KktCertificate kkt_certificate(const QpProblem& problem, const std::vector<double>& x,
                               const std::vector<double>& eq_duals,
                               const std::vector<double>& range_duals,
                               const std::vector<double>& bound_duals);

}  // namespace dlrgrid::qp
