#include "dlrgrid/qp.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <algorithm>
#include <cmath>
#include <limits>

#include "dlrgrid/errors.hpp"

namespace dlrgrid::qp {

using Eigen::VectorXd;
using SpMat = Eigen::SparseMatrix<double>;

std::size_t QpProblem::add_variable(double quad, double lin, double lo, double hi) {
  quadratic.push_back(quad);
  linear.push_back(lin);
  lower.push_back(lo);
  upper.push_back(hi);
  return linear.size() - 1;
}

void QpProblem::add_equality(std::vector<Term> terms, double rhs) {
  equalities.push_back({std::move(terms), rhs});
}

void QpProblem::add_range(std::vector<Term> terms, double lo, double hi) {
  ranges.push_back({std::move(terms), lo, hi});
}

void QpProblem::validate() const {
  const std::size_t n = linear.size();
  if (quadratic.size() != n || lower.size() != n || upper.size() != n) {
    throw InvalidArgument("QP vectors have inconsistent sizes");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!(quadratic[i] >= 0.0) || !std::isfinite(quadratic[i])) {
      throw InvalidArgument("QP quadratic term " + std::to_string(i) + " is not convex");
    }
    if (!std::isfinite(linear[i])) throw InvalidArgument("QP linear term is not finite");
  }
  auto check_terms = [&](const std::vector<Term>& terms) {
    for (const auto& t : terms) {
      if (t.var >= n) throw InvalidArgument("QP row references variable out of range");
      if (!std::isfinite(t.coef)) throw InvalidArgument("QP row has a non-finite coefficient");
    }
  };
  for (const auto& r : equalities) check_terms(r.terms);
  for (const auto& r : ranges) check_terms(r.terms);
}

double QpProblem::objective(const std::vector<double>& x) const {
  double f = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) f += 0.5 * quadratic[i] * x[i] * x[i] + linear[i] * x[i];
  return f;
}

std::string to_string(QpStatus s) {
  switch (s) {
    case QpStatus::Solved: return "solved";
    case QpStatus::Infeasible: return "infeasible";
    case QpStatus::IterationLimit: return "iteration limit";
  }
  return "unknown";
}

double KktCertificate::worst() const {
  return std::max({primal_residual, dual_residual, complementarity});
}

namespace {

double row_dot(const std::vector<Term>& terms, const std::vector<double>& x) {
  double s = 0.0;
  for (const auto& t : terms) s += t.coef * x[t.var];
  return s;
}

// Where an interior-point inequality row came from.
struct IneqOrigin {
  enum Kind { Range, Box } kind;
  std::size_t index;
  double sign;  // +1 for an upper side, -1 for a lower side
};

struct EqOrigin {
  enum Kind { Equality, Range, Box } kind;
  std::size_t index;
};

// min 1/2 x'Px + q'x  s.t.  Ax = b,  Gx <= h
struct StandardForm {
  VectorXd p, q, b, h;
  SpMat a, g;
  std::vector<EqOrigin> eq_origin;
  std::vector<IneqOrigin> ineq_origin;
};

bool collapse(double& lo, double& hi) {
  // Treat nearly coincident bounds as an equality; report true when lo > hi.
  if (lo <= hi) return false;
  if (lo - hi <= 1e-9 * std::max(1.0, std::abs(lo))) {
    lo = hi = 0.5 * (lo + hi);
    return false;
  }
  return true;
}

StandardForm standardize(const QpProblem& prob, std::string& infeasible) {
  const std::size_t n = prob.variables();
  StandardForm s;
  s.p = Eigen::Map<const VectorXd>(prob.quadratic.data(), static_cast<Eigen::Index>(n));
  s.q = Eigen::Map<const VectorXd>(prob.linear.data(), static_cast<Eigen::Index>(n));
  std::vector<Eigen::Triplet<double>> at, gt;
  std::vector<double> b, h;

  auto add_eq = [&](const std::vector<Term>& terms, double rhs, EqOrigin origin) {
    const auto row = static_cast<int>(b.size());
    for (const auto& t : terms) at.emplace_back(row, static_cast<int>(t.var), t.coef);
    b.push_back(rhs);
    s.eq_origin.push_back(origin);
  };
  auto add_ineq = [&](const std::vector<Term>& terms, double sign, double rhs, IneqOrigin origin) {
    const auto row = static_cast<int>(h.size());
    for (const auto& t : terms) gt.emplace_back(row, static_cast<int>(t.var), sign * t.coef);
    h.push_back(sign * rhs);
    s.ineq_origin.push_back(origin);
  };

  for (std::size_t r = 0; r < prob.equalities.size(); ++r) {
    add_eq(prob.equalities[r].terms, prob.equalities[r].rhs, {EqOrigin::Equality, r});
  }
  for (std::size_t r = 0; r < prob.ranges.size(); ++r) {
    double lo = prob.ranges[r].lower, hi = prob.ranges[r].upper;
    if (collapse(lo, hi)) {
      infeasible = "range row " + std::to_string(r) + " has lower bound above upper bound";
      continue;
    }
    if (lo == hi) {
      add_eq(prob.ranges[r].terms, lo, {EqOrigin::Range, r});
      continue;
    }
    if (std::isfinite(hi)) add_ineq(prob.ranges[r].terms, 1.0, hi, {IneqOrigin::Range, r, 1.0});
    if (std::isfinite(lo)) add_ineq(prob.ranges[r].terms, -1.0, lo, {IneqOrigin::Range, r, -1.0});
  }
  for (std::size_t i = 0; i < n; ++i) {
    double lo = prob.lower[i], hi = prob.upper[i];
    if (collapse(lo, hi)) {
      infeasible = "variable " + std::to_string(i) + " has lower bound above upper bound";
      continue;
    }
    const std::vector<Term> unit{{i, 1.0}};
    if (lo == hi) {
      add_eq(unit, lo, {EqOrigin::Box, i});
      continue;
    }
    if (std::isfinite(hi)) add_ineq(unit, 1.0, hi, {IneqOrigin::Box, i, 1.0});
    if (std::isfinite(lo)) add_ineq(unit, -1.0, lo, {IneqOrigin::Box, i, -1.0});
  }

  s.a.resize(static_cast<Eigen::Index>(b.size()), static_cast<Eigen::Index>(n));
  s.a.setFromTriplets(at.begin(), at.end());
  s.g.resize(static_cast<Eigen::Index>(h.size()), static_cast<Eigen::Index>(n));
  s.g.setFromTriplets(gt.begin(), gt.end());
  s.b = Eigen::Map<VectorXd>(b.data(), static_cast<Eigen::Index>(b.size()));
  s.h = Eigen::Map<VectorXd>(h.data(), static_cast<Eigen::Index>(h.size()));
  return s;
}

// Solves the reduced Newton system
//   [ P + G' W G   A' ] [dx]   [rx]
//   [ A            0  ] [dy] = [ry]
// with a small quasi-definite regularization and iterative refinement.
class KktSystem {
 public:
  KktSystem(const StandardForm& s, bool dense) : s_(s), dense_(dense), gt_(s.g.transpose()) {}

  bool factor(const VectorXd& w) {
    w_ = w;
    const auto n = s_.p.size();
    const auto me = s_.b.size();
    if (dense_) {
      Eigen::MatrixXd k = Eigen::MatrixXd::Zero(n + me, n + me);
      const Eigen::MatrixXd gd(s_.g);
      k.topLeftCorner(n, n) = gd.transpose() * w.asDiagonal() * gd;
      k.topLeftCorner(n, n).diagonal() += s_.p + VectorXd::Constant(n, kReg);
      const Eigen::MatrixXd ad(s_.a);
      k.topRightCorner(n, me) = ad.transpose();
      k.bottomLeftCorner(me, n) = ad;
      k.bottomRightCorner(me, me).diagonal().setConstant(-kReg);
      dense_lu_.compute(k);
      return true;
    }
    SpMat hmat = gt_ * w.asDiagonal() * s_.g;
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(hmat.nonZeros() + 2 * s_.a.nonZeros() + n + me));
    for (Eigen::Index c = 0; c < hmat.outerSize(); ++c)
      for (SpMat::InnerIterator it(hmat, c); it; ++it)
        trip.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
    for (Eigen::Index i = 0; i < n; ++i)
      trip.emplace_back(static_cast<int>(i), static_cast<int>(i), s_.p(i) + kReg);
    for (Eigen::Index c = 0; c < s_.a.outerSize(); ++c)
      for (SpMat::InnerIterator it(s_.a, c); it; ++it) {
        trip.emplace_back(static_cast<int>(n + it.row()), static_cast<int>(it.col()), it.value());
        trip.emplace_back(static_cast<int>(it.col()), static_cast<int>(n + it.row()), it.value());
      }
    for (Eigen::Index i = 0; i < me; ++i)
      trip.emplace_back(static_cast<int>(n + i), static_cast<int>(n + i), -kReg);
    SpMat k(n + me, n + me);
    k.setFromTriplets(trip.begin(), trip.end());
    sparse_lu_.compute(k);
    return sparse_lu_.info() == Eigen::Success;
  }

  void solve(const VectorXd& rx, const VectorXd& ry, VectorXd& dx, VectorXd& dy) const {
    const auto n = s_.p.size();
    const auto me = s_.b.size();
    VectorXd rhs(n + me);
    rhs << rx, ry;
    VectorXd sol = raw_solve(rhs);
    for (int it = 0; it < 3; ++it) {
      const VectorXd resid = rhs - apply(sol);
      if (resid.lpNorm<Eigen::Infinity>() <= 1e-14 * (1.0 + rhs.lpNorm<Eigen::Infinity>())) break;
      sol += raw_solve(resid);
    }
    dx = sol.head(n);
    dy = sol.tail(me);
  }

 private:
  static constexpr double kReg = 1e-10;

  VectorXd raw_solve(const VectorXd& rhs) const {
    if (dense_) return dense_lu_.solve(rhs);
    return sparse_lu_.solve(rhs);
  }

  // Unregularized KKT operator.
  VectorXd apply(const VectorXd& v) const {
    const auto n = s_.p.size();
    const auto me = s_.b.size();
    const VectorXd x = v.head(n), y = v.tail(me);
    VectorXd out(n + me);
    out.head(n) = s_.p.cwiseProduct(x) + gt_ * (w_.cwiseProduct(s_.g * x)) + s_.a.transpose() * y;
    out.tail(me) = s_.a * x;
    return out;
  }

  const StandardForm& s_;
  bool dense_;
  SpMat gt_;
  VectorXd w_;
  Eigen::PartialPivLU<Eigen::MatrixXd> dense_lu_;
  Eigen::SparseLU<SpMat, Eigen::COLAMDOrdering<int>> sparse_lu_;
};

double max_step(const VectorXd& v, const VectorXd& dv) {
  double alpha = 1.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (dv(i) < 0.0) alpha = std::min(alpha, -v(i) / dv(i));
  }
  return alpha;
}

double inf_norm(const VectorXd& v) { return v.size() == 0 ? 0.0 : v.lpNorm<Eigen::Infinity>(); }

// Inequalities whose multiplier dominates their slack are taken as active and
// appended to the equality block; the resulting equality-constrained QP is
// solved directly. Multipliers of active rows must come out non-negative.
// Equality-constrained solve with the rows in `active` held at their bounds.
bool solve_active(const StandardForm& s, const Eigen::SparseMatrix<double, Eigen::RowMajor>& grow,
                  const std::vector<Eigen::Index>& active, bool dense, VectorXd& px, VectorXd& ye) {
  const auto me = s.b.size();
  StandardForm e;
  e.p = s.p;
  e.q = s.q;
  e.b.resize(me + static_cast<Eigen::Index>(active.size()));
  e.b.head(me) = s.b;
  std::vector<Eigen::Triplet<double>> trip;
  for (Eigen::Index c = 0; c < s.a.outerSize(); ++c)
    for (SpMat::InnerIterator it(s.a, c); it; ++it)
      trip.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
  for (std::size_t r = 0; r < active.size(); ++r) {
    const auto row = me + static_cast<Eigen::Index>(r);
    e.b(row) = s.h(active[r]);
    for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(grow, active[r]); it; ++it)
      trip.emplace_back(static_cast<int>(row), static_cast<int>(it.col()), it.value());
  }
  e.a.resize(e.b.size(), s.p.size());
  e.a.setFromTriplets(trip.begin(), trip.end());
  e.g.resize(0, s.p.size());
  e.h.resize(0);
  KktSystem k(e, dense);
  if (!k.factor(VectorXd())) return false;
  k.solve(-s.q, e.b, px, ye);
  return px.allFinite() && ye.allFinite();
}

// Recovers an exact vertex-style solution from the interior point. The initial
// guess takes rows whose multiplier exceeds their slack; degenerate rows are
// then dropped (most negative multiplier first) and violated rows re-added.
bool polish(const StandardForm& s, const VectorXd& z, const VectorXd& sl,
            bool dense, VectorXd& px, VectorXd& py, VectorXd& pz) {
  const auto me = s.b.size();
  const auto mi = s.h.size();
  const Eigen::SparseMatrix<double, Eigen::RowMajor> grow(s.g);
  std::vector<char> in(static_cast<std::size_t>(mi), 0);
  for (Eigen::Index k = 0; k < mi; ++k) in[static_cast<std::size_t>(k)] = z(k) > sl(k);
  for (int round = 0; round < 60; ++round) {
    std::vector<Eigen::Index> active;
    for (Eigen::Index k = 0; k < mi; ++k)
      if (in[static_cast<std::size_t>(k)]) active.push_back(k);
    VectorXd ye;
    if (!solve_active(s, grow, active, dense, px, ye)) return false;

    const VectorXd gx = s.g * px;
    bool violated = false;
    for (Eigen::Index k = 0; k < mi; ++k)
      if (!in[static_cast<std::size_t>(k)] && gx(k) > s.h(k) + 1e-9 * (1.0 + std::abs(s.h(k)))) {
        in[static_cast<std::size_t>(k)] = 1;
        violated = true;
      }
    if (violated) continue;

    double most_negative = 0.0;
    Eigen::Index drop = -1;
    for (std::size_t r = 0; r < active.size(); ++r) {
      const double m = ye(me + static_cast<Eigen::Index>(r));
      if (m < most_negative) {
        most_negative = m;
        drop = active[r];
      }
    }
    if (drop >= 0) {
      in[static_cast<std::size_t>(drop)] = 0;
      continue;
    }
    py = ye.head(me);
    pz = VectorXd::Zero(mi);
    for (std::size_t r = 0; r < active.size(); ++r) pz(active[r]) = ye(me + static_cast<Eigen::Index>(r));
    return true;
  }
  return false;
}

}  // namespace

KktCertificate kkt_certificate(const QpProblem& prob, const std::vector<double>& x,
                               const std::vector<double>& eq_duals,
                               const std::vector<double>& range_duals,
                               const std::vector<double>& bound_duals) {
  const std::size_t n = prob.variables();
  KktCertificate c;
  std::vector<double> grad(n);
  for (std::size_t i = 0; i < n; ++i) grad[i] = prob.quadratic[i] * x[i] + prob.linear[i];

  for (std::size_t r = 0; r < prob.equalities.size(); ++r) {
    const auto& row = prob.equalities[r];
    c.primal_residual = std::max(c.primal_residual, std::abs(row_dot(row.terms, x) - row.rhs));
    for (const auto& t : row.terms) grad[t.var] += t.coef * eq_duals[r];
  }
  auto side_terms = [&](double value, double lo, double hi, double dual) {
    c.primal_residual = std::max({c.primal_residual, value - hi, lo - value});
    if (lo == hi) return;  // equality: multiplier sign is free
    if (dual > 0.0) {
      c.complementarity = std::max(c.complementarity, dual * std::abs(hi - value));
    } else if (dual < 0.0) {
      c.complementarity = std::max(c.complementarity, -dual * std::abs(value - lo));
    }
  };
  for (std::size_t r = 0; r < prob.ranges.size(); ++r) {
    const auto& row = prob.ranges[r];
    side_terms(row_dot(row.terms, x), row.lower, row.upper, range_duals[r]);
    for (const auto& t : row.terms) grad[t.var] += t.coef * range_duals[r];
  }
  for (std::size_t i = 0; i < n; ++i) {
    side_terms(x[i], prob.lower[i], prob.upper[i], bound_duals[i]);
    grad[i] += bound_duals[i];
    c.dual_residual = std::max(c.dual_residual, std::abs(grad[i]));
  }
  return c;
}

QpResult solve_qp(const QpProblem& prob, const QpSettings& settings) {
  prob.validate();
  QpResult result;
  std::string infeasible;
  const StandardForm s = standardize(prob, infeasible);
  const std::size_t n = prob.variables();
  if (!infeasible.empty()) {
    result.status = QpStatus::Infeasible;
    result.message = infeasible;
    return result;
  }
  const auto nv = static_cast<Eigen::Index>(n);
  const auto me = s.b.size();
  const auto mi = s.h.size();
  const bool dense = static_cast<std::size_t>(nv + me) <= settings.dense_threshold;
  KktSystem kkt(s, dense);

  VectorXd x(nv), y(me), z(mi), sl(mi);
  // Initial point: least-squares fit of the inequality system, then shift the
  // slacks and multipliers into the positive orthant.
  if (!kkt.factor(VectorXd::Ones(mi))) {
    result.status = QpStatus::IterationLimit;
    result.message = "KKT factorization failed";
    return result;
  }
  kkt.solve(-s.q + s.g.transpose() * s.h, s.b, x, y);
  if (mi > 0) {
    sl = s.h - s.g * x;
    z = -sl;
    const double ap = -sl.minCoeff();
    if (ap >= 0.0) sl.array() += 1.0 + ap;
    const double ad = -z.minCoeff();
    if (ad >= 0.0) z.array() += 1.0 + ad;
  }

  auto to_result = [&](const VectorXd& xv, const VectorXd& yv, const VectorXd& zv, QpResult& r) {
    r.x.assign(xv.data(), xv.data() + nv);
    r.eq_duals.assign(prob.equalities.size(), 0.0);
    r.range_duals.assign(prob.ranges.size(), 0.0);
    r.bound_duals.assign(n, 0.0);
    for (Eigen::Index k = 0; k < me; ++k) {
      const auto& o = s.eq_origin[static_cast<std::size_t>(k)];
      if (o.kind == EqOrigin::Equality) r.eq_duals[o.index] = yv(k);
      if (o.kind == EqOrigin::Range) r.range_duals[o.index] = yv(k);
      if (o.kind == EqOrigin::Box) r.bound_duals[o.index] = yv(k);
    }
    for (Eigen::Index k = 0; k < mi; ++k) {
      const auto& o = s.ineq_origin[static_cast<std::size_t>(k)];
      if (o.kind == IneqOrigin::Range) r.range_duals[o.index] += o.sign * zv(k);
      if (o.kind == IneqOrigin::Box) r.bound_duals[o.index] += o.sign * zv(k);
    }
    r.objective = prob.objective(r.x);
    r.kkt = kkt_certificate(prob, r.x, r.eq_duals, r.range_duals, r.bound_duals);
  };
  auto finish = [&](QpStatus status, int iters) {
    result.status = status;
    result.iterations = iters;
    to_result(x, y, z, result);
    if (status != QpStatus::Solved || mi == 0) return result;
    // Polish: re-solve with the guessed active set held at equality. Accepted
    // only when its certificate on the original problem is no worse.
    VectorXd px, py, pz;
    if (!polish(s, z, sl, dense, px, py, pz)) return result;
    QpResult polished = result;
    to_result(px, py, pz, polished);
    if (polished.kkt.worst() <= result.kkt.worst()) result = std::move(polished);
    return result;
  };

  if (mi == 0) return finish(QpStatus::Solved, 0);

  const double m = static_cast<double>(mi);
  // Residuals are measured against the size of the data they come from.
  const double dual_scale = 1.0 + inf_norm(s.q);
  const double eq_scale = 1.0 + inf_norm(s.b);
  const VectorXd ineq_scale = (s.h.cwiseAbs().array() + 1.0).matrix();
  auto merit = [&](const VectorXd& rd, const VectorXd& rp, const VectorXd& rg) {
    return std::max({inf_norm(rd) / dual_scale, inf_norm(rp) / eq_scale,
                     inf_norm(rg.cwiseQuotient(ineq_scale)),
                     (sl.cwiseProduct(z)).maxCoeff() / dual_scale});
  };

  struct Iterate {
    VectorXd x, y, z, s;
    double merit = std::numeric_limits<double>::infinity();
    int iter = 0;
  } best;
  auto fall_back = [&](const std::string& why, int iter) {
    if (best.merit <= 100.0 * settings.tol) {
      x = best.x;
      y = best.y;
      z = best.z;
      sl = best.s;
      return finish(QpStatus::Solved, best.iter);
    }
    result.message = why;
    return finish(QpStatus::IterationLimit, iter);
  };

  VectorXd dx, dy, dz, ds;
  int farkas_streak = 0;
  for (int iter = 0; iter < settings.max_iter; ++iter) {
    const VectorXd rd = s.p.cwiseProduct(x) + s.q + s.a.transpose() * y + s.g.transpose() * z;
    const VectorXd rp = s.a * x - s.b;
    const VectorXd rg = s.g * x + sl - s.h;
    const double mu = sl.dot(z) / m;
    const double score = merit(rd, rp, rg);
    if (!std::isfinite(score)) return fall_back("numerical breakdown", iter);
    if (score < best.merit) best = {x, y, z, sl, score, iter};
    if (score <= settings.tol) return finish(QpStatus::Solved, iter);
    // Past this point the Newton systems are too ill-conditioned to help.
    if (mu < 1e-6 * settings.tol * dual_scale) return fall_back("stalled near the optimum", iter);

    // Farkas certificate: A'y + G'z ~ 0 with b'y + h'z < 0 while the
    // multipliers keep growing and the primal residual does not vanish.
    const double size = std::max(inf_norm(y), inf_norm(z));
    bool farkas = false;
    if (size > 1e6 && std::max(inf_norm(rp) / eq_scale, inf_norm(rg.cwiseQuotient(ineq_scale))) > settings.tol) {
      const VectorXd ray = s.a.transpose() * y + s.g.transpose() * z;
      const double gap = (s.b.dot(y) + s.h.dot(z)) / size;
      farkas = inf_norm(ray) / size < 1e-7 && gap < -1e-7;
    }
    farkas_streak = farkas ? farkas_streak + 1 : 0;
    if (farkas_streak >= 3) {
      result.message = "primal infeasibility certificate found";
      finish(QpStatus::Infeasible, iter);
      return result;
    }

    const VectorXd w = z.cwiseQuotient(sl);
    if (!kkt.factor(w)) return fall_back("KKT factorization failed", iter);
    auto direction = [&](const VectorXd& rc) {
      // dz = W (G dx + rg) - S^{-1} rc ;  ds = -Z^{-1}(rc + S dz)
      const VectorXd t = w.cwiseProduct(rg) - rc.cwiseQuotient(sl);
      kkt.solve(-rd - s.g.transpose() * t, -rp, dx, dy);
      dz = w.cwiseProduct(s.g * dx + rg) - rc.cwiseQuotient(sl);
      ds = -(rc + sl.cwiseProduct(dz)).cwiseQuotient(z);
    };

    // Predictor.
    direction(sl.cwiseProduct(z));
    const double a_aff = std::min(max_step(sl, ds), max_step(z, dz));
    const double mu_aff = (sl + a_aff * ds).dot(z + a_aff * dz) / m;
    const double sigma = std::pow(std::clamp(mu_aff / mu, 0.0, 1.0), 3);

    // Corrector.
    const VectorXd rc = sl.cwiseProduct(z) + ds.cwiseProduct(dz) - VectorXd::Constant(mi, sigma * mu);
    direction(rc);
    const double alpha = std::min(1.0, 0.99 * std::min(max_step(sl, ds), max_step(z, dz)));
    x += alpha * dx;
    y += alpha * dy;
    z += alpha * dz;
    sl += alpha * ds;
  }
  return fall_back("iteration limit reached", settings.max_iter);
}

}  // namespace dlrgrid::qp
