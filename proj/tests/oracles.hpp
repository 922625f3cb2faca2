#pragma once

// Straightforward loop implementations used as references by the unit tests
// and the acceptance binary. None of them share code with the library.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <limits>

#include "dlrgrid/matrix.hpp"
#include "dlrgrid/qp.hpp"

namespace oracle {

using dlrgrid::Matrix;

inline double ace(const Matrix& lo, const Matrix& hi, const Matrix& y, double alpha) {
  std::size_t inside = 0;
  for (std::size_t i = 0; i < y.rows(); ++i)
    for (std::size_t t = 0; t < y.cols(); ++t)
      if (lo(i, t) <= y(i, t) && y(i, t) <= hi(i, t)) ++inside;
  const double cov = static_cast<double>(inside) / static_cast<double>(y.size());
  return std::abs(cov - (1.0 - alpha)) * 100.0;
}

inline std::vector<double> line_means(const Matrix& y) {
  std::vector<double> m(y.rows(), 0.0);
  for (std::size_t i = 0; i < y.rows(); ++i) {
    for (std::size_t t = 0; t < y.cols(); ++t) m[i] += y(i, t);
    m[i] /= static_cast<double>(y.cols());
  }
  return m;
}

inline double pinaw(const Matrix& lo, const Matrix& hi, const Matrix& y) {
  const auto norm = line_means(y);
  double s = 0.0;
  for (std::size_t i = 0; i < y.rows(); ++i)
    for (std::size_t t = 0; t < y.cols(); ++t) s += (hi(i, t) - lo(i, t)) / norm[i];
  return 100.0 * s / static_cast<double>(y.size());
}

inline double interval_point(double lo, double hi, double y, double alpha) {
  if (y < lo) return -2.0 * alpha * (hi - lo) - 4.0 * (lo - y);
  if (y > hi) return -2.0 * alpha * (hi - lo) - 4.0 * (y - hi);
  return -2.0 * alpha * (hi - lo);
}

inline double interval_score(const Matrix& lo, const Matrix& hi, const Matrix& y, double alpha) {
  const auto norm = line_means(y);
  double s = 0.0;
  for (std::size_t i = 0; i < y.rows(); ++i)
    for (std::size_t t = 0; t < y.cols(); ++t)
      s += interval_point(lo(i, t), hi(i, t), y(i, t), alpha) / norm[i];
  return 100.0 * s / static_cast<double>(y.size());
}

inline double quantile_score(const std::vector<Matrix>& f, const std::vector<double>& levels,
                             const Matrix& y) {
  const auto norm = line_means(y);
  double s = 0.0;
  for (std::size_t q = 0; q < levels.size(); ++q)
    for (std::size_t i = 0; i < y.rows(); ++i)
      for (std::size_t t = 0; t < y.cols(); ++t) {
        const double d = y(i, t) - f[q](i, t);
        const double l = d >= 0.0 ? levels[q] * d : (levels[q] - 1.0) * d;
        s += l / norm[i];
      }
  return 100.0 * s / static_cast<double>(y.size() * levels.size());
}

inline double cvar(std::vector<double> costs, double beta) {
  std::sort(costs.begin(), costs.end(), std::greater<>());
  const auto k = static_cast<std::size_t>(std::ceil(beta * static_cast<double>(costs.size())));
  double s = 0.0;
  for (std::size_t i = 0; i < k; ++i) s += costs[i];
  return s / static_cast<double>(k);
}

/// Line graph by checking every pair of edges for a shared endpoint.
inline std::vector<std::pair<std::size_t, std::size_t>> line_graph_edges(
    const std::vector<std::pair<int, int>>& edges) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i < edges.size(); ++i)
    for (std::size_t j = i + 1; j < edges.size(); ++j) {
      const auto [a, b] = edges[i];
      const auto [c, d] = edges[j];
      if (a == c || a == d || b == c || b == d) out.emplace_back(i, j);
    }
  return out;
}

/// Boolean pattern of I + A + ... + A^k from dense powers.
inline std::vector<std::vector<bool>> reach_within(const std::vector<std::vector<int>>& adj, int k) {
  const std::size_t n = adj.size();
  std::vector<std::vector<double>> power(n, std::vector<double>(n, 0.0)), acc = power;
  for (std::size_t i = 0; i < n; ++i) power[i][i] = acc[i][i] = 1.0;
  for (int step = 0; step < k; ++step) {
    std::vector<std::vector<double>> next(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t p = 0; p < n; ++p)
        if (power[i][p] != 0.0)
          for (std::size_t j = 0; j < n; ++j) next[i][j] += power[i][p] * adj[p][j];
    power = next;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) acc[i][j] += power[i][j];
  }
  std::vector<std::vector<bool>> out(n, std::vector<bool>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i][j] = acc[i][j] > 0.0;
  return out;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// One step of a textbook LSTM on a single sequence. Weights are laid out
/// per gate (f, i, o, g): w[g] is d_in x d_h, u[g] is d_h x d_h, b[g] has d_h.
struct LstmWeights {
  std::vector<Matrix> w, u, b;
};

inline void lstm_step(const std::vector<double>& x, std::vector<double>& h, std::vector<double>& c,
                      const LstmWeights& p) {
  const std::size_t dh = h.size();
  std::vector<std::vector<double>> gate(4, std::vector<double>(dh));
  for (std::size_t g = 0; g < 4; ++g)
    for (std::size_t j = 0; j < dh; ++j) {
      double z = p.b[g](0, j);
      for (std::size_t k = 0; k < x.size(); ++k) z += x[k] * p.w[g](k, j);
      for (std::size_t k = 0; k < dh; ++k) z += h[k] * p.u[g](k, j);
      gate[g][j] = g == 3 ? std::tanh(z) : sigmoid(z);
    }
  for (std::size_t j = 0; j < dh; ++j) {
    c[j] = gate[0][j] * c[j] + gate[1][j] * gate[3][j];
    h[j] = gate[2][j] * std::tanh(c[j]);
  }
}

/// Worst KKT residual of a QP solution: primal violation, stationarity and
/// complementarity, all absolute.
inline double qp_kkt(const dlrgrid::qp::QpProblem& p, const dlrgrid::qp::QpResult& r) {
  const std::size_t n = p.variables();
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i) g[i] = p.quadratic[i] * r.x[i] + p.linear[i];
  double worst = 0.0;
  auto dot = [&](const std::vector<dlrgrid::qp::Term>& terms) {
    double v = 0.0;
    for (const auto& t : terms) v += t.coef * r.x[t.var];
    return v;
  };
  auto side = [&](double v, double lo, double hi, double dual) {
    worst = std::max({worst, v - hi, lo - v});
    if (lo == hi) return;
    // Positive multipliers belong to the upper side, negative to the lower.
    if (dual > 0.0) worst = std::max(worst, std::isinf(hi) ? dual : dual * (hi - v));
    if (dual < 0.0) worst = std::max(worst, std::isinf(lo) ? -dual : -dual * (v - lo));
  };
  for (std::size_t e = 0; e < p.equalities.size(); ++e) {
    worst = std::max(worst, std::abs(dot(p.equalities[e].terms) - p.equalities[e].rhs));
    for (const auto& t : p.equalities[e].terms) g[t.var] += t.coef * r.eq_duals[e];
  }
  for (std::size_t k = 0; k < p.ranges.size(); ++k) {
    side(dot(p.ranges[k].terms), p.ranges[k].lower, p.ranges[k].upper, r.range_duals[k]);
    for (const auto& t : p.ranges[k].terms) g[t.var] += t.coef * r.range_duals[k];
  }
  for (std::size_t i = 0; i < n; ++i) {
    side(r.x[i], p.lower[i], p.upper[i], r.bound_duals[i]);
    worst = std::max(worst, std::abs(g[i] + r.bound_duals[i]));
  }
  return worst;
}

/// Minimum of a strictly convex QP by enumerating every candidate active set
/// (up to n constraint sides held at equality) and keeping the best feasible
/// stationary point. Exponential, so only for a handful of variables.
inline double qp_enumerate(const dlrgrid::qp::QpProblem& p, std::vector<double>* best_x = nullptr) {
  const std::size_t n = p.variables();
  struct Side {
    Eigen::VectorXd a;
    double b;
  };
  std::vector<Side> eqs, sides;
  auto dense = [&](const std::vector<dlrgrid::qp::Term>& terms) {
    Eigen::VectorXd a = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    for (const auto& t : terms) a(static_cast<Eigen::Index>(t.var)) += t.coef;
    return a;
  };
  for (const auto& e : p.equalities) eqs.push_back({dense(e.terms), e.rhs});
  std::vector<std::pair<Eigen::VectorXd, std::pair<double, double>>> rows;
  for (const auto& r : p.ranges) rows.push_back({dense(r.terms), {r.lower, r.upper}});
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::VectorXd a = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    a(static_cast<Eigen::Index>(i)) = 1.0;
    rows.push_back({a, {p.lower[i], p.upper[i]}});
  }
  for (const auto& [a, lh] : rows) {
    if (std::isfinite(lh.first)) sides.push_back({a, lh.first});
    if (std::isfinite(lh.second) && lh.second != lh.first) sides.push_back({a, lh.second});
  }
  auto feasible = [&](const Eigen::VectorXd& x) {
    for (const auto& e : eqs)
      if (std::abs(e.a.dot(x) - e.b) > 1e-9 * (1.0 + std::abs(e.b))) return false;
    for (const auto& [a, lh] : rows) {
      const double v = a.dot(x);
      if (v < lh.first - 1e-9 * (1.0 + std::abs(lh.first))) return false;
      if (v > lh.second + 1e-9 * (1.0 + std::abs(lh.second))) return false;
    }
    return true;
  };
  double best = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> chosen;
  auto evaluate = [&]() {
    std::vector<const Side*> act;
    for (const auto& e : eqs) act.push_back(&e);
    for (std::size_t k : chosen) act.push_back(&sides[k]);
    const auto m = static_cast<Eigen::Index>(act.size());
    const auto nn = static_cast<Eigen::Index>(n);
    Eigen::MatrixXd k = Eigen::MatrixXd::Zero(nn + m, nn + m);
    Eigen::VectorXd rhs(nn + m);
    for (Eigen::Index i = 0; i < nn; ++i) {
      k(i, i) = p.quadratic[static_cast<std::size_t>(i)];
      rhs(i) = -p.linear[static_cast<std::size_t>(i)];
    }
    for (Eigen::Index j = 0; j < m; ++j) {
      k.block(0, nn + j, nn, 1) = act[static_cast<std::size_t>(j)]->a;
      k.block(nn + j, 0, 1, nn) = act[static_cast<std::size_t>(j)]->a.transpose();
      rhs(nn + j) = act[static_cast<std::size_t>(j)]->b;
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(k);
    if (!lu.isInvertible()) return;
    const Eigen::VectorXd x = lu.solve(rhs).head(nn);
    if (!feasible(x)) return;
    double f = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double xi = x(static_cast<Eigen::Index>(i));
      f += 0.5 * p.quadratic[i] * xi * xi + p.linear[i] * xi;
    }
    if (f < best) {
      best = f;
      if (best_x) best_x->assign(x.data(), x.data() + nn);
    }
  };
  // Depth-first over subsets of sides, size bounded by n - equalities.
  const std::size_t cap = n >= eqs.size() ? n - eqs.size() : 0;
  auto recurse = [&](auto&& self, std::size_t start) -> void {
    evaluate();
    if (chosen.size() == cap) return;
    for (std::size_t k = start; k < sides.size(); ++k) {
      chosen.push_back(k);
      self(self, k + 1);
      chosen.pop_back();
    }
  };
  recurse(recurse, 0);
  return best;
}

}  // namespace oracle
