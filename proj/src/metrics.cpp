#include "dlrgrid/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "dlrgrid/errors.hpp"
#include "dlrgrid/pinball.hpp"

namespace dlrgrid::metrics {

namespace {

void check_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeMismatch(std::string(what) + ": shapes " + a.shape_string() + " and " +
                        b.shape_string());
  }
}

void check_normalizer(std::span<const double> normalizer, std::size_t lines) {
  if (normalizer.size() != lines) {
    throw ShapeMismatch("normalizer has " + std::to_string(normalizer.size()) +
                        " entries for " + std::to_string(lines) + " lines");
  }
  for (std::size_t i = 0; i < normalizer.size(); ++i) {
    if (!(normalizer[i] > 0.0)) {
      throw ZeroNormalizer("normalizer for line position " + std::to_string(i) +
                           " is not positive");
    }
  }
}

}  // namespace

void IntervalSet::validate() const {
  check_shape(lower, upper, "interval bounds");
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgument("alpha must be in (0, 1)");
  for (std::size_t i = 0; i < lower.size(); ++i) {
    if (lower.flat()[i] > upper.flat()[i]) {
      throw InvalidArgument("interval lower bound exceeds upper bound");
    }
  }
}

std::vector<double> line_normalizer(const Matrix& truth) {
  std::vector<double> out(truth.rows(), 0.0);
  for (std::size_t i = 0; i < truth.rows(); ++i) {
    for (double v : truth.row(i)) out[i] += v;
    out[i] /= static_cast<double>(truth.cols());
  }
  return out;
}

double ace(const IntervalSet& iv, const Matrix& truth) {
  iv.validate();
  check_shape(iv.lower, truth, "ace");
  std::size_t covered = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double y = truth.flat()[i];
    if (iv.lower.flat()[i] <= y && y <= iv.upper.flat()[i]) ++covered;
  }
  const double coverage = static_cast<double>(covered) / static_cast<double>(truth.size());
  return std::abs(coverage - (1.0 - iv.alpha)) * 100.0;
}

double pinaw(const IntervalSet& iv, std::span<const double> normalizer) {
  iv.validate();
  check_normalizer(normalizer, iv.lower.rows());
  double total = 0.0;
  for (std::size_t i = 0; i < iv.lower.rows(); ++i) {
    for (std::size_t t = 0; t < iv.lower.cols(); ++t) {
      total += (iv.upper(i, t) - iv.lower(i, t)) / normalizer[i];
    }
  }
  return 100.0 * total / static_cast<double>(iv.lower.size());
}

double pinaw(const IntervalSet& iv, const Matrix& truth) {
  check_shape(iv.lower, truth, "pinaw");
  return pinaw(iv, line_normalizer(truth));
}

double interval_score_point(double lower, double upper, double y, double alpha) {
  double score = -2.0 * alpha * (upper - lower);
  if (y < lower) {
    score -= 4.0 * (lower - y);
  } else if (y > upper) {
    score -= 4.0 * (y - upper);
  }
  return score;
}

double interval_score(const IntervalSet& iv, const Matrix& truth,
                      std::span<const double> normalizer) {
  iv.validate();
  check_shape(iv.lower, truth, "interval_score");
  check_normalizer(normalizer, truth.rows());
  double total = 0.0;
  for (std::size_t i = 0; i < truth.rows(); ++i) {
    for (std::size_t t = 0; t < truth.cols(); ++t) {
      total += interval_score_point(iv.lower(i, t), iv.upper(i, t), truth(i, t), iv.alpha) /
               normalizer[i];
    }
  }
  return 100.0 * total / static_cast<double>(truth.size());
}

double interval_score(const IntervalSet& iv, const Matrix& truth) {
  return interval_score(iv, truth, line_normalizer(truth));
}

double quantile_score(std::span<const Matrix> forecasts, std::span<const double> levels,
                      const Matrix& truth, std::span<const double> normalizer) {
  if (forecasts.empty() || forecasts.size() != levels.size()) {
    throw InvalidArgument("quantile_score needs one forecast per level and at least one level");
  }
  check_normalizer(normalizer, truth.rows());
  double total = 0.0;
  for (std::size_t q = 0; q < levels.size(); ++q) {
    if (!(levels[q] > 0.0 && levels[q] < 1.0)) {
      throw LevelOutOfRange("quantile level " + std::to_string(levels[q]) + " not in (0, 1)");
    }
    check_shape(forecasts[q], truth, "quantile_score");
    for (std::size_t i = 0; i < truth.rows(); ++i) {
      for (std::size_t t = 0; t < truth.cols(); ++t) {
        total += pinball(levels[q], truth(i, t), forecasts[q](i, t)) / normalizer[i];
      }
    }
  }
  return 100.0 * total / static_cast<double>(truth.size() * levels.size());
}

double quantile_score(std::span<const Matrix> forecasts, std::span<const double> levels,
                      const Matrix& truth) {
  return quantile_score(forecasts, levels, truth, line_normalizer(truth));
}

double cvar(std::span<const double> costs, double beta) {
  if (costs.empty()) throw EmptyCosts("cvar of an empty cost list");
  if (!(beta > 0.0 && beta < 1.0)) throw InvalidArgument("cvar beta must be in (0, 1)");
  std::vector<double> sorted(costs.begin(), costs.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  // The small offset keeps beta*N = 10.000000000000002 from rounding up to 11.
  const auto tail = static_cast<std::size_t>(
      std::max(1.0, std::ceil(beta * static_cast<double>(sorted.size()) - 1e-9)));
  double total = 0.0;
  for (std::size_t i = 0; i < tail; ++i) total += sorted[i];
  return total / static_cast<double>(tail);
}

}  // namespace dlrgrid::metrics
