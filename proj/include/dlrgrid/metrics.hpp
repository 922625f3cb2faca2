#pragma once

#include <span>
#include <vector>

#include "dlrgrid/matrix.hpp"

// Probabilistic forecast quality (ACE, PINAW, IS, QS) and tail cost (CVaR).
// Matrices are |E| x T (line x hour). Normalized metrics divide each line by
// a positive normalizer (by default the line's mean true rating) and report
// percentages.

namespace dlrgrid::metrics {

struct IntervalSet {
  Matrix lower;
  Matrix upper;
  double alpha = 0.1;  // nominal coverage 1 - alpha

  /// Throws InvalidArgument unless lower <= upper and alpha in (0, 1).
  void validate() const;
};

/// Mean true value per line; the default normalizer.
std::vector<double> line_normalizer(const Matrix& truth);

/// |coverage - (1 - alpha)| * 100 with closed bounds.
double ace(const IntervalSet& intervals, const Matrix& truth);

double pinaw(const IntervalSet& intervals, std::span<const double> normalizer);
double pinaw(const IntervalSet& intervals, const Matrix& truth);

/// Score of one point: -2*alpha*width, minus 4x the miss distance outside.
double interval_score_point(double lower, double upper, double y, double alpha);
double interval_score(const IntervalSet& intervals, const Matrix& truth,
                      std::span<const double> normalizer);
double interval_score(const IntervalSet& intervals, const Matrix& truth);

/// forecasts[q] is the |E| x T forecast at levels[q].
double quantile_score(std::span<const Matrix> forecasts, std::span<const double> levels,
                      const Matrix& truth, std::span<const double> normalizer);
double quantile_score(std::span<const Matrix> forecasts, std::span<const double> levels,
                      const Matrix& truth);

/// Mean of the worst ceil(beta * N) values.
double cvar(std::span<const double> costs, double beta = 0.10);

}  // namespace dlrgrid::metrics
