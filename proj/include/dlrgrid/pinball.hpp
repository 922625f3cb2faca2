#pragma once

namespace dlrgrid {

/// Pinball (quantile) loss of prediction `yhat` against truth `y` at level
/// `q`: q*(y - yhat) when yhat <= y, (1-q)*(yhat - y) otherwise. This single
/// kernel backs training, the tape primitive and the quantile score metric.
inline double pinball(double q, double y, double yhat) noexcept {
  return yhat <= y ? q * (y - yhat) : (1.0 - q) * (yhat - y);
}

/// Derivative with respect to yhat. Zero exactly at the kink.
inline double pinball_grad(double q, double y, double yhat) noexcept {
  if (yhat < y) return -q;
  if (yhat > y) return 1.0 - q;
  return 0.0;
}

}  // namespace dlrgrid
