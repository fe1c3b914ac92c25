#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "debias/data_model.hpp"

namespace debias {

// OLS fit of y_pred on y_true over the calibration pairs.
struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  std::vector<double> residuals;  // y_pred - slope * y_true - intercept
  double r_squared = 0.0;
  double rss = 0.0;
};

// Requires >= 3 pairs and non-constant y_true.
LinearFit fit_linear_calibration(std::span<const CalibrationPair> pairs);

// Mean squared residual of the full fit (intercept included), 1/n divisor.
double estimate_noise_variance(std::span<const CalibrationPair> pairs, const LinearFit& fit);

// Rejects non-positive slopes: predictions anti-correlated with (or
// unrelated to) the truth cannot be inverted.
CalibrationArtifact build_artifact(const LinearFit& fit, double sigma2, std::int64_t n_cal,
                                   SigmaSource sigma_source);

}  // namespace debias
