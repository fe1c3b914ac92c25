#include "debias/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "debias/csv.hpp"
#include "debias/errors.hpp"

namespace debias {

LinearFit fit_linear_calibration(std::span<const CalibrationPair> pairs) {
  const std::size_t n = pairs.size();
  if (n < 3) {
    throw ValidationError("calibration needs at least 3 pairs, got " + std::to_string(n));
  }
  double mean_true = 0.0, mean_pred = 0.0;
  for (const auto& p : pairs) {
    mean_true += p.y_true;
    mean_pred += p.y_pred;
  }
  mean_true /= static_cast<double>(n);
  mean_pred /= static_cast<double>(n);

  // Centered sums avoid cancellation on outcome scales like 0-100.
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (const auto& p : pairs) {
    const double dx = p.y_true - mean_true;
    const double dy = p.y_pred - mean_pred;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  if (!(sxx > 0.0)) {
    throw ValidationError(
        "degenerate calibration design: y_true is constant, so the shrinkage slope is "
        "not identified");
  }

  LinearFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = mean_pred - fit.slope * mean_true;
  fit.residuals.reserve(n);
  for (const auto& p : pairs) {
    const double e = p.y_pred - fit.slope * p.y_true - fit.intercept;
    fit.residuals.push_back(e);
    fit.rss += e * e;
  }
  fit.r_squared = syy > 0.0 ? std::clamp(1.0 - fit.rss / syy, 0.0, 1.0) : 1.0;
  return fit;
}

double estimate_noise_variance(std::span<const CalibrationPair> pairs, const LinearFit& fit) {
  if (pairs.size() != fit.residuals.size()) {
    throw ValidationError("noise variance: fit was not produced from these pairs");
  }
  double sum = 0.0;
  for (const auto& p : pairs) {
    const double e = p.y_pred - fit.slope * p.y_true - fit.intercept;
    sum += e * e;
  }
  return sum / static_cast<double>(pairs.size());
}

CalibrationArtifact build_artifact(const LinearFit& fit, double sigma2, std::int64_t n_cal,
                                   SigmaSource sigma_source) {
  if (!(fit.slope > 0.0)) {
    throw ValidationError("calibration slope is " + csv::format_double(fit.slope) +
                          ": predictions are anti-correlated with (or unrelated to) the "
                          "true outcome, so the shrinkage map cannot be inverted");
  }
  CalibrationArtifact a;
  a.k_hat = fit.slope;
  a.m_hat = fit.intercept;
  a.sigma2_hat = sigma2;
  a.n_cal = n_cal;
  a.sigma_source = sigma_source;
  a.validate();
  return a;
}

}  // namespace debias
