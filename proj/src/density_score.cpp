#include "debias/density_score.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "debias/csv.hpp"
#include "debias/errors.hpp"

namespace debias {

namespace {

// Above this size the peak density is searched on a subset of order
// statistics and then refined locally, instead of all n^2 kernel pairs.
constexpr std::size_t kExactPeakLimit = 4096;
constexpr std::size_t kPeakCandidates = 1024;

struct WeightedMoments {
  double mean = 0.0;
  double sd = 0.0;
  double n_eff = 0.0;
};

WeightedMoments moments(std::span<const double> x, std::span<const double> w) {
  WeightedMoments m;
  double sw = 0.0, sw2 = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double wi = w.empty() ? 1.0 : w[i];
    sw += wi;
    sw2 += wi * wi;
    m.mean += wi * x[i];
  }
  m.mean /= sw;
  double ss = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double wi = w.empty() ? 1.0 : w[i];
    const double d = x[i] - m.mean;
    ss += wi * d * d;
  }
  m.n_eff = sw * sw / sw2;
  // Reduces to the usual (n - 1) divisor for uniform weights.
  m.sd = m.n_eff > 1.0 ? std::sqrt(ss / sw * m.n_eff / (m.n_eff - 1.0)) : 0.0;
  return m;
}

void check_fit_input(std::span<const double> samples) {
  if (samples.size() < 2) {
    throw ValidationError("KDE needs at least 2 samples, got " +
                          std::to_string(samples.size()));
  }
  for (double s : samples) {
    if (!std::isfinite(s)) throw ValidationError("KDE samples must be finite");
  }
}

}  // namespace

double scott_bandwidth(std::span<const double> samples) {
  check_fit_input(samples);
  const auto m = moments(samples, {});
  return m.sd * std::pow(static_cast<double>(samples.size()), -0.2);
}

ScoreModel ScoreModel::fit(std::span<const double> samples, const ScoreOptions& options) {
  return fit_weighted(samples, {}, options);
}

ScoreModel ScoreModel::fit_weighted(std::span<const double> samples,
                                    std::span<const double> weights,
                                    const ScoreOptions& options) {
  check_fit_input(samples);
  if (!weights.empty() && weights.size() != samples.size()) {
    throw ValidationError("KDE weights must match the sample size");
  }
  const auto m = moments(samples, weights);
  const double h = m.sd * std::pow(m.n_eff, -0.2);
  if (!(h > 0.0)) {
    throw ValidationError(
        "KDE bandwidth is zero: all samples are identical, so the density has no "
        "smooth score");
  }
  return ScoreModel(std::vector<double>(samples.begin(), samples.end()), h, options,
                    std::vector<double>(weights.begin(), weights.end()));
}

ScoreModel::ScoreModel(std::vector<double> samples, double bandwidth,
                       const ScoreOptions& options, std::vector<double> weights)
    : samples_(std::move(samples)), weights_(std::move(weights)), bandwidth_(bandwidth) {
  if (samples_.empty()) throw ValidationError("KDE needs at least one sample");
  if (!(bandwidth_ > 0.0) || !std::isfinite(bandwidth_)) {
    throw ValidationError("KDE bandwidth must be positive and finite");
  }
  if (!weights_.empty()) {
    if (weights_.size() != samples_.size()) {
      throw ValidationError("KDE weights must match the sample size");
    }
    for (double w : weights_) {
      if (!(w > 0.0) || !std::isfinite(w)) {
        throw ValidationError("KDE weights must be positive and finite");
      }
    }
  }
  if (!(options.density_floor_frac >= 0.0 && options.density_floor_frac < 1.0)) {
    throw ValidationError("density_floor_frac must lie in [0, 1), got " +
                          csv::format_double(options.density_floor_frac));
  }
  floor_frac_ = options.density_floor_frac;
  clamp_ = options.score_clamp.value_or(2.0 / bandwidth_);
  if (!(clamp_ > 0.0)) throw ValidationError("score_clamp must be positive");

  total_weight_ = weights_.empty()
                      ? static_cast<double>(samples_.size())
                      : std::accumulate(weights_.begin(), weights_.end(), 0.0);
  peak_density_ = floor_frac_ > 0.0 ? compute_peak_density() : 0.0;
}

ScoreModel::KernelSums ScoreModel::sums(double y) const {
  const double inv_h = 1.0 / bandwidth_;
  // Shift exponents by the smallest squared distance so the nearest kernel
  // contributes exp(0).
  double min_sq = std::numeric_limits<double>::infinity();
  for (double s : samples_) {
    const double z = (y - s) * inv_h;
    min_sq = std::min(min_sq, z * z);
  }
  KernelSums out;
  out.log_scale = -0.5 * min_sq;
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    const double diff = samples_[i] - y;
    const double z = diff * inv_h;
    const double k = std::exp(-0.5 * (z * z - min_sq)) * (weights_.empty() ? 1.0 : weights_[i]);
    out.weight += k;
    out.moment += diff * k;
  }
  return out;
}

double ScoreModel::density(double y) const {
  const auto s = sums(y);
  const double norm = total_weight_ * bandwidth_ * std::sqrt(2.0 * std::numbers::pi);
  return s.weight * std::exp(s.log_scale) / norm;
}

double ScoreModel::score(double y) const {
  const auto s = sums(y);
  const double h2 = bandwidth_ * bandwidth_;
  double value = s.moment / (s.weight * h2);
  if (floor_frac_ > 0.0) {
    const double norm = total_weight_ * bandwidth_ * std::sqrt(2.0 * std::numbers::pi);
    const double threshold = floor_frac_ * peak_density_;
    // Compare in log space; both sums carry the factor exp(log_scale).
    const double log_density = std::log(s.weight) + s.log_scale - std::log(norm);
    if (log_density < std::log(threshold)) {
      // moment * exp(log_scale) / (norm * threshold) is the floored ratio.
      const double floored_den = threshold * norm;
      value = s.moment * std::exp(s.log_scale - std::log(floored_den)) / h2;
    }
  }
  return std::clamp(value, -clamp_, clamp_);
}

double ScoreModel::compute_peak_density() const {
  const std::size_t n = samples_.size();
  if (n <= kExactPeakLimit) {
    double best = 0.0;
    for (double s : samples_) best = std::max(best, density(s));
    return best;
  }
  std::vector<double> sorted = samples_;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t stride = (n + kPeakCandidates - 1) / kPeakCandidates;
  double best = 0.0;
  std::size_t best_idx = 0;
  for (std::size_t i = 0; i < n; i += stride) {
    const double d = density(sorted[i]);
    if (d > best) {
      best = d;
      best_idx = i;
    }
  }
  const std::size_t lo = best_idx >= stride ? best_idx - stride : 0;
  const std::size_t hi = std::min(n, best_idx + stride + 1);
  for (std::size_t i = lo; i < hi; ++i) best = std::max(best, density(sorted[i]));
  return best;
}

ScoreModel fit_kde(std::span<const double> samples, const ScoreOptions& options) {
  return ScoreModel::fit(samples, options);
}

double score_at(const ScoreModel& model, double y) { return model.score(y); }

double analytic_gaussian_score(double mean, double variance, double y) {
  if (!(variance > 0.0)) {
    throw ValidationError("Gaussian score needs variance > 0, got " +
                          csv::format_double(variance));
  }
  return (mean - y) / variance;
}

}  // namespace debias
