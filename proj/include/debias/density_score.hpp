#pragma once

#include <limits>
#include <optional>
#include <span>
#include <vector>

namespace debias {

// Regularization of the KDE score in sparse regions.
struct ScoreOptions {
  // Densities below this fraction of the peak density (taken over the
  // sample points) have the score denominator floored at that level.
  // 0 disables the floor.
  double density_floor_frac = 1e-3;
  // Absolute bound on the returned score; nullopt means 2 / bandwidth.
  // Infinity disables clamping.
  std::optional<double> score_clamp;
};

// One-dimensional Gaussian kernel density estimate with an optionally
// weighted sample. Immutable after construction; evaluation is exact O(n)
// summation, no binning.
class ScoreModel {
 public:
  // Scott's rule bandwidth sd * n^(-1/5). With weights, sd is the weighted
  // standard deviation and n the Kish effective sample size.
  static ScoreModel fit(std::span<const double> samples, const ScoreOptions& options = {});
  static ScoreModel fit_weighted(std::span<const double> samples,
                                 std::span<const double> weights,
                                 const ScoreOptions& options = {});

  // Direct construction with a fixed bandwidth; empty `weights` means uniform.
  ScoreModel(std::vector<double> samples, double bandwidth, const ScoreOptions& options = {},
             std::vector<double> weights = {});

  double bandwidth() const { return bandwidth_; }
  double density_floor_frac() const { return floor_frac_; }
  double score_clamp() const { return clamp_; }
  const std::vector<double>& samples() const { return samples_; }

  // Normalized density p(y).
  double density(double y) const;

  // d/dy log p(y), regularized by the density floor and clamp.
  double score(double y) const;

  // Peak density over the sample points (floor reference level).
  double peak_density() const { return peak_density_; }

 private:
  struct KernelSums {
    // Both sums are scaled by exp(shift) to survive underflow far from the data.
    double weight = 0.0;    // sum w_i phi_i
    double moment = 0.0;    // sum w_i (y_i - y) phi_i
    double log_scale = 0.0; // log of the common factor removed from both
  };
  KernelSums sums(double y) const;
  double compute_peak_density() const;

  std::vector<double> samples_;
  std::vector<double> weights_;  // empty when uniform
  double total_weight_ = 0.0;
  double bandwidth_ = 0.0;
  double floor_frac_ = 0.0;
  double clamp_ = std::numeric_limits<double>::infinity();
  double peak_density_ = 0.0;
};

// Free-function forms of the ScoreModel surface.
ScoreModel fit_kde(std::span<const double> samples, const ScoreOptions& options = {});
double score_at(const ScoreModel& model, double y);

// Score of N(mean, variance) at y: (mean - y) / variance.
double analytic_gaussian_score(double mean, double variance, double y);

// Scott's rule bandwidth for a one-dimensional sample.
double scott_bandwidth(std::span<const double> samples);

}  // namespace debias
