#pragma once

#include <span>

#include "debias/density_score.hpp"

namespace debias {

// Regression of estimated effects on true effects across a sweep. The F test
// is the joint null slope = 1 and intercept = 0 (two restrictions).
struct CalibrationDiagnostic {
  double slope = 0.0;
  double intercept = 0.0;
  double f_statistic = 0.0;  // +inf when the unrestricted fit is perfect
  double p_value = 1.0;
  double mae = 0.0;
  int n_points = 0;
  double pearson_r = 0.0;
};

CalibrationDiagnostic calibration_regression(std::span<const double> tau_true,
                                             std::span<const double> tau_hat);

// Regularized incomplete beta I_x(a, b).
double regularized_incomplete_beta(double a, double b, double x);

// P(F > f) for F ~ F(df1, df2).
double f_upper_tail(double f, int df1, int df2);

double pearson_correlation(std::span<const double> x, std::span<const double> y);

// Pearson correlation between the KDE scores of two samples over a set of
// evaluation points.
double score_correlation(std::span<const double> sample_a, std::span<const double> sample_b,
                         std::span<const double> eval_points,
                         const ScoreOptions& options = {});

}  // namespace debias
