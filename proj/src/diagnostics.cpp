#include "debias/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "debias/errors.hpp"

namespace debias {

namespace {

// Continued fraction for I_x(a, b) by the modified Lentz method; converges
// quickly for x < (a + 1) / (a + b + 2).
double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIter = 10000;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) return h;
  }
  throw NumericalError("incomplete beta continued fraction did not converge");
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw ValidationError("incomplete beta needs a, b > 0");
  if (!(x >= 0.0 && x <= 1.0)) throw ValidationError("incomplete beta needs x in [0, 1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                           a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double f_upper_tail(double f, int df1, int df2) {
  if (df1 < 1 || df2 < 1) {
    throw ValidationError("F distribution needs df1, df2 >= 1, got (" + std::to_string(df1) +
                          ", " + std::to_string(df2) + ")");
  }
  if (std::isnan(f) || f < 0.0) throw ValidationError("F statistic must be >= 0");
  if (f == 0.0) return 1.0;
  if (std::isinf(f)) return 0.0;
  const double d1 = df1, d2 = df2;
  const double x = d2 / (d2 + d1 * f);
  return std::clamp(regularized_incomplete_beta(0.5 * d2, 0.5 * d1, x), 0.0, 1.0);
}

double pearson_correlation(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw ValidationError("correlation needs two equal-length vectors of size >= 2");
  }
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) {
    throw ValidationError("correlation is undefined for a zero-variance vector");
  }
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

CalibrationDiagnostic calibration_regression(std::span<const double> tau_true,
                                             std::span<const double> tau_hat) {
  if (tau_true.size() != tau_hat.size()) {
    throw ValidationError("calibration regression needs equal-length effect vectors");
  }
  const std::size_t n = tau_true.size();
  if (n < 4) {
    throw ValidationError("calibration regression needs at least 4 points, got " +
                          std::to_string(n));
  }
  const double nd = static_cast<double>(n);
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += tau_true[i];
    my += tau_hat[i];
  }
  mx /= nd;
  my /= nd;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (tau_true[i] - mx) * (tau_true[i] - mx);
    sxy += (tau_true[i] - mx) * (tau_hat[i] - my);
    syy += (tau_hat[i] - my) * (tau_hat[i] - my);
  }
  if (!(sxx > 0.0)) {
    throw ValidationError("calibration regression needs variation in the true effects");
  }

  CalibrationDiagnostic d;
  d.n_points = static_cast<int>(n);
  d.slope = sxy / sxx;
  d.intercept = my - d.slope * mx;
  double rss_u = 0.0, rss_r = 0.0, abs_err = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = tau_hat[i] - d.slope * tau_true[i] - d.intercept;
    rss_u += e * e;
    const double r = tau_hat[i] - tau_true[i];
    rss_r += r * r;
    abs_err += std::fabs(r);
    scale += tau_hat[i] * tau_hat[i] + tau_true[i] * tau_true[i];
  }
  d.mae = abs_err / nd;
  d.pearson_r = syy > 0.0 ? std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0) : 0.0;

  // Residual sums at rounding level count as exact fits.
  const double zero_tol = 1e-24 * scale;
  if (rss_u <= zero_tol) {
    if (rss_r <= zero_tol) {
      d.f_statistic = 0.0;
      d.p_value = 1.0;
    } else {
      d.f_statistic = std::numeric_limits<double>::infinity();
      d.p_value = 0.0;
    }
    return d;
  }
  d.f_statistic = std::max(0.0, ((rss_r - rss_u) / 2.0) / (rss_u / (nd - 2.0)));
  d.p_value = f_upper_tail(d.f_statistic, 2, static_cast<int>(n) - 2);
  return d;
}

double score_correlation(std::span<const double> sample_a, std::span<const double> sample_b,
                         std::span<const double> eval_points, const ScoreOptions& options) {
  const auto model_a = ScoreModel::fit(sample_a, options);
  const auto model_b = ScoreModel::fit(sample_b, options);
  std::vector<double> sa, sb;
  sa.reserve(eval_points.size());
  sb.reserve(eval_points.size());
  for (double y : eval_points) {
    sa.push_back(model_a.score(y));
    sb.push_back(model_b.score(y));
  }
  try {
    return pearson_correlation(sa, sb);
  } catch (const ValidationError&) {
    throw ValidationError("score correlation is undefined: a score vector is constant over "
                          "the evaluation points");
  }
}

}  // namespace debias
