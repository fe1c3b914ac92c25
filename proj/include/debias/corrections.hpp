#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "debias/data_model.hpp"
#include "debias/density_score.hpp"

namespace debias {

struct CorrectedOutcome {
  std::string unit_id;
  double value = 0.0;
  Method method = Method::kNaive;
};

// (y_hat - m_hat) / k_hat.
double lcc_correct(const CalibrationArtifact& artifact, double y_hat);

// (y_hat + sigma2_hat * s(y_hat)) / k_hat, where s is the score of the
// prediction density of y_hat's own treatment arm.
double tweedie_correct(const CalibrationArtifact& artifact, const ScoreModel& arm_scores,
                       double y_hat);

// Same formula with any score function, e.g. an analytic marginal.
double tweedie_correct(double k, double sigma2, const std::function<double(double)>& score,
                       double y_hat);

// One labeled pair for the rectifier: prediction and truth.
struct LabeledPrediction {
  double prediction = 0.0;
  double truth = 0.0;
};

// mean(unlabeled predictions) - mean(prediction - truth over labeled).
double ppi_mean(std::span<const LabeledPrediction> labeled, std::span<const double> unlabeled);

// Importance-weighted form: both means are weight-normalized.
double ppi_weighted_mean(std::span<const LabeledPrediction> labeled,
                         std::span<const double> labeled_weights,
                         std::span<const double> unlabeled,
                         std::span<const double> unlabeled_weights);

struct TweedieOptions {
  ScoreOptions score;
  // Fit each arm's density on IPTW-weighted predictions (weights from the
  // record propensities). Off by default.
  bool weight_by_propensity = false;
};

// Per-record corrected outcomes, order preserved. For tweedie a separate
// ScoreModel is fitted on each treatment arm's predictions.
std::vector<CorrectedOutcome> correct_trial(const TrialData& trial,
                                            const CalibrationArtifact& artifact, Method method,
                                            const TweedieOptions& tweedie = {});

// Tweedie correction of raw vectors, per arm; `weights` may be empty.
std::vector<double> tweedie_correct_arms(std::span<const double> predictions,
                                         std::span<const int> treatment, double k,
                                         double sigma2, std::span<const double> weights,
                                         const ScoreOptions& options = {});

}  // namespace debias
