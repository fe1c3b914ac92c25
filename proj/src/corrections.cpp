#include "debias/corrections.hpp"

#include <cmath>

#include "debias/errors.hpp"

namespace debias {

double lcc_correct(const CalibrationArtifact& artifact, double y_hat) {
  return (y_hat - artifact.m_hat) / artifact.k_hat;
}

double tweedie_correct(const CalibrationArtifact& artifact, const ScoreModel& arm_scores,
                       double y_hat) {
  return (y_hat + artifact.sigma2_hat * arm_scores.score(y_hat)) / artifact.k_hat;
}

double tweedie_correct(double k, double sigma2, const std::function<double(double)>& score,
                       double y_hat) {
  if (!(k > 0.0)) throw ValidationError("tweedie: k must be > 0");
  if (!(sigma2 >= 0.0)) throw ValidationError("tweedie: sigma2 must be >= 0");
  return (y_hat + sigma2 * score(y_hat)) / k;
}

double ppi_mean(std::span<const LabeledPrediction> labeled, std::span<const double> unlabeled) {
  if (labeled.empty() || unlabeled.empty()) {
    throw ValidationError("PPI needs non-empty labeled and unlabeled sets");
  }
  double imputed = 0.0;
  for (double f : unlabeled) imputed += f;
  imputed /= static_cast<double>(unlabeled.size());
  double rectifier = 0.0;
  for (const auto& p : labeled) rectifier += p.prediction - p.truth;
  rectifier /= static_cast<double>(labeled.size());
  return imputed - rectifier;
}

double ppi_weighted_mean(std::span<const LabeledPrediction> labeled,
                         std::span<const double> labeled_weights,
                         std::span<const double> unlabeled,
                         std::span<const double> unlabeled_weights) {
  if (labeled.empty() || unlabeled.empty()) {
    throw ValidationError("PPI needs non-empty labeled and unlabeled sets");
  }
  if (labeled.size() != labeled_weights.size() || unlabeled.size() != unlabeled_weights.size()) {
    throw ValidationError("PPI weights must match their samples");
  }
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < unlabeled.size(); ++i) {
    num += unlabeled_weights[i] * unlabeled[i];
    den += unlabeled_weights[i];
  }
  const double imputed = num / den;
  num = den = 0.0;
  for (std::size_t i = 0; i < labeled.size(); ++i) {
    num += labeled_weights[i] * (labeled[i].prediction - labeled[i].truth);
    den += labeled_weights[i];
  }
  return imputed - num / den;
}

std::vector<double> tweedie_correct_arms(std::span<const double> predictions,
                                         std::span<const int> treatment, double k,
                                         double sigma2, std::span<const double> weights,
                                         const ScoreOptions& options) {
  if (predictions.size() != treatment.size() ||
      (!weights.empty() && weights.size() != predictions.size())) {
    throw ValidationError("tweedie: predictions, treatment and weights must align");
  }
  if (!(k > 0.0)) throw ValidationError("tweedie: k must be > 0");
  std::vector<double> out(predictions.size());
  for (int arm : {0, 1}) {
    std::vector<double> arm_pred, arm_w;
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
      if (treatment[i] != arm) continue;
      idx.push_back(i);
      arm_pred.push_back(predictions[i]);
      if (!weights.empty()) arm_w.push_back(weights[i]);
    }
    if (idx.empty()) continue;
    const char* arm_name = arm == 1 ? "treated" : "control";
    ScoreModel model = [&] {
      try {
        return ScoreModel::fit_weighted(arm_pred, arm_w, options);
      } catch (const ValidationError& e) {
        throw ValidationError(std::string("tweedie: cannot fit the ") + arm_name +
                              " arm density: " + e.what());
      }
    }();
    for (std::size_t j = 0; j < idx.size(); ++j) {
      out[idx[j]] = (arm_pred[j] + sigma2 * model.score(arm_pred[j])) / k;
    }
  }
  return out;
}

std::vector<CorrectedOutcome> correct_trial(const TrialData& trial,
                                            const CalibrationArtifact& artifact, Method method,
                                            const TweedieOptions& tweedie) {
  std::vector<CorrectedOutcome> out;
  out.reserve(trial.records.size());
  switch (method) {
    case Method::kNaive:
      for (const auto& r : trial.records) out.push_back({r.unit_id, r.y_pred, method});
      return out;
    case Method::kLcc:
      for (const auto& r : trial.records) {
        out.push_back({r.unit_id, lcc_correct(artifact, r.y_pred), method});
      }
      return out;
    case Method::kTweedie: {
      std::vector<double> pred;
      std::vector<int> treat;
      std::vector<double> weights;
      for (const auto& r : trial.records) {
        pred.push_back(r.y_pred);
        treat.push_back(r.treatment);
        if (tweedie.weight_by_propensity) {
          if (!r.propensity) {
            throw ValidationError("tweedie: propensity weighting requested but unit '" +
                                  r.unit_id + "' has no propensity");
          }
          weights.push_back(r.treatment == 1 ? 1.0 / *r.propensity
                                             : 1.0 / (1.0 - *r.propensity));
        }
      }
      const auto values = tweedie_correct_arms(pred, treat, artifact.k_hat,
                                               artifact.sigma2_hat, weights, tweedie.score);
      for (std::size_t i = 0; i < values.size(); ++i) {
        out.push_back({trial.records[i].unit_id, values[i], method});
      }
      return out;
    }
    case Method::kPpi:
    case Method::kOracle:
      break;
  }
  throw ValidationError("correct_trial: method '" + std::string(to_string(method)) +
                        "' is not a per-unit correction");
}

}  // namespace debias
