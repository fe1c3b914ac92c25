#include "debias/estimators.hpp"

#include <cmath>
#include <unordered_map>

#include "debias/corrections.hpp"
#include "debias/csv.hpp"
#include "debias/errors.hpp"

namespace debias {

namespace {

void require_arms(std::int64_t n_treated, std::int64_t n_control) {
  if (n_treated == 0 || n_control == 0) {
    throw ValidationError("treatment effect needs both arms non-empty (treated=" +
                          std::to_string(n_treated) + ", control=" +
                          std::to_string(n_control) + ")");
  }
}

}  // namespace

PropensitySpec PropensitySpec::constant(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw ValidationError("constant propensity must lie in (0, 1), got " +
                          csv::format_double(p));
  }
  return {Kind::kConstant, p};
}

PropensitySpec PropensitySpec::parse(const std::string& text) {
  if (text == "column") return known_column();
  if (text == "sigmoid") return sigmoid();
  if (text.rfind("const:", 0) == 0) {
    const auto p = csv::parse_finite(text.substr(6));
    if (!p) throw ValidationError("bad constant propensity '" + text + "'");
    return constant(*p);
  }
  throw ValidationError("unknown propensity spec '" + text +
                        "' (expected column, sigmoid or const:<p>)");
}

double PropensitySpec::resolve(const TrialRecord& record) const {
  switch (kind) {
    case Kind::kKnownColumn:
      if (!record.propensity) {
        throw ValidationError("unit '" + record.unit_id + "' has no propensity value");
      }
      return *record.propensity;
    case Kind::kSigmoidOfConfounder:
      if (!record.confounder) {
        throw ValidationError("unit '" + record.unit_id + "' has no confounder value");
      }
      return sigmoid_propensity(*record.confounder);
    case Kind::kConstant:
      return *constant_value;
  }
  return 0.5;
}

AteReport diff_in_means(std::span<const ArmValue> outcomes) {
  // Sums of deviations from a shared pivot: a common shift of all values
  // cancels before any rounding happens.
  const double pivot = outcomes.empty() ? 0.0 : outcomes.front().value;
  double sum1 = 0.0, sum0 = 0.0;
  std::int64_t n1 = 0, n0 = 0;
  for (const auto& o : outcomes) {
    if (o.treatment == 1) {
      sum1 += o.value - pivot;
      ++n1;
    } else {
      sum0 += o.value - pivot;
      ++n0;
    }
  }
  require_arms(n1, n0);
  AteReport r;
  r.estimator = EstimatorKind::kDiffInMeans;
  r.tau_hat = sum1 / static_cast<double>(n1) - sum0 / static_cast<double>(n0);
  r.n_treated = n1;
  r.n_control = n0;
  return r;
}

double sigmoid_propensity(double c) {
  if (c >= 0.0) return 1.0 / (1.0 + std::exp(-c));
  const double e = std::exp(c);
  return e / (1.0 + e);
}

AteReport iptw_ate(std::span<const WeightedArmValue> records) {
  // Weights are taken relative to the first weight seen in each arm; the
  // self-normalized estimator is scale free, and a constant propensity then
  // reduces to diff_in_means bit for bit (same pivot).
  const double pivot = records.empty() ? 0.0 : records.front().value;
  double ref[2] = {0.0, 0.0};
  double num[2] = {0.0, 0.0}, den[2] = {0.0, 0.0};
  std::int64_t count[2] = {0, 0};
  for (const auto& r : records) {
    if (!(r.propensity > 0.0 && r.propensity < 1.0)) {
      throw ValidationError("IPTW propensity must lie strictly inside (0, 1), got " +
                            csv::format_double(r.propensity));
    }
    const int arm = r.treatment == 1 ? 1 : 0;
    const double w = arm == 1 ? 1.0 / r.propensity : 1.0 / (1.0 - r.propensity);
    if (count[arm] == 0) ref[arm] = w;
    const double rel = w / ref[arm];
    num[arm] += rel * (r.value - pivot);
    den[arm] += rel;
    ++count[arm];
  }
  require_arms(count[1], count[0]);
  AteReport rep;
  rep.estimator = EstimatorKind::kIptw;
  rep.tau_hat = num[1] / den[1] - num[0] / den[0];
  rep.n_treated = count[1];
  rep.n_control = count[0];
  return rep;
}

AteReport ppi_ate(const TrialData& trial, std::span<const LabeledOutcome> labeled,
                  const std::optional<PropensitySpec>& propensity) {
  trial.require_both_arms();
  std::unordered_map<std::string, double> truth;
  for (const auto& l : labeled) truth[l.unit_id] = l.y_true;

  double arm_mean[2] = {0.0, 0.0};
  std::int64_t arm_count[2] = {0, 0};
  for (int arm : {0, 1}) {
    std::vector<double> all_pred, all_w;
    std::vector<LabeledPrediction> lab;
    std::vector<double> lab_w;
    for (const auto& r : trial.records) {
      if (r.treatment != arm) continue;
      double w = 1.0;
      if (propensity) {
        const double e = propensity->resolve(r);
        w = arm == 1 ? 1.0 / e : 1.0 / (1.0 - e);
      }
      all_pred.push_back(r.y_pred);
      all_w.push_back(w);
      if (auto it = truth.find(r.unit_id); it != truth.end()) {
        lab.push_back({r.y_pred, it->second});
        lab_w.push_back(w);
      }
    }
    if (lab.empty()) {
      throw ValidationError(std::string("PPI needs labeled units in both arms; the ") +
                            (arm == 1 ? "treated" : "control") + " arm has none");
    }
    arm_mean[arm] = propensity ? ppi_weighted_mean(lab, lab_w, all_pred, all_w)
                               : ppi_mean(lab, all_pred);
    arm_count[arm] = static_cast<std::int64_t>(all_pred.size());
  }
  AteReport rep;
  rep.method = Method::kPpi;
  rep.estimator = EstimatorKind::kPpiMeanDiff;
  rep.tau_hat = arm_mean[1] - arm_mean[0];
  rep.n_treated = arm_count[1];
  rep.n_control = arm_count[0];
  return rep;
}

}  // namespace debias
