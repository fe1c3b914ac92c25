#pragma once

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "debias/data_model.hpp"

namespace debias {

struct ArmValue {
  double value = 0.0;
  int treatment = 0;
};

struct WeightedArmValue {
  double value = 0.0;
  int treatment = 0;
  double propensity = 0.5;
};

// Where IPTW propensities come from.
struct PropensitySpec {
  enum class Kind { kKnownColumn, kSigmoidOfConfounder, kConstant };
  Kind kind = Kind::kKnownColumn;
  std::optional<double> constant_value;

  static PropensitySpec known_column() { return {Kind::kKnownColumn, std::nullopt}; }
  static PropensitySpec sigmoid() { return {Kind::kSigmoidOfConfounder, std::nullopt}; }
  static PropensitySpec constant(double p);

  // Parses "column", "sigmoid" or "const:<p>".
  static PropensitySpec parse(const std::string& text);

  double resolve(const TrialRecord& record) const;
};

AteReport diff_in_means(std::span<const ArmValue> outcomes);

// 1 / (1 + exp(-c)), evaluated without overflow for large |c|.
double sigmoid_propensity(double c);

// Hajek (self-normalized) inverse-probability weighting.
AteReport iptw_ate(std::span<const WeightedArmValue> records);

struct LabeledOutcome {
  std::string unit_id;
  double y_true = 0.0;
};

// Per-arm PPI means: each arm's mean prediction over all its units, minus the
// arm's labeled rectifier. With `propensity`, both means are IPTW-weighted.
AteReport ppi_ate(const TrialData& trial, std::span<const LabeledOutcome> labeled,
                  const std::optional<PropensitySpec>& propensity = std::nullopt);

}  // namespace debias
