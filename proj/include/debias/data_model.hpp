#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace debias {

// One labeled row from the held-out calibration set.
struct CalibrationPair {
  double y_true = 0.0;
  double y_pred = 0.0;
};

// Which residuals produced sigma2_hat: the held-out calibration split or the
// predictor's own training split. The two diverge once the predictor overfits.
enum class SigmaSource { kCalibration, kTraining };

std::string_view to_string(SigmaSource s);
SigmaSource parse_sigma_source(std::string_view text);

inline constexpr int kArtifactSchemaVersion = 1;

// Upstream product handed to every downstream trial: the fitted shrinkage
// line y_pred = k_hat * y_true + m_hat + noise, with noise variance sigma2_hat.
struct CalibrationArtifact {
  double k_hat = 1.0;
  double m_hat = 0.0;
  double sigma2_hat = 0.0;
  std::int64_t n_cal = 0;
  SigmaSource sigma_source = SigmaSource::kCalibration;
  int schema_version = kArtifactSchemaVersion;

  // Throws ValidationError unless k_hat > 0, sigma2_hat >= 0, n_cal >= 3 and
  // every field is finite.
  void validate() const;

  bool operator==(const CalibrationArtifact&) const = default;
};

struct TrialRecord {
  std::string unit_id;
  double y_pred = 0.0;
  int treatment = 0;
  std::optional<double> confounder;
  std::optional<double> propensity;
};

struct TrialData {
  std::string trial_id;
  std::vector<TrialRecord> records;

  std::size_t count_arm(int treatment) const;
  // Throws ValidationError unless both arms are non-empty.
  void require_both_arms() const;
};

enum class Method { kNaive, kLcc, kTweedie, kPpi, kOracle };
enum class EstimatorKind { kDiffInMeans, kIptw, kPpiMeanDiff };

std::string_view to_string(Method m);
std::string_view to_string(EstimatorKind e);
Method parse_method(std::string_view text);

struct AteReport {
  Method method = Method::kNaive;
  EstimatorKind estimator = EstimatorKind::kDiffInMeans;
  double tau_hat = 0.0;
  std::int64_t n_treated = 0;
  std::int64_t n_control = 0;
};

// CSV with header columns y_true,y_pred (others ignored).
std::vector<CalibrationPair> load_calibration_pairs(const std::filesystem::path& path);
std::vector<CalibrationPair> parse_calibration_pairs(std::string_view csv_text);

// CSV with unit_id,y_pred,treatment and optional confounder,propensity. A
// y_true column is refused: trial files must never carry ground truth.
TrialData load_trial(const std::filesystem::path& path);
TrialData parse_trial(std::string_view csv_text, std::string trial_id = "trial");

// JSON document with exactly the artifact fields.
void save_artifact(const CalibrationArtifact& artifact, const std::filesystem::path& path);
CalibrationArtifact load_artifact(const std::filesystem::path& path);
std::string artifact_to_json(const CalibrationArtifact& artifact);
CalibrationArtifact artifact_from_json(std::string_view text);

}  // namespace debias
