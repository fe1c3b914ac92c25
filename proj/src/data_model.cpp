#include "debias/data_model.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "debias/csv.hpp"
#include "debias/errors.hpp"

namespace debias {

namespace {

const char* const kArtifactFields[] = {"schema_version", "k_hat",  "m_hat",
                                       "sigma2_hat",     "n_cal",  "sigma_source"};

std::vector<CalibrationPair> pairs_from_table(const csv::Table& t) {
  const std::size_t col_true = t.require_column("y_true");
  const std::size_t col_pred = t.require_column("y_pred");
  std::vector<CalibrationPair> pairs;
  pairs.reserve(t.rows());
  for (std::size_t r = 0; r < t.rows(); ++r) {
    pairs.push_back({t.number(r, col_true), t.number(r, col_pred)});
  }
  if (pairs.empty()) throw ParseError(t.source() + ": no data rows");
  return pairs;
}

TrialData trial_from_table(const csv::Table& t, std::string trial_id) {
  if (t.find_column("y_true")) {
    throw ValidationError(t.source() +
                          ": trial files must not contain a y_true column; ground-truth "
                          "labels are only accepted through an explicit labeled file");
  }
  const std::size_t col_id = t.require_column("unit_id");
  const std::size_t col_pred = t.require_column("y_pred");
  const std::size_t col_treat = t.require_column("treatment");
  const auto col_conf = t.find_column("confounder");
  const auto col_prop = t.find_column("propensity");

  TrialData trial;
  trial.trial_id = std::move(trial_id);
  trial.records.reserve(t.rows());
  for (std::size_t r = 0; r < t.rows(); ++r) {
    TrialRecord rec;
    rec.unit_id = t.cell(r, col_id);
    rec.y_pred = t.number(r, col_pred);
    const double a = t.number(r, col_treat);
    if (a != 0.0 && a != 1.0) {
      throw ValidationError(t.source() + ": row " + std::to_string(r + 1) +
                            ": treatment must be 0 or 1, got '" + t.cell(r, col_treat) + "'");
    }
    rec.treatment = static_cast<int>(a);
    if (col_conf && !t.cell(r, *col_conf).empty()) rec.confounder = t.number(r, *col_conf);
    if (col_prop && !t.cell(r, *col_prop).empty()) {
      const double e = t.number(r, *col_prop);
      if (!(e > 0.0 && e < 1.0)) {
        throw ValidationError(t.source() + ": row " + std::to_string(r + 1) +
                              ": propensity must lie strictly inside (0, 1), got " +
                              t.cell(r, *col_prop));
      }
      rec.propensity = e;
    }
    trial.records.push_back(std::move(rec));
  }
  return trial;
}

}  // namespace

std::string_view to_string(SigmaSource s) {
  return s == SigmaSource::kCalibration ? "calibration" : "training";
}

SigmaSource parse_sigma_source(std::string_view text) {
  if (text == "calibration") return SigmaSource::kCalibration;
  if (text == "training") return SigmaSource::kTraining;
  throw ValidationError("unknown sigma_source '" + std::string(text) +
                        "' (expected calibration or training)");
}

void CalibrationArtifact::validate() const {
  if (schema_version != kArtifactSchemaVersion) {
    throw ValidationError("unsupported artifact schema_version " +
                          std::to_string(schema_version) + " (this build reads " +
                          std::to_string(kArtifactSchemaVersion) + ")");
  }
  if (!std::isfinite(k_hat) || !std::isfinite(m_hat) || !std::isfinite(sigma2_hat)) {
    throw ValidationError("artifact fields must be finite");
  }
  if (!(k_hat > 0.0)) {
    throw ValidationError("artifact k_hat must be > 0, got " + csv::format_double(k_hat));
  }
  if (sigma2_hat < 0.0) {
    throw ValidationError("artifact sigma2_hat must be >= 0, got " +
                          csv::format_double(sigma2_hat));
  }
  if (n_cal < 3) {
    throw ValidationError("artifact n_cal must be >= 3, got " + std::to_string(n_cal));
  }
}

std::size_t TrialData::count_arm(int treatment) const {
  std::size_t n = 0;
  for (const auto& r : records) n += (r.treatment == treatment);
  return n;
}

void TrialData::require_both_arms() const {
  if (count_arm(1) == 0 || count_arm(0) == 0) {
    throw ValidationError("trial '" + trial_id +
                          "' needs at least one treated and one control unit (treated=" +
                          std::to_string(count_arm(1)) +
                          ", control=" + std::to_string(count_arm(0)) + ")");
  }
}

std::string_view to_string(Method m) {
  switch (m) {
    case Method::kNaive: return "naive";
    case Method::kLcc: return "lcc";
    case Method::kTweedie: return "tweedie";
    case Method::kPpi: return "ppi";
    case Method::kOracle: return "oracle";
  }
  return "?";
}

std::string_view to_string(EstimatorKind e) {
  switch (e) {
    case EstimatorKind::kDiffInMeans: return "diff_in_means";
    case EstimatorKind::kIptw: return "iptw";
    case EstimatorKind::kPpiMeanDiff: return "ppi_mean_diff";
  }
  return "?";
}

Method parse_method(std::string_view text) {
  for (Method m : {Method::kNaive, Method::kLcc, Method::kTweedie, Method::kPpi,
                   Method::kOracle}) {
    if (to_string(m) == text) return m;
  }
  throw ValidationError("unknown method '" + std::string(text) + "'");
}

std::vector<CalibrationPair> load_calibration_pairs(const std::filesystem::path& path) {
  return pairs_from_table(csv::Table::read(path));
}

std::vector<CalibrationPair> parse_calibration_pairs(std::string_view csv_text) {
  return pairs_from_table(csv::Table::parse(csv_text));
}

TrialData load_trial(const std::filesystem::path& path) {
  return trial_from_table(csv::Table::read(path), path.stem().string());
}

TrialData parse_trial(std::string_view csv_text, std::string trial_id) {
  return trial_from_table(csv::Table::parse(csv_text), std::move(trial_id));
}

std::string artifact_to_json(const CalibrationArtifact& a) {
  nlohmann::ordered_json doc;
  doc["schema_version"] = a.schema_version;
  doc["k_hat"] = a.k_hat;
  doc["m_hat"] = a.m_hat;
  doc["sigma2_hat"] = a.sigma2_hat;
  doc["n_cal"] = a.n_cal;
  doc["sigma_source"] = std::string(to_string(a.sigma_source));
  return doc.dump(2) + "\n";
}

CalibrationArtifact artifact_from_json(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("corrupt artifact document: ") + e.what());
  }
  if (!doc.is_object()) throw ParseError("corrupt artifact document: expected an object");
  for (const char* field : kArtifactFields) {
    if (!doc.contains(field)) {
      throw ParseError(std::string("artifact document is missing field '") + field + "'");
    }
  }
  CalibrationArtifact a;
  try {
    a.schema_version = doc.at("schema_version").get<int>();
    if (a.schema_version != kArtifactSchemaVersion) {
      throw ValidationError("unsupported artifact schema_version " +
                            std::to_string(a.schema_version) + " (this build reads " +
                            std::to_string(kArtifactSchemaVersion) + ")");
    }
    a.k_hat = doc.at("k_hat").get<double>();
    a.m_hat = doc.at("m_hat").get<double>();
    a.sigma2_hat = doc.at("sigma2_hat").get<double>();
    a.n_cal = doc.at("n_cal").get<std::int64_t>();
    a.sigma_source = parse_sigma_source(doc.at("sigma_source").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("corrupt artifact document: ") + e.what());
  }
  a.validate();
  return a;
}

void save_artifact(const CalibrationArtifact& artifact, const std::filesystem::path& path) {
  artifact.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write artifact to '" + path.string() + "'");
  out << artifact_to_json(artifact);
}

CalibrationArtifact load_artifact(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open artifact '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return artifact_from_json(buf.str());
}

}  // namespace debias
