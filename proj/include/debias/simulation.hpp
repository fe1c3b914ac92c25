#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "debias/data_model.hpp"
#include "debias/density_score.hpp"
#include "debias/diagnostics.hpp"

namespace debias::sim {

using Rng = std::mt19937_64;

enum class LossKind { kMse, kRatledge };
std::string_view to_string(LossKind k);

// How the sweep's Tweedie correction obtains k.
enum class TweedieK {
  kUnit,        // k = 1: only the local score addend is applied
  kCalibrated,  // k = k_hat from the calibration split
};
std::string_view to_string(TweedieK k);

struct TrainingConfig {
  int hidden = 50;
  int epochs = 20;
  double learning_rate = 0.01;
  int batch_size = 32;
  double weight_decay = 0.0;
  // Rescale each mini-batch gradient to at most this L2 norm; 0 disables.
  double grad_clip = 1.0;
};

struct SimConfig {
  std::vector<double> tau_grid = default_tau_grid();
  int n_train = 5000;
  int n_test = 5000;
  double sigma_y = 1.0;
  int embed_dim = 100;
  int hidden_dim = 50;
  // Standard deviation of isotropic Gaussian noise added to each embedding
  // coordinate; controls how much of Y the predictor can recover.
  double embed_noise = 0.85;
  double lambda_b = 15.0;
  double ppi_label_frac = 0.10;
  bool ppi_stratified = false;
  double calibration_frac = 0.25;
  SigmaSource sigma_source = SigmaSource::kCalibration;
  TweedieK tweedie_k = TweedieK::kCalibrated;
  // Fit each arm's prediction density on IPTW-weighted points.
  bool tweedie_weighted_score = true;
  ScoreOptions score;
  TrainingConfig training;
  std::uint64_t seed = 20240917;
  int threads = 1;

  static std::vector<double> default_tau_grid();
  static std::vector<double> linspace(double lo, double hi, int count);

  // Throws ValidationError.
  void validate() const;

  std::string to_json() const;
  // Missing keys keep their defaults; unknown keys are rejected.
  static SimConfig from_json(std::string_view text);
};

struct Population {
  std::vector<double> c;
  std::vector<int> a;
  std::vector<double> y;
  Eigen::MatrixXd x;  // n x embed_dim

  std::size_t size() const { return y.size(); }
};

// Scalar -> hidden -> hidden -> embed_dim network with rectified-linear hidden
// layers and fixed random weights.
class FrozenEmbedder {
 public:
  static FrozenEmbedder random(int hidden_dim, int embed_dim, Rng& rng);
  static FrozenEmbedder zeros(int hidden_dim, int embed_dim);

  Eigen::MatrixXd embed(std::span<const double> y) const;

  int embed_dim() const { return static_cast<int>(w3_.rows()); }
  int hidden_dim() const { return static_cast<int>(w1_.rows()); }

  const Eigen::MatrixXd& w1() const { return w1_; }
  const Eigen::VectorXd& b1() const { return b1_; }
  const Eigen::MatrixXd& w2() const { return w2_; }
  const Eigen::VectorXd& b2() const { return b2_; }
  const Eigen::MatrixXd& w3() const { return w3_; }
  const Eigen::VectorXd& b3() const { return b3_; }

 private:
  Eigen::MatrixXd w1_, w2_, w3_;
  Eigen::VectorXd b1_, b2_, b3_;
};

struct PopulationOverrides {
  std::optional<double> confounder;  // fix every C_i
  std::optional<double> sigma_y;     // may be 0
};

// C ~ N(0,1), A ~ Bernoulli(sigmoid(C)), Y ~ N(tau A + C, sigma_y),
// X = embedder(Y) + N(0, embed_noise^2) per coordinate.
Population generate_population(const SimConfig& cfg, double tau, int n,
                               const FrozenEmbedder& embedder, Rng& rng,
                               const PopulationOverrides& overrides = {});

// Upper boundaries of the five target quintile groups; a value equal to a
// boundary belongs to the lower group.
struct QuintileBins {
  std::array<double, 4> upper{};
  static QuintileBins from_targets(std::span<const double> targets);
  int group(double y) const;
};

struct LossValue {
  double loss = 0.0;
  std::vector<double> grad;  // d loss / d prediction
};

// MSE, or MSE + lambda_b * max_j (mean residual in quintile j)^2 with the
// subgradient routed through the arg-max group.
LossValue evaluate_loss(std::span<const double> preds, std::span<const double> targets,
                        LossKind kind, const QuintileBins& bins, double lambda_b);

// Ratledge loss with quintiles taken from `targets`; needs >= 5 samples.
double ratledge_loss(std::span<const double> preds, std::span<const double> targets,
                     double lambda_b);

// One-hidden-layer rectified-linear regressor.
class Predictor {
 public:
  Predictor(int input_dim, int hidden, Rng& rng, LossKind kind = LossKind::kMse);

  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const;
  LossKind loss_kind() const { return kind_; }

  // Parameters flattened as [W1 (row-major), b1, w2, b2].
  Eigen::VectorXd parameters() const;
  void set_parameters(const Eigen::VectorXd& p);

  // Loss over the rows of x and its gradient with respect to parameters().
  double loss_and_gradient(const Eigen::MatrixXd& x, std::span<const double> y,
                           const QuintileBins& bins, double lambda_b, double weight_decay,
                           Eigen::VectorXd& grad) const;

 private:
  LossKind kind_;
  Eigen::MatrixXd w1_;  // hidden x input
  Eigen::VectorXd b1_;
  Eigen::VectorXd w2_;  // hidden
  double b2_ = 0.0;
};

// Mini-batch SGD on the chosen loss. Ratledge quintile boundaries are fixed
// from `y` before the first epoch.
Predictor train_predictor(const Eigen::MatrixXd& x, std::span<const double> y,
                          LossKind loss_kind, const SimConfig& cfg, Rng& rng);

double r_squared(std::span<const double> truth, std::span<const double> pred);

enum class SweepMethod { kSample, kNaive, kLcc, kTweedie, kPpi, kRatledge };
std::string_view to_string(SweepMethod m);
SweepMethod parse_sweep_method(std::string_view text);
// Report order: tweedie, lcc, ppi, ratledge, naive, sample.
const std::vector<SweepMethod>& report_order();

struct SweepResult {
  double tau_true = 0.0;
  SweepMethod method = SweepMethod::kSample;
  double tau_hat = 0.0;
  double r2_oos = 0.0;

  bool operator==(const SweepResult&) const = default;
};

// All methods for grid point `index` of cfg.tau_grid.
std::vector<SweepResult> run_tau(const SimConfig& cfg, std::size_t index);

// Every grid point, in grid order. Grid points run on cfg.threads workers; each
// uses a seed derived from (cfg.seed, index) so the output does not depend on
// the thread count.
std::vector<SweepResult> run_sweep(const SimConfig& cfg);

struct MethodSummary {
  SweepMethod method;
  CalibrationDiagnostic diagnostic;
};

std::vector<MethodSummary> summarize(std::span<const SweepResult> results);

// Mean r2_oos of the MSE predictor across grid points.
double mean_r2_oos(std::span<const SweepResult> results);

// Per-stream seed derivation (splitmix64 finalizer).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

// CSV: tau_true,method,tau_hat,r2_oos
std::string sweep_to_csv(std::span<const SweepResult> results);
std::vector<SweepResult> sweep_from_csv(std::string_view text);

// CSV: method,mae,slope,f_statistic,p_value,intercept,pearson_r,n_points
std::string summary_to_csv(std::span<const MethodSummary> summary);
std::string summary_to_json(std::span<const MethodSummary> summary);

}  // namespace debias::sim
