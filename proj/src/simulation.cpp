#include "debias/simulation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "debias/calibration.hpp"
#include "debias/corrections.hpp"
#include "debias/csv.hpp"
#include "debias/errors.hpp"
#include "debias/estimators.hpp"

namespace debias::sim {

namespace {

// Stream ids for derive_seed within one grid point.
enum Stream : std::uint64_t {
  kStreamEmbedder = 1,
  kStreamTrainPopulation,
  kStreamMseTraining,
  kStreamRatledgeTraining,
  kStreamTestPopulation,
  kStreamLabels,
};

void fill_uniform(Eigen::MatrixXd& m, double bound, Rng& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  // Row-major fill order keeps the draw sequence independent of storage order.
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = u(rng);
  }
}

void fill_uniform(Eigen::VectorXd& v, double bound, Rng& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = u(rng);
}

std::vector<double> to_std(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

}  // namespace

std::string_view to_string(LossKind k) { return k == LossKind::kMse ? "mse" : "ratledge"; }

std::string_view to_string(TweedieK k) {
  return k == TweedieK::kUnit ? "unit" : "calibrated";
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// --- configuration --------------------------------------------------------

std::vector<double> SimConfig::linspace(double lo, double hi, int count) {
  if (count < 1) throw ValidationError("grid needs at least one point");
  std::vector<double> g(static_cast<std::size_t>(count));
  if (count == 1) {
    g[0] = lo;
    return g;
  }
  const double step = (hi - lo) / (count - 1);
  for (int i = 0; i < count; ++i) g[i] = lo + step * i;
  g.back() = hi;
  return g;
}

std::vector<double> SimConfig::default_tau_grid() { return linspace(-2.0, 2.0, 51); }

void SimConfig::validate() const {
  auto fail = [](const std::string& what) { throw ValidationError("sim config: " + what); };
  if (tau_grid.empty()) fail("tau_grid must be non-empty");
  for (double t : tau_grid) {
    if (!std::isfinite(t)) fail("tau_grid values must be finite");
  }
  if (n_train < 20) fail("n_train must be >= 20");
  if (n_test < 10) fail("n_test must be >= 10");
  if (!(sigma_y > 0.0)) fail("sigma_y must be > 0");
  if (embed_dim < 1 || hidden_dim < 1) fail("embedding dimensions must be positive");
  if (!(embed_noise >= 0.0)) fail("embed_noise must be >= 0");
  if (!(lambda_b >= 0.0)) fail("lambda_b must be >= 0");
  if (!(ppi_label_frac > 0.0 && ppi_label_frac <= 1.0)) fail("ppi_label_frac must be in (0, 1]");
  if (!(calibration_frac > 0.0 && calibration_frac < 1.0)) {
    fail("calibration_frac must be in (0, 1)");
  }
  if (training.hidden < 1) fail("training.hidden must be positive");
  if (training.epochs < 0) fail("training.epochs must be >= 0");
  if (!(training.learning_rate >= 0.0)) fail("training.learning_rate must be >= 0");
  if (training.batch_size < 1) fail("training.batch_size must be positive");
  if (!(training.weight_decay >= 0.0)) fail("training.weight_decay must be >= 0");
  if (!(training.grad_clip >= 0.0)) fail("training.grad_clip must be >= 0");
  if (threads < 1) fail("threads must be >= 1");
  if (!(score.density_floor_frac >= 0.0 && score.density_floor_frac < 1.0)) {
    fail("score.density_floor_frac must be in [0, 1)");
  }
  if (score.score_clamp && !(*score.score_clamp > 0.0)) fail("score.score_clamp must be > 0");
}

std::string SimConfig::to_json() const {
  nlohmann::ordered_json j;
  j["tau_grid"] = tau_grid;
  j["n_train"] = n_train;
  j["n_test"] = n_test;
  j["sigma_y"] = sigma_y;
  j["embed_dim"] = embed_dim;
  j["hidden_dim"] = hidden_dim;
  j["embed_noise"] = embed_noise;
  j["lambda_b"] = lambda_b;
  j["ppi_label_frac"] = ppi_label_frac;
  j["ppi_stratified"] = ppi_stratified;
  j["calibration_frac"] = calibration_frac;
  j["sigma_source"] = std::string(debias::to_string(sigma_source));
  j["tweedie_k"] = std::string(to_string(tweedie_k));
  j["tweedie_weighted_score"] = tweedie_weighted_score;
  j["density_floor_frac"] = score.density_floor_frac;
  if (score.score_clamp) j["score_clamp"] = *score.score_clamp;
  j["training"] = {{"hidden", training.hidden},
                   {"epochs", training.epochs},
                   {"learning_rate", training.learning_rate},
                   {"batch_size", training.batch_size},
                   {"weight_decay", training.weight_decay},
                   {"grad_clip", training.grad_clip}};
  j["seed"] = seed;
  j["threads"] = threads;
  return j.dump(2) + "\n";
}

SimConfig SimConfig::from_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("sim config: ") + e.what());
  }
  if (!j.is_object()) throw ParseError("sim config: expected a JSON object");
  SimConfig cfg;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "tau_grid") {
        cfg.tau_grid = value.get<std::vector<double>>();
      } else if (key == "tau_range") {
        cfg.tau_grid = linspace(value.at("lo").get<double>(), value.at("hi").get<double>(),
                                value.at("count").get<int>());
      } else if (key == "n_train") {
        cfg.n_train = value.get<int>();
      } else if (key == "n_test") {
        cfg.n_test = value.get<int>();
      } else if (key == "sigma_y") {
        cfg.sigma_y = value.get<double>();
      } else if (key == "embed_dim") {
        cfg.embed_dim = value.get<int>();
      } else if (key == "hidden_dim") {
        cfg.hidden_dim = value.get<int>();
      } else if (key == "embed_noise") {
        cfg.embed_noise = value.get<double>();
      } else if (key == "lambda_b") {
        cfg.lambda_b = value.get<double>();
      } else if (key == "ppi_label_frac") {
        cfg.ppi_label_frac = value.get<double>();
      } else if (key == "ppi_stratified") {
        cfg.ppi_stratified = value.get<bool>();
      } else if (key == "calibration_frac") {
        cfg.calibration_frac = value.get<double>();
      } else if (key == "sigma_source") {
        cfg.sigma_source = parse_sigma_source(value.get<std::string>());
      } else if (key == "tweedie_k") {
        const auto s = value.get<std::string>();
        if (s == "unit") {
          cfg.tweedie_k = TweedieK::kUnit;
        } else if (s == "calibrated") {
          cfg.tweedie_k = TweedieK::kCalibrated;
        } else {
          throw ValidationError("sim config: tweedie_k must be 'unit' or 'calibrated'");
        }
      } else if (key == "tweedie_weighted_score") {
        cfg.tweedie_weighted_score = value.get<bool>();
      } else if (key == "density_floor_frac") {
        cfg.score.density_floor_frac = value.get<double>();
      } else if (key == "score_clamp") {
        cfg.score.score_clamp = value.get<double>();
      } else if (key == "training") {
        for (const auto& [tk, tv] : value.items()) {
          if (tk == "hidden") {
            cfg.training.hidden = tv.get<int>();
          } else if (tk == "epochs") {
            cfg.training.epochs = tv.get<int>();
          } else if (tk == "learning_rate") {
            cfg.training.learning_rate = tv.get<double>();
          } else if (tk == "batch_size") {
            cfg.training.batch_size = tv.get<int>();
          } else if (tk == "weight_decay") {
            cfg.training.weight_decay = tv.get<double>();
          } else if (tk == "grad_clip") {
            cfg.training.grad_clip = tv.get<double>();
          } else {
            throw ValidationError("sim config: unknown training key '" + tk + "'");
          }
        }
      } else if (key == "seed") {
        cfg.seed = value.get<std::uint64_t>();
      } else if (key == "threads") {
        cfg.threads = value.get<int>();
      } else {
        throw ValidationError("sim config: unknown key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("sim config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

// --- data generation ------------------------------------------------------

FrozenEmbedder FrozenEmbedder::random(int hidden_dim, int embed_dim, Rng& rng) {
  FrozenEmbedder e;
  e.w1_.resize(hidden_dim, 1);
  e.b1_.resize(hidden_dim);
  e.w2_.resize(hidden_dim, hidden_dim);
  e.b2_.resize(hidden_dim);
  e.w3_.resize(embed_dim, hidden_dim);
  e.b3_.resize(embed_dim);
  // U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases alike.
  fill_uniform(e.w1_, 1.0, rng);
  fill_uniform(e.b1_, 1.0, rng);
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
  fill_uniform(e.w2_, bound, rng);
  fill_uniform(e.b2_, bound, rng);
  fill_uniform(e.w3_, bound, rng);
  fill_uniform(e.b3_, bound, rng);
  return e;
}

FrozenEmbedder FrozenEmbedder::zeros(int hidden_dim, int embed_dim) {
  FrozenEmbedder e;
  e.w1_ = Eigen::MatrixXd::Zero(hidden_dim, 1);
  e.b1_ = Eigen::VectorXd::Zero(hidden_dim);
  e.w2_ = Eigen::MatrixXd::Zero(hidden_dim, hidden_dim);
  e.b2_ = Eigen::VectorXd::Zero(hidden_dim);
  e.w3_ = Eigen::MatrixXd::Zero(embed_dim, hidden_dim);
  e.b3_ = Eigen::VectorXd::Zero(embed_dim);
  return e;
}

Eigen::MatrixXd FrozenEmbedder::embed(std::span<const double> y) const {
  const Eigen::Index n = static_cast<Eigen::Index>(y.size());
  const Eigen::Map<const Eigen::RowVectorXd> yr(y.data(), n);
  // Columns are samples during the forward pass.
  Eigen::MatrixXd h1 = ((w1_ * yr).colwise() + b1_).cwiseMax(0.0);
  Eigen::MatrixXd h2 = ((w2_ * h1).colwise() + b2_).cwiseMax(0.0);
  Eigen::MatrixXd out = (w3_ * h2).colwise() + b3_;
  return out.transpose();
}

Population generate_population(const SimConfig& cfg, double tau, int n,
                               const FrozenEmbedder& embedder, Rng& rng,
                               const PopulationOverrides& overrides) {
  if (n < 1) throw ValidationError("population size must be positive");
  const double sigma_y = overrides.sigma_y.value_or(cfg.sigma_y);
  if (!(sigma_y >= 0.0)) throw ValidationError("sigma_y must be >= 0");

  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Population p;
  p.c.resize(n);
  p.a.resize(n);
  p.y.resize(n);
  for (int i = 0; i < n; ++i) {
    const double c = overrides.confounder ? *overrides.confounder : normal(rng);
    const int a = unif(rng) < sigmoid_propensity(c) ? 1 : 0;
    const double noise = normal(rng);
    p.c[i] = c;
    p.a[i] = a;
    p.y[i] = tau * a + c + sigma_y * noise;
  }
  p.x = embedder.embed(p.y);
  if (cfg.embed_noise > 0.0) {
    for (Eigen::Index r = 0; r < p.x.rows(); ++r) {
      for (Eigen::Index c = 0; c < p.x.cols(); ++c) p.x(r, c) += cfg.embed_noise * normal(rng);
    }
  }
  return p;
}

// --- losses ---------------------------------------------------------------

QuintileBins QuintileBins::from_targets(std::span<const double> targets) {
  const std::size_t n = targets.size();
  if (n < 5) {
    throw ValidationError("quintile groups need at least 5 targets, got " + std::to_string(n));
  }
  std::vector<double> sorted(targets.begin(), targets.end());
  std::sort(sorted.begin(), sorted.end());
  QuintileBins b;
  for (std::size_t j = 0; j < 4; ++j) {
    // Last element of rank group j when ranks are split into fifths.
    const std::size_t end = ((j + 1) * n + 4) / 5;
    b.upper[j] = sorted[end - 1];
  }
  return b;
}

int QuintileBins::group(double y) const {
  for (int j = 0; j < 4; ++j) {
    if (y <= upper[j]) return j;
  }
  return 4;
}

LossValue evaluate_loss(std::span<const double> preds, std::span<const double> targets,
                        LossKind kind, const QuintileBins& bins, double lambda_b) {
  if (preds.size() != targets.size() || preds.empty()) {
    throw ValidationError("loss needs equal-length, non-empty predictions and targets");
  }
  const std::size_t n = preds.size();
  const double nd = static_cast<double>(n);
  LossValue out;
  out.grad.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double r = preds[i] - targets[i];
    out.loss += r * r;
    out.grad[i] = 2.0 * r / nd;
  }
  out.loss /= nd;
  if (kind == LossKind::kMse || lambda_b == 0.0) return out;

  std::array<double, 5> sum{};
  std::array<int, 5> count{};
  std::vector<int> group(n);
  for (std::size_t i = 0; i < n; ++i) {
    group[i] = bins.group(targets[i]);
    sum[group[i]] += preds[i] - targets[i];
    ++count[group[i]];
  }
  int worst = -1;
  double worst_sq = -1.0;
  for (int j = 0; j < 5; ++j) {
    if (count[j] == 0) continue;
    const double bias = sum[j] / count[j];
    if (bias * bias > worst_sq) {
      worst_sq = bias * bias;
      worst = j;
    }
  }
  out.loss += lambda_b * worst_sq;
  const double bias = sum[worst] / count[worst];
  for (std::size_t i = 0; i < n; ++i) {
    if (group[i] == worst) out.grad[i] += lambda_b * 2.0 * bias / count[worst];
  }
  return out;
}

double ratledge_loss(std::span<const double> preds, std::span<const double> targets,
                     double lambda_b) {
  const auto bins = QuintileBins::from_targets(targets);
  return evaluate_loss(preds, targets, LossKind::kRatledge, bins, lambda_b).loss;
}

// --- predictor ------------------------------------------------------------

Predictor::Predictor(int input_dim, int hidden, Rng& rng, LossKind kind) : kind_(kind) {
  w1_.resize(hidden, input_dim);
  b1_.resize(hidden);
  w2_.resize(hidden);
  const double bound1 = 1.0 / std::sqrt(static_cast<double>(input_dim));
  fill_uniform(w1_, bound1, rng);
  fill_uniform(b1_, bound1, rng);
  const double bound2 = 1.0 / std::sqrt(static_cast<double>(hidden));
  fill_uniform(w2_, bound2, rng);
  std::uniform_real_distribution<double> u(-bound2, bound2);
  b2_ = u(rng);
}

Eigen::VectorXd Predictor::predict(const Eigen::MatrixXd& x) const {
  const Eigen::MatrixXd h = ((x * w1_.transpose()).rowwise() + b1_.transpose()).cwiseMax(0.0);
  return (h * w2_).array() + b2_;
}

Eigen::VectorXd Predictor::parameters() const {
  const Eigen::Index h = w1_.rows(), d = w1_.cols();
  Eigen::VectorXd p(h * d + 2 * h + 1);
  Eigen::Index k = 0;
  for (Eigen::Index r = 0; r < h; ++r) {
    for (Eigen::Index c = 0; c < d; ++c) p(k++) = w1_(r, c);
  }
  p.segment(k, h) = b1_;
  k += h;
  p.segment(k, h) = w2_;
  k += h;
  p(k) = b2_;
  return p;
}

void Predictor::set_parameters(const Eigen::VectorXd& p) {
  const Eigen::Index h = w1_.rows(), d = w1_.cols();
  if (p.size() != h * d + 2 * h + 1) throw ValidationError("parameter vector has wrong size");
  Eigen::Index k = 0;
  for (Eigen::Index r = 0; r < h; ++r) {
    for (Eigen::Index c = 0; c < d; ++c) w1_(r, c) = p(k++);
  }
  b1_ = p.segment(k, h);
  k += h;
  w2_ = p.segment(k, h);
  k += h;
  b2_ = p(k);
}

double Predictor::loss_and_gradient(const Eigen::MatrixXd& x, std::span<const double> y,
                                    const QuintileBins& bins, double lambda_b,
                                    double weight_decay, Eigen::VectorXd& grad) const {
  const Eigen::Index h = w1_.rows(), d = w1_.cols();
  const Eigen::MatrixXd pre = (x * w1_.transpose()).rowwise() + b1_.transpose();
  const Eigen::MatrixXd act = pre.cwiseMax(0.0);
  const Eigen::VectorXd pred = (act * w2_).array() + b2_;

  const auto pv = to_std(pred);
  const LossValue lv = evaluate_loss(pv, y, kind_, bins, lambda_b);
  const Eigen::Map<const Eigen::VectorXd> g(lv.grad.data(), static_cast<Eigen::Index>(lv.grad.size()));

  const Eigen::VectorXd grad_w2 = act.transpose() * g;
  const double grad_b2 = g.sum();
  Eigen::MatrixXd grad_pre = g * w2_.transpose();
  grad_pre = grad_pre.cwiseProduct((pre.array() > 0.0).cast<double>().matrix());
  Eigen::MatrixXd grad_w1 = grad_pre.transpose() * x;
  const Eigen::VectorXd grad_b1 = grad_pre.colwise().sum().transpose();

  double loss = lv.loss;
  if (weight_decay > 0.0) {
    loss += weight_decay * (w1_.squaredNorm() + w2_.squaredNorm());
    grad_w1 += 2.0 * weight_decay * w1_;
  }
  Eigen::VectorXd grad_w2_total = grad_w2;
  if (weight_decay > 0.0) grad_w2_total += 2.0 * weight_decay * w2_;

  grad.resize(h * d + 2 * h + 1);
  Eigen::Index k = 0;
  for (Eigen::Index r = 0; r < h; ++r) {
    for (Eigen::Index c = 0; c < d; ++c) grad(k++) = grad_w1(r, c);
  }
  grad.segment(k, h) = grad_b1;
  k += h;
  grad.segment(k, h) = grad_w2_total;
  k += h;
  grad(k) = grad_b2;
  return loss;
}

Predictor train_predictor(const Eigen::MatrixXd& x, std::span<const double> y,
                          LossKind loss_kind, const SimConfig& cfg, Rng& rng) {
  if (static_cast<std::size_t>(x.rows()) != y.size()) {
    throw ValidationError("training inputs and targets differ in length");
  }
  const auto& tc = cfg.training;
  Predictor model(static_cast<int>(x.cols()), tc.hidden, rng, loss_kind);
  const QuintileBins bins = loss_kind == LossKind::kRatledge ? QuintileBins::from_targets(y)
                                                             : QuintileBins{};
  if (tc.learning_rate == 0.0 || tc.epochs == 0) return model;

  const std::size_t n = y.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Eigen::VectorXd params = model.parameters();
  Eigen::VectorXd grad;
  Eigen::MatrixXd xb;
  std::vector<double> yb;
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += tc.batch_size) {
      const std::size_t end = std::min(n, start + static_cast<std::size_t>(tc.batch_size));
      const auto bsize = static_cast<Eigen::Index>(end - start);
      xb.resize(bsize, x.cols());
      yb.resize(end - start);
      for (std::size_t i = start; i < end; ++i) {
        xb.row(static_cast<Eigen::Index>(i - start)) = x.row(static_cast<Eigen::Index>(order[i]));
        yb[i - start] = y[order[i]];
      }
      const double loss =
          model.loss_and_gradient(xb, yb, bins, cfg.lambda_b, tc.weight_decay, grad);
      if (!std::isfinite(loss) || !grad.allFinite()) {
        std::ostringstream msg;
        msg << "training diverged (" << to_string(loss_kind) << " loss) at epoch " << epoch
            << ", batch " << batches << ": loss=" << loss
            << ", learning_rate=" << tc.learning_rate;
        throw NumericalError(msg.str());
      }
      ++batches;
      if (tc.grad_clip > 0.0) {
        const double norm = grad.norm();
        if (norm > tc.grad_clip) grad *= tc.grad_clip / norm;
      }
      params -= tc.learning_rate * grad;
      model.set_parameters(params);
    }
  }
  return model;
}

double r_squared(std::span<const double> truth, std::span<const double> pred) {
  if (truth.size() != pred.size() || truth.empty()) {
    throw ValidationError("r_squared needs equal-length, non-empty vectors");
  }
  const double mean = std::accumulate(truth.begin(), truth.end(), 0.0) / truth.size();
  double sse = 0.0, sst = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    sse += (truth[i] - pred[i]) * (truth[i] - pred[i]);
    sst += (truth[i] - mean) * (truth[i] - mean);
  }
  if (!(sst > 0.0)) throw ValidationError("r_squared is undefined for constant truth");
  return 1.0 - sse / sst;
}

// --- sweep ----------------------------------------------------------------

std::string_view to_string(SweepMethod m) {
  switch (m) {
    case SweepMethod::kSample: return "sample";
    case SweepMethod::kNaive: return "naive";
    case SweepMethod::kLcc: return "lcc";
    case SweepMethod::kTweedie: return "tweedie";
    case SweepMethod::kPpi: return "ppi";
    case SweepMethod::kRatledge: return "ratledge";
  }
  return "?";
}

SweepMethod parse_sweep_method(std::string_view text) {
  for (SweepMethod m : {SweepMethod::kSample, SweepMethod::kNaive, SweepMethod::kLcc,
                        SweepMethod::kTweedie, SweepMethod::kPpi, SweepMethod::kRatledge}) {
    if (to_string(m) == text) return m;
  }
  throw ParseError("unknown sweep method '" + std::string(text) + "'");
}

const std::vector<SweepMethod>& report_order() {
  static const std::vector<SweepMethod> order = {
      SweepMethod::kTweedie, SweepMethod::kLcc,   SweepMethod::kPpi,
      SweepMethod::kRatledge, SweepMethod::kNaive, SweepMethod::kSample};
  return order;
}

namespace {

double iptw_on(std::span<const double> values, const Population& pop,
               std::span<const double> propensity) {
  std::vector<WeightedArmValue> rows(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    rows[i] = {values[i], pop.a[i], propensity[i]};
  }
  return iptw_ate(rows).tau_hat;
}

std::vector<bool> draw_labels(const Population& pop, double frac, bool stratified, Rng& rng) {
  const std::size_t n = pop.size();
  std::vector<bool> labeled(n, false);
  auto pick = [&](std::vector<std::size_t> idx) {
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto k = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(frac * static_cast<double>(idx.size()))));
    for (std::size_t i = 0; i < std::min(k, idx.size()); ++i) labeled[idx[i]] = true;
  };
  if (stratified) {
    for (int arm : {0, 1}) {
      std::vector<std::size_t> idx;
      for (std::size_t i = 0; i < n; ++i) {
        if (pop.a[i] == arm) idx.push_back(i);
      }
      if (!idx.empty()) pick(std::move(idx));
    }
  } else {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    pick(std::move(idx));
  }
  return labeled;
}

double ppi_iptw(std::span<const double> pred, const Population& pop,
                std::span<const double> propensity, const std::vector<bool>& labeled) {
  double arm_mean[2] = {0.0, 0.0};
  for (int arm : {0, 1}) {
    std::vector<double> all_pred, all_w, lab_w;
    std::vector<LabeledPrediction> lab;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (pop.a[i] != arm) continue;
      const double w = arm == 1 ? 1.0 / propensity[i] : 1.0 / (1.0 - propensity[i]);
      all_pred.push_back(pred[i]);
      all_w.push_back(w);
      if (labeled[i]) {
        lab.push_back({pred[i], pop.y[i]});
        lab_w.push_back(w);
      }
    }
    if (lab.empty()) {
      throw ValidationError(std::string("PPI: no labeled units in the ") +
                            (arm == 1 ? "treated" : "control") + " arm");
    }
    arm_mean[arm] = ppi_weighted_mean(lab, lab_w, all_pred, all_w);
  }
  return arm_mean[1] - arm_mean[0];
}

std::vector<CalibrationPair> make_pairs(std::span<const double> y, std::span<const double> pred) {
  std::vector<CalibrationPair> pairs(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) pairs[i] = {y[i], pred[i]};
  return pairs;
}

}  // namespace

std::vector<SweepResult> run_tau(const SimConfig& cfg, std::size_t index) {
  cfg.validate();
  if (index >= cfg.tau_grid.size()) throw ValidationError("tau index out of range");
  const double tau = cfg.tau_grid[index];
  const std::uint64_t base = derive_seed(cfg.seed, index);
  Rng embed_rng(derive_seed(base, kStreamEmbedder));
  Rng train_pop_rng(derive_seed(base, kStreamTrainPopulation));
  Rng mse_rng(derive_seed(base, kStreamMseTraining));
  Rng ratledge_rng(derive_seed(base, kStreamRatledgeTraining));
  Rng test_pop_rng(derive_seed(base, kStreamTestPopulation));
  Rng label_rng(derive_seed(base, kStreamLabels));

  const auto embedder = FrozenEmbedder::random(cfg.hidden_dim, cfg.embed_dim, embed_rng);

  // Upstream: population rows are i.i.d., so a prefix split is a random split.
  const Population train = generate_population(cfg, tau, cfg.n_train, embedder, train_pop_rng);
  const auto n_cal = static_cast<Eigen::Index>(
      std::llround(cfg.calibration_frac * static_cast<double>(cfg.n_train)));
  const Eigen::Index n_fit = cfg.n_train - n_cal;
  if (n_fit < 5 || n_cal < 3) throw ValidationError("train/calibration split is too small");
  const Eigen::MatrixXd x_fit = train.x.topRows(n_fit);
  const Eigen::MatrixXd x_cal = train.x.bottomRows(n_cal);
  const std::span<const double> y_fit(train.y.data(), static_cast<std::size_t>(n_fit));
  const std::span<const double> y_cal(train.y.data() + n_fit, static_cast<std::size_t>(n_cal));

  const Predictor mse = train_predictor(x_fit, y_fit, LossKind::kMse, cfg, mse_rng);
  const Predictor ratledge = train_predictor(x_fit, y_fit, LossKind::kRatledge, cfg, ratledge_rng);

  const auto cal_pairs = make_pairs(y_cal, to_std(mse.predict(x_cal)));
  const LinearFit cal_fit = fit_linear_calibration(cal_pairs);
  double sigma2 = estimate_noise_variance(cal_pairs, cal_fit);
  if (cfg.sigma_source == SigmaSource::kTraining) {
    const auto fit_pairs = make_pairs(y_fit, to_std(mse.predict(x_fit)));
    sigma2 = estimate_noise_variance(fit_pairs, fit_linear_calibration(fit_pairs));
  }
  const CalibrationArtifact artifact =
      build_artifact(cal_fit, sigma2, static_cast<std::int64_t>(n_cal), cfg.sigma_source);

  // Downstream: fresh population, same embedder, true propensities.
  const Population test = generate_population(cfg, tau, cfg.n_test, embedder, test_pop_rng);
  std::vector<double> propensity(test.size());
  std::vector<double> iptw_weight(test.size());
  for (std::size_t i = 0; i < test.size(); ++i) {
    propensity[i] = sigmoid_propensity(test.c[i]);
    iptw_weight[i] = test.a[i] == 1 ? 1.0 / propensity[i] : 1.0 / (1.0 - propensity[i]);
  }
  const auto pred = to_std(mse.predict(test.x));
  const auto pred_ratledge = to_std(ratledge.predict(test.x));
  const double r2 = r_squared(test.y, pred);
  const double r2_ratledge = r_squared(test.y, pred_ratledge);

  std::vector<double> lcc(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) lcc[i] = lcc_correct(artifact, pred[i]);

  const double k_tweedie = cfg.tweedie_k == TweedieK::kUnit ? 1.0 : artifact.k_hat;
  const auto tweedie = tweedie_correct_arms(
      pred, test.a, k_tweedie, artifact.sigma2_hat,
      cfg.tweedie_weighted_score ? std::span<const double>(iptw_weight) : std::span<const double>(),
      cfg.score);

  const auto labeled = draw_labels(test, cfg.ppi_label_frac, cfg.ppi_stratified, label_rng);

  return {
      {tau, SweepMethod::kSample, iptw_on(test.y, test, propensity), r2},
      {tau, SweepMethod::kNaive, iptw_on(pred, test, propensity), r2},
      {tau, SweepMethod::kLcc, iptw_on(lcc, test, propensity), r2},
      {tau, SweepMethod::kTweedie, iptw_on(tweedie, test, propensity), r2},
      {tau, SweepMethod::kPpi, ppi_iptw(pred, test, propensity, labeled), r2},
      {tau, SweepMethod::kRatledge, iptw_on(pred_ratledge, test, propensity), r2_ratledge},
  };
}

std::vector<SweepResult> run_sweep(const SimConfig& cfg) {
  cfg.validate();
  const std::size_t points = cfg.tau_grid.size();
  std::vector<std::vector<SweepResult>> slots(points);
  std::vector<std::exception_ptr> errors(points);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < points; i = next++) {
      try {
        slots[i] = run_tau(cfg, i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const auto workers = static_cast<std::size_t>(std::min<std::size_t>(cfg.threads, points));
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(worker);
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  std::vector<SweepResult> out;
  out.reserve(points * 6);
  for (auto& s : slots) out.insert(out.end(), s.begin(), s.end());
  return out;
}

std::vector<MethodSummary> summarize(std::span<const SweepResult> results) {
  std::vector<MethodSummary> out;
  for (SweepMethod m : report_order()) {
    std::vector<double> truth, est;
    for (const auto& r : results) {
      if (r.method != m) continue;
      truth.push_back(r.tau_true);
      est.push_back(r.tau_hat);
    }
    if (truth.empty()) continue;
    out.push_back({m, calibration_regression(truth, est)});
  }
  if (out.empty()) throw ValidationError("summary: no sweep results");
  return out;
}

double mean_r2_oos(std::span<const SweepResult> results) {
  double sum = 0.0;
  int n = 0;
  for (const auto& r : results) {
    if (r.method != SweepMethod::kNaive) continue;
    sum += r.r2_oos;
    ++n;
  }
  if (n == 0) throw ValidationError("no naive rows to average r2 over");
  return sum / n;
}

std::string sweep_to_csv(std::span<const SweepResult> results) {
  std::string out = "tau_true,method,tau_hat,r2_oos\n";
  for (const auto& r : results) {
    out += csv::format_double(r.tau_true);
    out += ',';
    out += to_string(r.method);
    out += ',';
    out += csv::format_double(r.tau_hat);
    out += ',';
    out += csv::format_double(r.r2_oos);
    out += '\n';
  }
  return out;
}

std::vector<SweepResult> sweep_from_csv(std::string_view text) {
  const auto t = csv::Table::parse(text, "sweep");
  const auto c_tau = t.require_column("tau_true");
  const auto c_method = t.require_column("method");
  const auto c_hat = t.require_column("tau_hat");
  const auto c_r2 = t.find_column("r2_oos");
  std::vector<SweepResult> out;
  out.reserve(t.rows());
  for (std::size_t r = 0; r < t.rows(); ++r) {
    out.push_back({t.number(r, c_tau), parse_sweep_method(t.cell(r, c_method)),
                   t.number(r, c_hat), c_r2 ? t.number(r, *c_r2) : 0.0});
  }
  return out;
}

std::string summary_to_csv(std::span<const MethodSummary> summary) {
  std::string out = "method,mae,slope,f_statistic,p_value,intercept,pearson_r,n_points\n";
  for (const auto& s : summary) {
    const auto& d = s.diagnostic;
    out += std::string(to_string(s.method)) + ',' + csv::format_double(d.mae) + ',' +
           csv::format_double(d.slope) + ',' + csv::format_double(d.f_statistic) + ',' +
           csv::format_double(d.p_value) + ',' + csv::format_double(d.intercept) + ',' +
           csv::format_double(d.pearson_r) + ',' + std::to_string(d.n_points) + '\n';
  }
  return out;
}

std::string summary_to_json(std::span<const MethodSummary> summary) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& s : summary) {
    const auto& d = s.diagnostic;
    nlohmann::ordered_json row;
    row["method"] = std::string(to_string(s.method));
    row["mae"] = d.mae;
    row["slope"] = d.slope;
    // JSON has no infinity; the perfect-fit sentinel is written as a string.
    if (std::isinf(d.f_statistic)) {
      row["f_statistic"] = "inf";
    } else {
      row["f_statistic"] = d.f_statistic;
    }
    row["p_value"] = d.p_value;
    row["intercept"] = d.intercept;
    row["pearson_r"] = d.pearson_r;
    row["n_points"] = d.n_points;
    arr.push_back(row);
  }
  return arr.dump(2) + "\n";
}

}  // namespace debias::sim
