#include "debias/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "debias/calibration.hpp"
#include "debias/corrections.hpp"
#include "debias/csv.hpp"
#include "debias/data_model.hpp"
#include "debias/diagnostics.hpp"
#include "debias/errors.hpp"
#include "debias/estimators.hpp"
#include "debias/simulation.hpp"

namespace debias {

namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write '" + path.string() + "'");
  out << text;
}

void require_file(const std::string& path, const char* what) {
  if (!fs::is_regular_file(path)) {
    throw ValidationError(std::string(what) + " '" + path + "' does not exist");
  }
}

void require_parent_dir(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty() && !fs::is_directory(parent)) {
    throw ValidationError("output directory '" + parent.string() + "' does not exist");
  }
}

std::string fixed(double v, int digits) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

void print_summary_table(std::ostream& out, std::span<const sim::MethodSummary> summary) {
  out << std::left << std::setw(10) << "method" << std::right << std::setw(10) << "MAE"
      << std::setw(10) << "slope" << std::setw(14) << "F" << std::setw(10) << "p" << '\n';
  for (const auto& s : summary) {
    const auto& d = s.diagnostic;
    out << std::left << std::setw(10) << sim::to_string(s.method) << std::right
        << std::setw(10) << fixed(d.mae, 3) << std::setw(10) << fixed(d.slope, 3)
        << std::setw(14) << fixed(d.f_statistic, 3) << std::setw(10) << fixed(d.p_value, 3)
        << '\n';
  }
}

// --- calibrate ---------------------------------------------------------

struct CalibrateArgs {
  std::string pairs;
  std::string out;
  std::string sigma_source = "calibration";
};

void cmd_calibrate(const CalibrateArgs& args, bool sigma_defaulted, std::ostream& out) {
  require_file(args.pairs, "pairs file");
  require_parent_dir(args.out);
  const SigmaSource source = parse_sigma_source(args.sigma_source);
  if (sigma_defaulted) out << "[default] sigma_source=" << to_string(source) << '\n';

  const auto pairs = load_calibration_pairs(args.pairs);
  const auto fit = fit_linear_calibration(pairs);
  const double sigma2 = estimate_noise_variance(pairs, fit);
  const auto artifact =
      build_artifact(fit, sigma2, static_cast<std::int64_t>(pairs.size()), source);
  save_artifact(artifact, args.out);

  out << "k_hat=" << csv::format_double(artifact.k_hat) << '\n'
      << "m_hat=" << csv::format_double(artifact.m_hat) << '\n'
      << "sigma2_hat=" << csv::format_double(artifact.sigma2_hat) << '\n'
      << "n_cal=" << artifact.n_cal << '\n'
      << "r_squared=" << csv::format_double(fit.r_squared) << '\n'
      << "sigma_source=" << to_string(artifact.sigma_source) << '\n'
      << "wrote " << args.out << '\n';
}

// --- correct -----------------------------------------------------------

struct CorrectArgs {
  std::string trial;
  std::string method;
  std::string out;
  std::string artifact;
  std::optional<double> k;
  std::optional<double> m;
  std::optional<double> sigma2;
  std::optional<double> density_floor;
  std::optional<double> score_clamp;
  bool weight_by_propensity = false;
};

void cmd_correct(const CorrectArgs& args, std::ostream& out) {
  require_file(args.trial, "trial file");
  require_parent_dir(args.out);
  const Method method = parse_method(args.method);
  if (method == Method::kPpi || method == Method::kOracle) {
    throw ValidationError("correct: --method must be naive, lcc or tweedie");
  }
  std::optional<CalibrationArtifact> loaded;
  if (!args.artifact.empty()) {
    require_file(args.artifact, "artifact file");
    loaded = load_artifact(args.artifact);
  }

  CalibrationArtifact params;
  params.n_cal = loaded ? loaded->n_cal : 3;
  if (method == Method::kLcc) {
    if (!loaded && !args.k) throw ValidationError("correct --method lcc needs --artifact or --k");
    params.k_hat = args.k.value_or(loaded ? loaded->k_hat : 1.0);
    if (args.m) {
      params.m_hat = *args.m;
    } else if (loaded) {
      params.m_hat = loaded->m_hat;
    } else {
      params.m_hat = 0.0;
      out << "[default] m=0\n";
    }
  } else if (method == Method::kTweedie) {
    if (args.k) {
      params.k_hat = *args.k;
    } else if (loaded) {
      params.k_hat = loaded->k_hat;
    } else {
      params.k_hat = 1.0;
      out << "[default] k=1 (no artifact supplied)\n";
    }
    if (args.sigma2) {
      params.sigma2_hat = *args.sigma2;
    } else if (loaded) {
      params.sigma2_hat = loaded->sigma2_hat;
    } else {
      throw ValidationError("correct --method tweedie needs --artifact or --sigma2");
    }
    if (!(params.sigma2_hat >= 0.0)) throw ValidationError("sigma2 must be >= 0");
  }
  if (!(params.k_hat > 0.0)) throw ValidationError("k must be > 0");

  TweedieOptions tweedie;
  tweedie.weight_by_propensity = args.weight_by_propensity;
  if (args.density_floor) {
    tweedie.score.density_floor_frac = *args.density_floor;
  } else if (method == Method::kTweedie) {
    out << "[default] density_floor_frac=" << csv::format_double(tweedie.score.density_floor_frac)
        << '\n';
  }
  if (args.score_clamp) {
    tweedie.score.score_clamp = *args.score_clamp;
  } else if (method == Method::kTweedie) {
    out << "[default] score_clamp=2/bandwidth (per arm)\n";
  }

  const TrialData trial = load_trial(args.trial);
  const auto corrected = correct_trial(trial, params, method, tweedie);

  bool any_conf = false, any_prop = false;
  for (const auto& r : trial.records) {
    any_conf = any_conf || r.confounder.has_value();
    any_prop = any_prop || r.propensity.has_value();
  }
  std::string text = "unit_id,y_pred,treatment,y_corrected";
  if (any_conf) text += ",confounder";
  if (any_prop) text += ",propensity";
  text += ",correction\n";
  for (std::size_t i = 0; i < trial.records.size(); ++i) {
    const auto& r = trial.records[i];
    text += r.unit_id + ',' + csv::format_double(r.y_pred) + ',' + std::to_string(r.treatment) +
            ',' + csv::format_double(corrected[i].value);
    if (any_conf) text += ',' + (r.confounder ? csv::format_double(*r.confounder) : "");
    if (any_prop) text += ',' + (r.propensity ? csv::format_double(*r.propensity) : "");
    text += ',' + std::string(to_string(method)) + '\n';
  }
  write_file(args.out, text);
  out << "method=" << to_string(method) << " k=" << csv::format_double(params.k_hat);
  if (method == Method::kLcc) out << " m=" << csv::format_double(params.m_hat);
  if (method == Method::kTweedie) out << " sigma2=" << csv::format_double(params.sigma2_hat);
  out << " units=" << corrected.size() << '\n' << "wrote " << args.out << '\n';
}

// --- estimate ----------------------------------------------------------

struct EstimateArgs {
  std::string input;
  std::string estimator;
  std::string labeled;
  std::string propensity;
  std::string value_column;
  std::string out;
};

std::vector<LabeledOutcome> load_labels(const std::string& path) {
  const auto t = csv::Table::read(path);
  const auto c_id = t.require_column("unit_id");
  const auto c_true = t.require_column("y_true");
  std::vector<LabeledOutcome> out;
  out.reserve(t.rows());
  for (std::size_t r = 0; r < t.rows(); ++r) out.push_back({t.cell(r, c_id), t.number(r, c_true)});
  return out;
}

void cmd_estimate(const EstimateArgs& args, std::ostream& out) {
  require_file(args.input, "input file");
  if (!args.out.empty()) require_parent_dir(args.out);
  const std::string& est = args.estimator;
  if (est != "dm" && est != "iptw" && est != "ppi") {
    throw ValidationError("estimate: --estimator must be dm, iptw or ppi");
  }
  if (est == "ppi" && args.labeled.empty()) {
    throw ValidationError("estimate --estimator ppi needs --labeled <labels.csv>");
  }
  if (est != "ppi" && !args.labeled.empty()) {
    throw ValidationError("estimate: --labeled is only accepted with --estimator ppi");
  }

  const auto table = csv::Table::read(args.input);
  const TrialData trial = load_trial(args.input);
  trial.require_both_arms();

  AteReport report;
  if (est == "ppi") {
    require_file(args.labeled, "labels file");
    std::optional<PropensitySpec> prop;
    if (!args.propensity.empty()) prop = PropensitySpec::parse(args.propensity);
    report = ppi_ate(trial, load_labels(args.labeled), prop);
  } else {
    std::string column = args.value_column;
    if (column.empty()) {
      column = table.find_column("y_corrected") ? "y_corrected" : "y_pred";
      out << "[default] value_column=" << column << '\n';
    }
    const auto col = table.require_column(column);
    Method method = Method::kNaive;
    if (column != "y_pred") {
      if (const auto c = table.find_column("correction"); c && table.rows() > 0) {
        method = parse_method(table.cell(0, *c));
      }
    }
    if (est == "dm") {
      std::vector<ArmValue> values;
      for (std::size_t r = 0; r < table.rows(); ++r) {
        values.push_back({table.number(r, col), trial.records[r].treatment});
      }
      report = diff_in_means(values);
    } else {
      PropensitySpec spec = PropensitySpec::known_column();
      if (args.propensity.empty()) {
        out << "[default] propensity=column\n";
      } else {
        spec = PropensitySpec::parse(args.propensity);
      }
      std::vector<WeightedArmValue> values;
      for (std::size_t r = 0; r < table.rows(); ++r) {
        values.push_back(
            {table.number(r, col), trial.records[r].treatment, spec.resolve(trial.records[r])});
      }
      report = iptw_ate(values);
    }
    report.method = method;
  }

  out << "method=" << to_string(report.method) << " estimator=" << to_string(report.estimator)
      << " tau_hat=" << csv::format_double(report.tau_hat) << " n_treated=" << report.n_treated
      << " n_control=" << report.n_control << '\n';
  if (!args.out.empty()) {
    write_file(args.out, "method,estimator,tau_hat,n_treated,n_control\n" +
                             std::string(to_string(report.method)) + ',' +
                             std::string(to_string(report.estimator)) + ',' +
                             csv::format_double(report.tau_hat) + ',' +
                             std::to_string(report.n_treated) + ',' +
                             std::to_string(report.n_control) + '\n');
    out << "wrote " << args.out << '\n';
  }
}

// --- simulate ----------------------------------------------------------

struct SimulateArgs {
  std::string config;
  std::string out_dir;
  std::vector<double> tau_grid;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
};

void cmd_simulate(const SimulateArgs& args, std::ostream& out) {
  sim::SimConfig cfg;
  if (args.config.empty()) {
    out << "[default] using built-in simulation config\n";
  } else {
    require_file(args.config, "config file");
    cfg = sim::SimConfig::from_json(read_file(args.config));
  }
  if (!args.tau_grid.empty()) {
    if (args.tau_grid.size() != 3) {
      throw ValidationError("--tau-grid takes three values: lo hi count");
    }
    const double count = args.tau_grid[2];
    if (count < 1 || count != std::floor(count)) {
      throw ValidationError("--tau-grid count must be a positive integer");
    }
    cfg.tau_grid = sim::SimConfig::linspace(args.tau_grid[0], args.tau_grid[1],
                                            static_cast<int>(count));
  }
  if (args.seed) cfg.seed = *args.seed;
  if (args.threads) cfg.threads = *args.threads;
  cfg.validate();
  if (!fs::is_directory(args.out_dir)) fs::create_directories(args.out_dir);

  // Echo the resolved configuration; thread count is not part of the result.
  auto resolved = nlohmann::ordered_json::parse(cfg.to_json());
  resolved.erase("threads");
  const std::string resolved_text = resolved.dump(2) + "\n";
  out << "config: " << resolved.dump() << '\n';
  out << "threads=" << cfg.threads << '\n';

  const auto results = sim::run_sweep(cfg);
  const fs::path dir(args.out_dir);
  write_file(dir / "config_used.json", resolved_text);
  write_file(dir / "sweep.csv", sim::sweep_to_csv(results));
  out << "wrote " << (dir / "sweep.csv").string() << " (" << results.size() << " rows)\n";
  out << "mean_r2_oos=" << fixed(sim::mean_r2_oos(results), 4) << '\n';

  std::map<double, int> distinct;
  for (double t : cfg.tau_grid) distinct[t]++;
  if (distinct.size() < 2 || cfg.tau_grid.size() < 4) {
    out << "summary skipped: the calibration regression needs at least 4 grid points with "
           "varying tau\n";
    for (const auto& r : results) {
      out << "tau=" << csv::format_double(r.tau_true) << ' ' << sim::to_string(r.method)
          << " tau_hat=" << csv::format_double(r.tau_hat) << '\n';
    }
    return;
  }
  const auto summary = sim::summarize(results);
  write_file(dir / "summary.csv", sim::summary_to_csv(summary));
  write_file(dir / "summary.json", sim::summary_to_json(summary));
  print_summary_table(out, summary);
  out << "wrote " << (dir / "summary.csv").string() << '\n';
}

// --- report ------------------------------------------------------------

struct ReportArgs {
  std::string sweep;
  std::string out;
  std::string json;
};

void cmd_report(const ReportArgs& args, std::ostream& out) {
  require_file(args.sweep, "sweep file");
  if (!args.out.empty()) require_parent_dir(args.out);
  if (!args.json.empty()) require_parent_dir(args.json);
  const auto results = sim::sweep_from_csv(read_file(args.sweep));
  const auto summary = sim::summarize(results);
  print_summary_table(out, summary);
  if (!args.out.empty()) {
    write_file(args.out, sim::summary_to_csv(summary));
    out << "wrote " << args.out << '\n';
  }
  if (!args.json.empty()) {
    write_file(args.json, sim::summary_to_json(summary));
    out << "wrote " << args.json << '\n';
  }
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Shrinkage debiasing for ML-predicted outcomes in treatment-effect estimation",
               "debias"};
  app.require_subcommand(1);

  CalibrateArgs cal;
  auto* c_cal = app.add_subcommand("calibrate", "Fit the shrinkage line on labeled pairs");
  c_cal->add_option("--pairs", cal.pairs, "CSV with y_true,y_pred")->required();
  c_cal->add_option("--out", cal.out, "Artifact JSON to write")->required();
  auto* sigma_opt = c_cal->add_option("--sigma-source", cal.sigma_source,
                                      "calibration (default) or training");

  CorrectArgs cor;
  auto* c_cor = app.add_subcommand("correct", "Debias trial predictions");
  c_cor->add_option("--trial", cor.trial, "Trial CSV")->required();
  c_cor->add_option("--method", cor.method, "naive, lcc or tweedie")->required();
  c_cor->add_option("--out", cor.out, "Corrected CSV to write")->required();
  c_cor->add_option("--artifact", cor.artifact, "Calibration artifact JSON");
  c_cor->add_option("--k", cor.k, "Override the shrinkage slope");
  c_cor->add_option("--m", cor.m, "Override the intercept (lcc)");
  c_cor->add_option("--sigma2", cor.sigma2, "Override the noise variance (tweedie)");
  c_cor->add_option("--density-floor", cor.density_floor, "Score density floor fraction");
  c_cor->add_option("--score-clamp", cor.score_clamp, "Absolute score clamp");
  c_cor->add_flag("--weight-by-propensity", cor.weight_by_propensity,
                  "Fit arm densities on IPTW-weighted predictions (propensity column)");

  EstimateArgs est;
  auto* c_est = app.add_subcommand("estimate", "Estimate the average treatment effect");
  c_est->add_option("--input", est.input, "Trial or corrected CSV")->required();
  c_est->add_option("--estimator", est.estimator, "dm, iptw or ppi")->required();
  c_est->add_option("--labeled", est.labeled, "CSV with unit_id,y_true (ppi only)");
  c_est->add_option("--propensity", est.propensity, "column, sigmoid or const:<p>");
  c_est->add_option("--value-column", est.value_column, "Outcome column to use");
  c_est->add_option("--out", est.out, "Report CSV to write");

  SimulateArgs simargs;
  std::uint64_t seed = 0;
  int threads = 0;
  auto* c_sim = app.add_subcommand("simulate", "Run the tau-sweep benchmark");
  c_sim->add_option("--config", simargs.config, "Simulation config JSON");
  c_sim->add_option("--out", simargs.out_dir, "Output directory")->required();
  c_sim->add_option("--tau-grid", simargs.tau_grid, "lo hi count")->expected(3);
  auto* seed_opt = c_sim->add_option("--seed", seed, "Override the seed");
  auto* threads_opt = c_sim->add_option("--threads", threads, "Worker threads");

  ReportArgs rep;
  auto* c_rep = app.add_subcommand("report", "Diagnostics table from a sweep CSV");
  c_rep->add_option("--sweep", rep.sweep, "Sweep CSV")->required();
  c_rep->add_option("--out", rep.out, "Summary CSV to write");
  c_rep->add_option("--json", rep.json, "Summary JSON to write");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  }

  try {
    if (c_cal->parsed()) {
      cmd_calibrate(cal, sigma_opt->count() == 0, out);
    } else if (c_cor->parsed()) {
      cmd_correct(cor, out);
    } else if (c_est->parsed()) {
      cmd_estimate(est, out);
    } else if (c_sim->parsed()) {
      if (seed_opt->count() > 0) simargs.seed = seed;
      if (threads_opt->count() > 0) simargs.threads = threads;
      cmd_simulate(simargs, out);
    } else if (c_rep->parsed()) {
      cmd_report(rep, out);
    }
  } catch (const ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  }
  return kExitOk;
}

}  // namespace debias
