#include "doctest.h"

#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "debias/cli.hpp"
#include "debias/csv.hpp"
#include "debias/data_model.hpp"
#include "helpers.hpp"

using namespace debias;

namespace {

struct Run {
  int code = -1;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "debias");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Run r;
  r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

bool contains(const std::string& hay, const std::string& needle) {
  return hay.find(needle) != std::string::npos;
}

const char* kTrial =
    "unit_id,y_pred,treatment,confounder,propensity\n"
    "a,3,1,0.2,0.5\n"
    "b,5,1,-0.1,0.5\n"
    "c,1,0,0.4,0.5\n"
    "d,3,0,-0.3,0.5\n"
    "e,2.5,1,0.0,0.5\n"
    "f,0.5,0,1.0,0.5\n";

std::string small_sim_config() {
  return R"({"n_train":800,"n_test":400,"embed_dim":8,"hidden_dim":8,"embed_noise":0.1,
             "training":{"hidden":8,"epochs":10,"learning_rate":0.05},"tau_range":{"lo":-1,"hi":1,"count":5}})";
}

}  // namespace

TEST_CASE("usage") {
  CHECK(run({"--help"}).code == 0);
  CHECK(contains(run({"--help"}).out, "calibrate"));
  CHECK(run({}).code == 2);
  CHECK(run({"frobnicate"}).code == 2);
  CHECK(run({"calibrate", "--pairs", "x.csv"}).code == 2);
  const auto missing = run({"calibrate", "--pairs", "/nonexistent/p.csv", "--out", "a.json"});
  CHECK(missing.code == 2);
  CHECK(contains(missing.err, "does not exist"));
}

TEST_CASE("calibrate") {
  testing::TempDir dir;
  testing::write_text(dir / "line.csv", "y_true,y_pred\n0,10\n10,15\n20,20\n30,25\n");
  const auto r = run({"calibrate", "--pairs", (dir / "line.csv").string(), "--out",
                      (dir / "art.json").string()});
  REQUIRE(r.code == 0);
  CHECK(contains(r.out, "[default] sigma_source=calibration"));
  CHECK(contains(r.out, "r_squared="));
  const auto art = load_artifact(dir / "art.json");
  CHECK(art.k_hat == doctest::Approx(0.5));
  CHECK(art.m_hat == doctest::Approx(10.0));
  CHECK(art.sigma2_hat == doctest::Approx(0.0).epsilon(1e-20));
  CHECK(art.n_cal == 4);

  const auto t = run({"calibrate", "--pairs", (dir / "line.csv").string(), "--out",
                      (dir / "t.json").string(), "--sigma-source", "training"});
  CHECK(t.code == 0);
  CHECK_FALSE(contains(t.out, "[default]"));
  CHECK(load_artifact(dir / "t.json").sigma_source == SigmaSource::kTraining);

  testing::write_text(dir / "flat.csv", "y_true,y_pred\n5,1\n5,2\n5,3\n");
  const auto flat = run({"calibrate", "--pairs", (dir / "flat.csv").string(), "--out",
                         (dir / "f.json").string()});
  CHECK(flat.code == 2);
  CHECK(contains(flat.err, "degenerate"));
}

TEST_CASE("calibrate on 50,000 simulated pairs") {
  testing::TempDir dir;
  std::mt19937_64 rng(11);
  std::normal_distribution<double> y(50, 10), e(0, 2);
  std::string text = "y_true,y_pred\n";
  for (int i = 0; i < 50000; ++i) {
    const double yi = y(rng);
    text += csv::format_double(yi) + "," + csv::format_double(0.8 * yi + e(rng)) + "\n";
  }
  testing::write_text(dir / "p.csv", text);
  REQUIRE(run({"calibrate", "--pairs", (dir / "p.csv").string(), "--out",
               (dir / "a.json").string()})
              .code == 0);
  const double s2 = load_artifact(dir / "a.json").sigma2_hat;
  CHECK(s2 >= 3.8);
  CHECK(s2 <= 4.2);
}

TEST_CASE("correct") {
  testing::TempDir dir;
  testing::write_text(dir / "trial.csv", kTrial);
  const std::string trial = (dir / "trial.csv").string();
  CalibrationArtifact art;
  art.k_hat = 0.5;
  art.m_hat = 0.0;
  art.sigma2_hat = 0.4;
  art.n_cal = 10;
  save_artifact(art, dir / "art.json");

  SUBCASE("naive copies") {
    REQUIRE(run({"correct", "--trial", trial, "--method", "naive", "--out",
                 (dir / "n.csv").string()})
                .code == 0);
    const auto t = csv::Table::read(dir / "n.csv");
    CHECK(t.header()[0] == "unit_id");
    CHECK(t.header()[3] == "y_corrected");
    for (std::size_t r = 0; r < t.rows(); ++r) {
      CHECK(t.number(r, *t.find_column("y_corrected")) == t.number(r, *t.find_column("y_pred")));
    }
  }
  SUBCASE("lcc doubles with k 0.5") {
    REQUIRE(run({"correct", "--trial", trial, "--method", "lcc", "--artifact",
                 (dir / "art.json").string(), "--out", (dir / "l.csv").string()})
                .code == 0);
    const auto t = csv::Table::read(dir / "l.csv");
    for (std::size_t r = 0; r < t.rows(); ++r) {
      CHECK(t.number(r, 3) == doctest::Approx(2 * t.number(r, 1)));
    }
  }
  SUBCASE("tweedie without an artifact") {
    const auto r = run({"correct", "--trial", trial, "--method", "tweedie", "--sigma2", "0.3",
                        "--out", (dir / "tw.csv").string()});
    REQUIRE(r.code == 0);
    CHECK(contains(r.out, "[default] k=1"));
    CHECK(contains(r.out, "[default] density_floor_frac="));
    const auto no_sigma =
        run({"correct", "--trial", trial, "--method", "tweedie", "--out", (dir / "x.csv").string()});
    CHECK(no_sigma.code == 2);
    CHECK(contains(no_sigma.err, "sigma2"));
  }
  SUBCASE("tweedie from the artifact") {
    const auto r = run({"correct", "--trial", trial, "--method", "tweedie", "--artifact",
                        (dir / "art.json").string(), "--weight-by-propensity", "--out",
                        (dir / "tw.csv").string()});
    REQUIRE(r.code == 0);
    CHECK_FALSE(contains(r.out, "[default] k=1"));
  }
  SUBCASE("rejections") {
    CHECK(run({"correct", "--trial", trial, "--method", "ppi", "--out", (dir / "x.csv").string()})
              .code == 2);
    CHECK(run({"correct", "--trial", trial, "--method", "lcc", "--out", (dir / "x.csv").string()})
              .code == 2);
    testing::write_text(dir / "leak.csv", "unit_id,y_pred,treatment,y_true\na,1,1,2\nb,2,0,1\n");
    CHECK(run({"correct", "--trial", (dir / "leak.csv").string(), "--method", "naive", "--out",
               (dir / "x.csv").string()})
              .code == 2);
    CHECK(run({"correct", "--trial", trial, "--method", "naive", "--out",
               (dir / "no_such_dir" / "x.csv").string()})
              .code == 2);
  }
}

TEST_CASE("estimate") {
  testing::TempDir dir;
  testing::write_text(dir / "trial.csv", kTrial);
  const std::string trial = (dir / "trial.csv").string();

  // treated {3, 5, 2.5}, control {1, 3, 0.5}
  const auto dm = run({"estimate", "--input", trial, "--estimator", "dm", "--out",
                       (dir / "r.csv").string()});
  REQUIRE(dm.code == 0);
  CHECK(contains(dm.out, "[default] value_column=y_pred"));
  const auto rep = csv::Table::read(dir / "r.csv");
  CHECK(rep.number(0, *rep.find_column("tau_hat")) == doctest::Approx(2.0));
  CHECK(rep.cell(0, *rep.find_column("estimator")) == "diff_in_means");

  const auto iptw = run({"estimate", "--input", trial, "--estimator", "iptw", "--propensity",
                         "const:0.5", "--out", (dir / "i.csv").string()});
  REQUIRE(iptw.code == 0);
  CHECK(csv::Table::read(dir / "i.csv").cell(0, 2) == rep.cell(0, 2));

  CHECK(run({"estimate", "--input", trial, "--estimator", "iptw"}).code == 0);
  CHECK(run({"estimate", "--input", trial, "--estimator", "iptw", "--propensity", "sigmoid"})
            .code == 0);

  const auto ppi = run({"estimate", "--input", trial, "--estimator", "ppi"});
  CHECK(ppi.code == 2);
  CHECK(contains(ppi.err, "--labeled"));

  testing::write_text(dir / "labels.csv", "unit_id,y_true\na,4\nc,1\n");
  const auto with_labels = run({"estimate", "--input", trial, "--estimator", "ppi", "--labeled",
                                (dir / "labels.csv").string(), "--out", (dir / "p.csv").string()});
  REQUIRE(with_labels.code == 0);
  CHECK(contains(with_labels.out, "method=ppi"));
  // treated 3.5 - (3 - 4), control 1.5 - 0
  CHECK(csv::Table::read(dir / "p.csv").number(0, 2) == doctest::Approx(3.5 + 1.0 - 1.5));

  CHECK(run({"estimate", "--input", trial, "--estimator", "ols"}).code == 2);

  SUBCASE("corrected input") {
    CalibrationArtifact art;
    art.k_hat = 0.5;
    art.n_cal = 5;
    save_artifact(art, dir / "a.json");
    REQUIRE(run({"correct", "--trial", trial, "--method", "lcc", "--artifact",
                 (dir / "a.json").string(), "--out", (dir / "c.csv").string()})
                .code == 0);
    const auto r = run({"estimate", "--input", (dir / "c.csv").string(), "--estimator", "dm"});
    REQUIRE(r.code == 0);
    CHECK(contains(r.out, "[default] value_column=y_corrected"));
    CHECK(contains(r.out, "method=lcc"));
    CHECK(contains(r.out, "tau_hat=4"));
  }
}

TEST_CASE("simulate and report") {
  testing::TempDir dir;
  testing::write_text(dir / "sim.json", small_sim_config());
  const std::string cfg = (dir / "sim.json").string();

  const auto a = run({"simulate", "--config", cfg, "--out", (dir / "a").string()});
  REQUIRE(a.code == 0);
  const auto b = run({"simulate", "--config", cfg, "--out", (dir / "b").string(), "--threads", "3"});
  REQUIRE(b.code == 0);
  for (const char* f : {"sweep.csv", "summary.csv", "summary.json", "config_used.json"}) {
    const auto fa = testing::read_text(dir / "a" / f);
    CHECK_FALSE(fa.empty());
    CHECK(fa == testing::read_text(dir / "b" / f));
  }
  const auto sweep = csv::Table::read(dir / "a" / "sweep.csv");
  CHECK(sweep.rows() == 5 * 6);

  const auto seeded = run({"simulate", "--config", cfg, "--out", (dir / "c").string(), "--seed", "99"});
  REQUIRE(seeded.code == 0);
  CHECK(testing::read_text(dir / "c" / "sweep.csv") != testing::read_text(dir / "a" / "sweep.csv"));

  const auto single = run({"simulate", "--config", cfg, "--out", (dir / "one").string(),
                           "--tau-grid", "0", "0", "1"});
  REQUIRE(single.code == 0);
  CHECK(contains(single.out, "summary skipped"));
  CHECK(contains(single.out, "tweedie tau_hat="));
  CHECK_FALSE(std::filesystem::exists(dir / "one" / "summary.csv"));

  CHECK(run({"simulate", "--config", cfg, "--out", (dir / "bad").string(), "--tau-grid", "0", "1"})
            .code == 2);
  testing::write_text(dir / "typo.json", R"({"n_trian":10})");
  CHECK(run({"simulate", "--config", (dir / "typo.json").string(), "--out", (dir / "t").string()})
            .code == 2);

  const auto rep = run({"report", "--sweep", (dir / "a" / "sweep.csv").string(), "--out",
                        (dir / "s.csv").string(), "--json", (dir / "s.json").string()});
  REQUIRE(rep.code == 0);
  CHECK(testing::read_text(dir / "s.csv") == testing::read_text(dir / "a" / "summary.csv"));
  CHECK(testing::read_text(dir / "s.json") == testing::read_text(dir / "a" / "summary.json"));
}

TEST_CASE("report on constructed sweeps") {
  testing::TempDir dir;
  std::string perfect = "tau_true,method,tau_hat,r2_oos\n";
  std::string half = perfect;
  for (int i = 0; i < 11; ++i) {
    const double t = -2.0 + 0.4 * i;
    perfect += csv::format_double(t) + ",tweedie," + csv::format_double(t) + ",0.5\n";
    half += csv::format_double(t) + ",naive," + csv::format_double(0.5 * t) + ",0.5\n";
  }
  testing::write_text(dir / "p.csv", perfect);
  testing::write_text(dir / "h.csv", half);
  REQUIRE(run({"report", "--sweep", (dir / "p.csv").string(), "--out", (dir / "ps.csv").string()})
              .code == 0);
  const auto ps = csv::Table::read(dir / "ps.csv");
  CHECK(ps.number(0, *ps.find_column("slope")) == doctest::Approx(1.0));
  CHECK(ps.number(0, *ps.find_column("p_value")) == 1.0);

  REQUIRE(run({"report", "--sweep", (dir / "h.csv").string(), "--out", (dir / "hs.csv").string()})
              .code == 0);
  const auto hs = csv::Table::read(dir / "hs.csv");
  CHECK(hs.number(0, *hs.find_column("slope")) == doctest::Approx(0.5));
  CHECK(hs.cell(0, *hs.find_column("f_statistic")) == "inf");
}
