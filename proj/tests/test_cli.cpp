#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cml/experiment.hpp"

using namespace cml;
using config::ExperimentConfig;
using config::Json;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.good());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// metrics stream with the wall-clock key removed, for rerun comparisons
std::string metrics_without_wall(const std::filesystem::path& dir) {
  std::ifstream f(dir / "metrics.jsonl");
  REQUIRE(f.good());
  std::string line, out;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    Json j = Json::parse(line);
    j.erase("wall_ms");
    out += config::dump17(j, 0) + "\n";
  }
  return out;
}

std::vector<std::vector<double>> read_tsv(const std::filesystem::path& p) {
  std::ifstream f(p);
  REQUIRE(f.good());
  std::string line;
  REQUIRE(std::getline(f, line));  // header
  std::vector<std::vector<double>> rows;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::istringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, '\t')) row.push_back(std::strtod(cell.c_str(), nullptr));
    rows.push_back(row);
  }
  return rows;
}

}  // namespace

TEST_CASE("default configs validate and round trip through emit/parse") {
  for (const std::string& name :
       {"quad-verify", "ridge-hyperopt", "sinusoid-mlp", "sinusoid-spiking", "wheel-bandit"}) {
    std::string text = config::emit_config(config::default_config(name));
    ExperimentConfig back = config::parse_config(text);
    CHECK(back.experiment == name);
    CHECK(back.raw == text);
    CHECK(config::emit_config(back) == text);
  }
}

TEST_CASE("a minimal config inherits the experiment defaults") {
  ExperimentConfig c = config::parse_config(R"({"experiment": "sinusoid-mlp"})");
  CHECK(c.estimator == "symmetric");
  CHECK(c.beta == 1.0);
  CHECK(c.outer_steps == 500);
  CHECK(c.meta_batch == 4);
  CHECK(c.model.widths == std::vector<int>{1, 40, 40, 1});
  CHECK(c.out == "runs/sinusoid-mlp");
}

TEST_CASE("validation collects every problem instead of stopping at the first") {
  std::string text = R"({
    "experiment": "sinusoid-mlp",
    "beta": -0.5,
    "meta_batch": 0,
    "zzz": 1
  })";
  try {
    config::parse_config(text);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    std::string msg = e.what();
    CHECK(msg.find("3 problem(s)") != std::string::npos);
    CHECK(msg.find("beta: must be positive") != std::string::npos);
    CHECK(msg.find("meta_batch must be >= 1") != std::string::npos);
    CHECK(msg.find("zzz: unknown key") != std::string::npos);
  }
}

TEST_CASE("unknown keys are flagged at every nesting level") {
  std::string text = R"({
    "experiment": "wheel-bandit",
    "stray_top": 1,
    "inner": {"stray_inner": 1},
    "model": {"stray_model": 1},
    "task": {"stray_task": 1}
  })";
  try {
    config::parse_config(text);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    std::string msg = e.what();
    CHECK(msg.find("4 problem(s)") != std::string::npos);
    CHECK(msg.find("stray_top: unknown key") != std::string::npos);
    CHECK(msg.find("inner.stray_inner: unknown key") != std::string::npos);
    CHECK(msg.find("model.stray_model: unknown key") != std::string::npos);
    CHECK(msg.find("task.stray_task: unknown key") != std::string::npos);
  }
}

TEST_CASE("unknown experiment fails before anything else is validated") {
  try {
    config::parse_config(R"({"experiment": "frobnicate", "beta": -1})");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("unknown name 'frobnicate'") != std::string::npos);
  }
  CHECK_THROWS_AS(config::parse_config("not json"), ParseError);
  CHECK_THROWS_AS(config::parse_config("[1, 2]"), ParseError);
}

TEST_CASE("quad run reproduces the curve library exactly and echoes its config") {
  std::string text = R"({
  "experiment": "quad-verify",
  "seed": 31,
  "beta": 0.5,
  "model": {"n": 12},
  "task": {"budgets": [5, -1], "betas": [0.01, 0.1, 1.0]},
  "out": "cli_test_runs/quad-a"
})";
  ExperimentConfig cfg = config::parse_config(text);
  experiment::RunResult rr = experiment::run_experiment(cfg);

  CHECK(slurp(rr.dir / "config.json") == text);
  CHECK(rr.summary.at("config_raw").get<std::string>() == text);
  CHECK(rr.summary.at("version").get<std::string>() == config::version_string);
  CHECK(rr.summary.at("config") == config::config_json(cfg));

  Rng rng = Rng::from_key(cfg.seed, "instance", 0);
  theory::CurveCfg cc;
  cc.model = theory::quad_default_instance(rng, cfg.model.n, cfg.model.lambda);
  cc.budgets = cfg.task.budgets;
  cc.betas = cfg.task.betas;
  std::vector<theory::CurveRow> want = theory::error_curve(cc);
  std::vector<std::vector<double>> got = read_tsv(rr.dir / "error_curve.tsv");
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < want.size(); ++i) {
    CHECK(got[i][0] == static_cast<double>(want[i].steps));
    CHECK(got[i][1] == want[i].beta);
    CHECK(got[i][2] == want[i].err);
    CHECK(got[i][3] == want[i].err_rel);
    CHECK(got[i][6] == want[i].grad_free);
  }
  CHECK(rr.summary.at("final").at("rows").get<long>() == 6);

  // a rerun into a fresh directory emits identical streams modulo wall time
  ExperimentConfig cfg2 = cfg;
  cfg2.out = "cli_test_runs/quad-b";
  experiment::RunResult r2 = experiment::run_experiment(cfg2);
  CHECK(metrics_without_wall(rr.dir) == metrics_without_wall(r2.dir));
  CHECK(slurp(rr.dir / "error_curve.tsv") == slurp(r2.dir / "error_curve.tsv"));
}

TEST_CASE("ridge run logs one metrics record per outer step") {
  std::string text = R"({
  "experiment": "ridge-hyperopt",
  "seed": 7,
  "outer_steps": 2,
  "inner": {"steps": 60, "tol": 0, "opt": "gd", "lr": 0.05},
  "nudged": {"steps": 60, "tol": 0, "opt": "gd", "lr": 0.05},
  "task": {"rows": 40, "features": 5},
  "model": {"hidden": 6},
  "out": "cli_test_runs/ridge"
})";
  experiment::RunResult rr = experiment::run_experiment(config::parse_config(text));
  std::ifstream mf(rr.dir / "metrics.jsonl");
  std::string line;
  std::vector<Json> records;
  while (std::getline(mf, line))
    if (!line.empty()) records.push_back(Json::parse(line));
  REQUIRE(records.size() == 2);
  for (std::size_t i = 0; i < records.size(); ++i) {
    CHECK(records[i].at("step").get<long>() == static_cast<long>(i));
    CHECK(records[i].contains("eval_loss"));
    CHECK(records[i].contains("delta_norm"));
    CHECK(records[i].contains("grad_free"));
  }
  CHECK(read_tsv(rr.dir / "eval_curve.tsv").size() == 2);
  CHECK(rr.summary.at("final").contains("eval_mse"));
  CHECK(rr.summary.at("final").at("lambda_mean").get<double>() >= 0.0);
}

TEST_CASE("spiking smoke run reports holdout and scratch medians") {
  std::string text = R"({
  "experiment": "sinusoid-spiking",
  "seed": 3,
  "outer_steps": 1,
  "meta_batch": 1,
  "inner": {"steps": 5, "tol": 0, "opt": "adam", "lr": 0.001},
  "nudged": {"steps": 2, "tol": 0, "opt": "adam", "lr": 0.003},
  "model": {"n_rec": 5},
  "task": {"n_learn": 2, "n_eval": 2, "holdout": 2},
  "out": "cli_test_runs/spiking"
})";
  experiment::RunResult rr = experiment::run_experiment(config::parse_config(text));
  const Json& final = rr.summary.at("final");
  CHECK(final.at("holdout_median").get<double>() >= 0.0);
  CHECK(final.at("scratch_median").get<double>() >= 0.0);
  CHECK(read_tsv(rr.dir / "eval_curve.tsv").size() == 1);
}

TEST_CASE("wheel bandit smoke run keeps the regret books consistent") {
  std::string text = R"({
  "experiment": "wheel-bandit",
  "seed": 5,
  "outer_steps": 2,
  "meta_batch": 2,
  "inner": {"steps": 10, "tol": 0, "opt": "adam", "lr": 0.0001},
  "nudged": {"steps": 5, "tol": 0, "opt": "adam", "lr": 0.03},
  "model": {"widths": [2, 8, 5]},
  "task": {"pool": 4, "n_learn": 32, "n_eval": 8, "horizon": 400,
           "refit_every": 100, "refit_steps": 20, "refit_batch": 64},
  "out": "cli_test_runs/wheel"
})";
  experiment::RunResult rr = experiment::run_experiment(config::parse_config(text));
  std::vector<std::vector<double>> trace = read_tsv(rr.dir / "regret_trace.tsv");
  REQUIRE(trace.size() == 400);
  const Json& final = rr.summary.at("final");
  double greedy = final.at("greedy_normalized").get<double>();
  CHECK(trace.back()[3] == greedy);
  CHECK(trace.back()[1] / trace.back()[2] == Catch::Approx(greedy).epsilon(1e-12));
  // cumulative columns never decrease
  for (std::size_t i = 1; i < trace.size(); ++i) {
    CHECK(trace[i][1] >= trace[i - 1][1]);
    CHECK(trace[i][2] >= trace[i - 1][2]);
  }
  double random = final.at("random_normalized").get<double>();
  CHECK(random > 0.8);
  CHECK(random < 1.2);
}

TEST_CASE("a one-cell sweep matches a plain run") {
  std::string base = R"({
  "experiment": "quad-verify",
  "seed": 11,
  "model": {"n": 6},
  "task": {"budgets": [-1], "betas": [0.05, 0.5]},
  "out": "cli_test_runs/sweep-one"
})";
  experiment::SweepResult sr = experiment::run_sweep(base, R"({"seed": [11]})", "", 1);
  REQUIRE(sr.cells.size() == 1);
  CHECK(sr.cells[0].status == "ok");

  ExperimentConfig cfg = config::parse_config(base);
  cfg.out = "cli_test_runs/sweep-one-plain";
  experiment::RunResult rr = experiment::run_experiment(cfg);
  CHECK(metrics_without_wall(sr.dir / "cell_000") == metrics_without_wall(rr.dir));
  CHECK(sr.cells[0].final == rr.summary.at("final"));
}

TEST_CASE("sweep cells order closed-form errors with beta and aggregate them") {
  std::string base = R"({
  "experiment": "quad-verify",
  "seed": 13,
  "model": {"n": 10},
  "task": {"budgets": [-1]},
  "out": "cli_test_runs/sweep-beta"
})";
  std::string grid = R"({"task.betas": [[0.01], [0.1], [1.0]]})";
  experiment::SweepResult sr = experiment::run_sweep(base, grid, "", 1);
  REQUIRE(sr.cells.size() == 3);
  std::vector<double> errs;
  for (const auto& cell : sr.cells) {
    REQUIRE(cell.status == "ok");
    errs.push_back(cell.final.at("min_err").get<double>());
  }
  // at exact solutions the estimator error grows with beta
  CHECK(errs[0] < errs[1]);
  CHECK(errs[1] < errs[2]);

  std::string agg = slurp(sr.dir / "aggregate.csv");
  CHECK(static_cast<int>(std::count(agg.begin(), agg.end(), '\n')) == 4);
  CHECK(agg.find("cell,task.betas,status") == 0);
  CHECK(agg.find("min_err") != std::string::npos);
}

TEST_CASE("sweeping reserved keys is rejected and bad cells do not stop the sweep") {
  std::string base = R"({"experiment": "quad-verify", "model": {"n": 4},
                         "task": {"budgets": [-1], "betas": [0.5]},
                         "out": "cli_test_runs/sweep-bad"})";
  CHECK_THROWS_AS(experiment::run_sweep(base, R"({"out": ["a", "b"]})", "", 1), ContractError);
  CHECK_THROWS_AS(experiment::run_sweep(base, R"({"threads": [1, 2]})", "", 1), ContractError);
  CHECK_THROWS_AS(experiment::run_sweep(base, R"({"seed": []})", "", 1), ContractError);

  experiment::SweepResult sr = experiment::run_sweep(base, R"({"model.n": [4, -2]})", "", 1);
  REQUIRE(sr.cells.size() == 2);
  CHECK(sr.cells[0].status == "ok");
  CHECK(sr.cells[1].status.find("error:") == 0);
  std::string agg = slurp(sr.dir / "aggregate.csv");
  CHECK(static_cast<int>(std::count(agg.begin(), agg.end(), '\n')) == 3);
  CHECK(agg.find("error:") != std::string::npos);
}

TEST_CASE("deterministic mode forces single-threaded reductions") {
  ExperimentConfig cfg = config::default_config("sinusoid-mlp");
  cfg.threads = 8;
  REQUIRE(setenv("CML_DETERMINISTIC", "1", 1) == 0);
  CHECK(experiment::effective_threads(cfg) == 1);
  REQUIRE(unsetenv("CML_DETERMINISTIC") == 0);
  CHECK(experiment::effective_threads(cfg) == 8);
}
