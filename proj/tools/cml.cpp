// Benchmark driver: run one experiment, sweep a config grid, or verify the
// acceptance battery. Exit code 0 only when everything succeeded.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cml/experiment.hpp"
#include "cml/verify.hpp"

namespace {

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f.good()) throw cml::ParseError("cannot read " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

struct Overrides {
  std::string out;
  long long seed = -1;
  int threads = 0;
};

cml::config::ExperimentConfig load_config(const std::string& path, const Overrides& ov) {
  cml::config::ExperimentConfig cfg = cml::config::parse_config(slurp(path));
  if (!ov.out.empty()) cfg.out = ov.out;
  if (ov.seed >= 0) cfg.seed = static_cast<std::uint64_t>(ov.seed);
  if (ov.threads > 0) cfg.threads = ov.threads;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"contrastive meta-learning benchmarks"};
  app.require_subcommand(1);

  Overrides ov;
  std::string cfg_path, grid_path;

  CLI::App* run = app.add_subcommand("run", "run one experiment from a JSON config");
  run->add_option("config,--config", cfg_path, "config file");
  run->add_option("--out", ov.out, "output directory override");
  run->add_option("--seed", ov.seed, "master seed override");
  run->add_option("--threads", ov.threads, "worker thread override");

  CLI::App* sweep = app.add_subcommand("sweep", "cartesian sweep over config values");
  sweep->add_option("config,--config", cfg_path, "base config file");
  sweep->add_option("grid", grid_path, "grid file: JSON object of dotted paths to value arrays");
  sweep->add_option("--out", ov.out, "sweep root directory override");
  sweep->add_option("--threads", ov.threads, "concurrent sweep cells");

  CLI::App* verify = app.add_subcommand("verify", "run the acceptance battery");
  std::vector<int> criteria;
  verify->add_option("--criterion", criteria, "criterion numbers to run (default: all)")
      ->check(CLI::Range(1, 9));

  CLI11_PARSE(app, argc, argv);

  const char* det = std::getenv("CML_DETERMINISTIC");
  if (det && std::string(det) == "1") ov.threads = 1;

  try {
    if (run->parsed()) {
      if (cfg_path.empty()) {
        std::cerr << "run needs a config file\n";
        return 1;
      }
      cml::config::ExperimentConfig cfg = load_config(cfg_path, ov);
      cml::experiment::RunResult rr = cml::experiment::run_experiment(cfg);
      std::cout << cml::config::dump17(rr.summary) << "\n";
      return 0;
    }
    if (sweep->parsed()) {
      if (cfg_path.empty() || grid_path.empty()) {
        std::cerr << "sweep needs a config file and a grid file\n";
        return 1;
      }
      int threads = ov.threads > 0 ? ov.threads : 1;
      cml::experiment::SweepResult sr =
          cml::experiment::run_sweep(slurp(cfg_path), slurp(grid_path), ov.out, threads);
      int failures = 0;
      for (const auto& cell : sr.cells) {
        std::cout << cell.dir << ": " << cell.status << "\n";
        if (cell.status != "ok") ++failures;
      }
      std::cout << "aggregate: " << (sr.dir / "aggregate.csv").string() << "\n";
      return failures == 0 ? 0 : 1;
    }
    std::vector<cml::verify::CriterionResult> results = cml::verify::run_criteria(criteria);
    bool all = true;
    for (const auto& r : results) {
      cml::verify::print_result(r, std::cout);
      all = all && r.pass;
    }
    return all ? 0 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
