#pragma once

#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cml/core.hpp"

namespace cml::config {

using Json = nlohmann::ordered_json;

inline constexpr const char* version_string = "0.1.0";

// ---------------------------------------------------------------- emission

// JSON serialization with every number printed through %.17g so emitted
// artifacts round-trip bit exactly. nlohmann's dump() would pick the shortest
// representation instead, so the walk is done by hand.
inline void dump17_into(const Json& j, std::string& out, int indent, int depth) {
  auto pad = [&](int d) {
    if (indent > 0) {
      out.push_back('\n');
      out.append(static_cast<std::size_t>(indent * d), ' ');
    }
  };
  switch (j.type()) {
    case Json::value_t::object: {
      if (j.empty()) {
        out += "{}";
        return;
      }
      out.push_back('{');
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (!first) out.push_back(',');
        first = false;
        pad(depth + 1);
        out += Json(it.key()).dump();
        out += indent > 0 ? ": " : ":";
        dump17_into(it.value(), out, indent, depth + 1);
      }
      pad(depth);
      out.push_back('}');
      return;
    }
    case Json::value_t::array: {
      if (j.empty()) {
        out += "[]";
        return;
      }
      out.push_back('[');
      bool first = true;
      for (const auto& v : j) {
        if (!first) out.push_back(',');
        first = false;
        pad(depth + 1);
        dump17_into(v, out, indent, depth + 1);
      }
      pad(depth);
      out.push_back(']');
      return;
    }
    case Json::value_t::number_float: {
      double d = j.get<double>();
      check_finite(d, "json number");
      out += fmt_g17(d);
      return;
    }
    default:
      out += j.dump();  // ints, bools, strings, null
      return;
  }
}

inline std::string dump17(const Json& j, int indent = 2) {
  std::string out;
  dump17_into(j, out, indent, 0);
  if (indent > 0) out.push_back('\n');
  return out;
}

// ---------------------------------------------------------------- config types

struct PhaseSpec {
  int steps = 100;
  double tol = 0.0;
  std::string opt = "gd";
  double lr = 1e-2;
};

struct OuterSpec {
  std::string opt = "adam";
  double lr = 1e-2;
};

struct MuSpec {
  int iters = 50;
  double alpha = 0.0;  // 0 = pick 1/L from power iteration
  int power_iters = 10;
  double cg_tol = 0.0;
  double fd_scale = 1e-4;
};

struct ModelSpec {
  // quadratic instance
  int n = 50;
  double lambda = 1.0;
  // consolidation meta-parameters
  double lambda_init = 1.0;
  bool learn_omega = true;
  bool learn_lambda = true;
  bool scalar_lambda = false;
  double lambda_min = 0.0;
  // dense networks
  std::vector<int> widths;
  int hidden = 20;
  // spiking network
  int n_rec = 40;
  double reg_strength = 1e-5;
  double reg_target = 0.2;
  double pseudo_gamma = 0.3;
  double lr_out_scale = 0.1;
};

struct TaskSpec {
  // quadratic curve grids
  std::vector<double> betas;
  std::vector<int> budgets{5, 10, 20, 50};
  // tabular regression
  int rows = 100;
  int features = 13;
  double learn_frac = 0.7;
  std::string csv;  // empty = synthetic source
  bool csv_header = true;
  // sinusoid episodes
  int n_learn = 10;
  int n_eval = 10;
  int holdout = 10;
  int encoder_steps = 20;
  double encoder_sigma2 = 2e-4;
  // wheel bandit
  double delta = 0.5;
  int pool = 64;
  int horizon = 20000;
  int warmup = 2;
  int refit_every = 50;
  int refit_steps = 250;
  int refit_batch = 512;
  double lr_online = 1e-4;
  double noise_sd = 0.01;
};

struct ExperimentConfig {
  std::string experiment;
  std::uint64_t seed = 1;
  std::string out;
  std::string estimator = "forward";
  double beta = 0.1;
  int outer_steps = 100;
  int meta_batch = 1;
  int threads = 1;
  bool polyak = false;
  int polyak_start = 0;
  PhaseSpec inner, nudged;
  OuterSpec outer;
  MuSpec mu;
  ModelSpec model;
  TaskSpec task;
  std::string raw;  // the exact bytes this config was parsed from
};

inline const std::set<std::string>& experiment_names() {
  static const std::set<std::string> names{"quad-verify", "ridge-hyperopt", "sinusoid-spiking",
                                          "sinusoid-mlp", "wheel-bandit"};
  return names;
}

inline const std::set<std::string>& estimator_names() {
  static const std::set<std::string> names{"forward", "symmetric", "t1t2", "neumann", "cg"};
  return names;
}

inline const std::set<std::string>& optimizer_names() {
  static const std::set<std::string> names{"gd", "sgd", "nesterov", "adam"};
  return names;
}

// Per-experiment defaults; config files only state deviations.
inline ExperimentConfig default_config(const std::string& experiment) {
  ExperimentConfig c;
  c.experiment = experiment;
  c.out = "runs/" + experiment;
  if (experiment == "quad-verify") {
    c.outer_steps = 0;
    c.beta = 0.5;
  } else if (experiment == "ridge-hyperopt") {
    c.beta = 1e-3;
    c.outer_steps = 50;
    c.inner = PhaseSpec{2000, 1e-8, "gd", 0.05};
    c.nudged = PhaseSpec{2000, 1e-8, "gd", 0.05};
    c.outer = OuterSpec{"adam", 0.05};
    c.model.learn_omega = false;
    c.model.lambda_init = 1.0;
  } else if (experiment == "sinusoid-mlp") {
    c.estimator = "symmetric";
    c.beta = 1.0;
    c.outer_steps = 500;
    c.meta_batch = 4;
    c.inner = PhaseSpec{100, 0.0, "adam", 1e-2};
    c.nudged = PhaseSpec{30, 0.0, "adam", 3e-3};
    c.outer = OuterSpec{"adam", 1e-3};
    c.model.widths = {1, 40, 40, 1};
    c.model.lambda_init = 1.0;
  } else if (experiment == "sinusoid-spiking") {
    c.estimator = "symmetric";
    c.beta = 3.0;
    c.outer_steps = 1000;
    c.meta_batch = 25;
    c.inner = PhaseSpec{500, 0.0, "adam", 1e-3};
    c.nudged = PhaseSpec{100, 0.0, "adam", 3e-3};
    c.outer = OuterSpec{"adam", 3e-3};
    c.model.lambda_init = 1e-2;
  } else if (experiment == "wheel-bandit") {
    c.beta = 0.3;
    c.outer_steps = 200;
    c.meta_batch = 8;
    c.inner = PhaseSpec{250, 0.0, "adam", 1e-4};
    c.nudged = PhaseSpec{100, 0.0, "adam", 0.03};
    c.outer = OuterSpec{"adam", 0.03};
    c.model.widths = {2, 50, 50, 5};
    c.model.lambda_init = 1e3;
  }
  return c;
}

// ---------------------------------------------------------------- validation

namespace detail {

struct Check {
  const Json& j;
  std::vector<std::string>& errs;
  std::string path;

  void fail(const std::string& key, const std::string& msg) const {
    errs.push_back((path.empty() ? key : path + "." + key) + ": " + msg);
  }

  bool has(const std::string& key) const { return j.is_object() && j.contains(key); }

  void unknown_keys(const std::set<std::string>& allowed) const {
    if (!j.is_object()) return;
    for (auto it = j.begin(); it != j.end(); ++it)
      if (!allowed.count(it.key())) fail(it.key(), "unknown key");
  }

  void number(const std::string& key, double& out, double lo, double hi,
              const char* msg = nullptr) const {
    if (!has(key)) return;
    const Json& v = j.at(key);
    if (!v.is_number()) {
      fail(key, "expected a number");
      return;
    }
    double d = v.get<double>();
    if (!std::isfinite(d) || d < lo || d > hi)
      fail(key, msg ? msg : "value out of range");
    else
      out = d;
  }

  void integer(const std::string& key, int& out, int lo, int hi,
               const char* msg = nullptr) const {
    if (!has(key)) return;
    const Json& v = j.at(key);
    double d = v.is_number() ? v.get<double>() : std::nan("");
    if (!v.is_number() || !std::isfinite(d) || d != std::floor(d)) {
      fail(key, "expected an integer");
      return;
    }
    if (d < lo || d > hi)
      fail(key, msg ? msg : "value out of range");
    else
      out = static_cast<int>(d);
  }

  void flag(const std::string& key, bool& out) const {
    if (!has(key)) return;
    if (!j.at(key).is_boolean())
      fail(key, "expected a boolean");
    else
      out = j.at(key).get<bool>();
  }

  void text(const std::string& key, std::string& out) const {
    if (!has(key)) return;
    if (!j.at(key).is_string())
      fail(key, "expected a string");
    else
      out = j.at(key).get<std::string>();
  }

  void name(const std::string& key, std::string& out, const std::set<std::string>& allowed) const {
    if (!has(key)) return;
    std::string v;
    text(key, v);
    if (v.empty()) return;
    if (!allowed.count(v))
      fail(key, "unknown name '" + v + "'");
    else
      out = v;
  }

  void number_list(const std::string& key, std::vector<double>& out, double lo,
                   const char* msg) const {
    if (!has(key)) return;
    const Json& v = j.at(key);
    if (!v.is_array()) {
      fail(key, "expected an array of numbers");
      return;
    }
    std::vector<double> vals;
    for (const auto& e : v) {
      if (!e.is_number() || !std::isfinite(e.get<double>()) || e.get<double>() < lo) {
        fail(key, msg);
        return;
      }
      vals.push_back(e.get<double>());
    }
    out = vals;
  }

  void int_list(const std::string& key, std::vector<int>& out, int lo, const char* msg) const {
    if (!has(key)) return;
    const Json& v = j.at(key);
    if (!v.is_array()) {
      fail(key, "expected an array of integers");
      return;
    }
    std::vector<int> vals;
    for (const auto& e : v) {
      double d = e.is_number() ? e.get<double>() : std::nan("");
      if (!std::isfinite(d) || d != std::floor(d) || d < lo) {
        fail(key, msg);
        return;
      }
      vals.push_back(static_cast<int>(d));
    }
    out = vals;
  }

  Check sub(const std::string& key) const {
    return Check{j.at(key), errs, path.empty() ? key : path + "." + key};
  }
};

inline void check_phase(const Check& c, PhaseSpec& p) {
  c.unknown_keys({"steps", "tol", "opt", "lr"});
  c.integer("steps", p.steps, 1, 100000000, "steps must be >= 1");
  c.number("tol", p.tol, 0.0, 1e100, "tol must be >= 0");
  c.name("opt", p.opt, optimizer_names());
  c.number("lr", p.lr, 1e-300, 1e100, "lr must be positive");
}

}  // namespace detail

// Parses and validates a config, collecting every problem instead of bailing
// at the first one. Throws ParseError listing them all.
inline ExperimentConfig parse_config(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
  if (!j.is_object()) throw ParseError("config: top level must be a JSON object");

  std::vector<std::string> errs;
  std::string experiment;
  if (!j.contains("experiment"))
    errs.push_back("experiment: required");
  else if (!j.at("experiment").is_string())
    errs.push_back("experiment: expected a string");
  else {
    experiment = j.at("experiment").get<std::string>();
    if (!experiment_names().count(experiment))
      errs.push_back("experiment: unknown name '" + experiment + "'");
  }
  if (!errs.empty()) throw ParseError("config: " + errs[0]);

  ExperimentConfig c = default_config(experiment);
  c.raw = text;
  detail::Check top{j, errs, ""};
  top.unknown_keys({"experiment", "seed", "out", "estimator", "beta", "outer_steps", "meta_batch",
                    "threads", "polyak", "polyak_start", "inner", "nudged", "outer_opt", "mu",
                    "model", "task"});

  if (top.has("seed")) {
    const Json& v = j.at("seed");
    double d = v.is_number() ? v.get<double>() : std::nan("");
    if (!v.is_number() || !std::isfinite(d) || d != std::floor(d) || d < 0)
      errs.push_back("seed: expected a non-negative integer");
    else
      c.seed = v.get<std::uint64_t>();
  }
  top.text("out", c.out);
  if (c.out.empty()) errs.push_back("out: must not be empty");
  top.name("estimator", c.estimator, estimator_names());
  top.number("beta", c.beta, -1e100, 1e100);
  top.integer("outer_steps", c.outer_steps, 0, 100000000, "outer_steps must be >= 0");
  top.integer("meta_batch", c.meta_batch, 1, 100000000, "meta_batch must be >= 1");
  top.integer("threads", c.threads, 1, 4096, "threads must be >= 1");
  top.flag("polyak", c.polyak);
  top.integer("polyak_start", c.polyak_start, 0, 100000000, "polyak_start must be >= 0");

  if (top.has("inner")) detail::check_phase(top.sub("inner"), c.inner);
  if (top.has("nudged")) detail::check_phase(top.sub("nudged"), c.nudged);
  if (top.has("outer_opt")) {
    detail::Check o = top.sub("outer_opt");
    o.unknown_keys({"opt", "lr"});
    o.name("opt", c.outer.opt, optimizer_names());
    o.number("lr", c.outer.lr, 1e-300, 1e100, "lr must be positive");
  }
  if (top.has("mu")) {
    detail::Check m = top.sub("mu");
    m.unknown_keys({"iters", "alpha", "power_iters", "cg_tol", "fd_scale"});
    m.integer("iters", c.mu.iters, 1, 100000000, "iters must be >= 1");
    m.number("alpha", c.mu.alpha, 0.0, 1e100, "alpha must be >= 0");
    m.integer("power_iters", c.mu.power_iters, 1, 100000000, "power_iters must be >= 1");
    m.number("cg_tol", c.mu.cg_tol, 0.0, 1e100, "cg_tol must be >= 0");
    m.number("fd_scale", c.mu.fd_scale, 1e-300, 1.0, "fd_scale must be in (0, 1]");
  }

  bool contrastive = c.estimator == "forward" || c.estimator == "symmetric";
  if (contrastive && !(c.beta > 0.0)) errs.push_back("beta: must be positive");
  if (experiment == "quad-verify" && !contrastive)
    errs.push_back("estimator: quad-verify supports forward and symmetric only");
  if (experiment == "ridge-hyperopt" && c.meta_batch != 1)
    errs.push_back("meta_batch: ridge-hyperopt is a single-task experiment");

  if (top.has("model")) {
    detail::Check m = top.sub("model");
    auto synapse_keys = [&](std::set<std::string> extra) {
      extra.insert({"lambda_init", "learn_omega", "learn_lambda", "scalar_lambda", "lambda_min"});
      m.unknown_keys(extra);
      m.number("lambda_init", c.model.lambda_init, 0.0, 1e100, "lambda_init must be >= 0");
      m.flag("learn_omega", c.model.learn_omega);
      m.flag("learn_lambda", c.model.learn_lambda);
      m.flag("scalar_lambda", c.model.scalar_lambda);
      m.number("lambda_min", c.model.lambda_min, 0.0, 1e100, "lambda_min must be >= 0");
    };
    if (experiment == "quad-verify") {
      m.unknown_keys({"n", "lambda"});
      m.integer("n", c.model.n, 1, 100000, "n must be >= 1");
      m.number("lambda", c.model.lambda, 0.0, 1e100, "lambda must be >= 0");
    } else if (experiment == "ridge-hyperopt") {
      synapse_keys({"hidden"});
      m.integer("hidden", c.model.hidden, 1, 100000, "hidden must be >= 1");
    } else if (experiment == "sinusoid-mlp" || experiment == "wheel-bandit") {
      synapse_keys({"widths"});
      m.int_list("widths", c.model.widths, 1, "widths must be positive integers");
    } else if (experiment == "sinusoid-spiking") {
      synapse_keys({"n_rec", "reg_strength", "reg_target", "pseudo_gamma", "lr_out_scale"});
      m.integer("n_rec", c.model.n_rec, 1, 100000, "n_rec must be >= 1");
      m.number("reg_strength", c.model.reg_strength, 0.0, 1e100, "reg_strength must be >= 0");
      m.number("reg_target", c.model.reg_target, 0.0, 1.0, "reg_target must be in [0, 1]");
      m.number("pseudo_gamma", c.model.pseudo_gamma, 1e-300, 1e100,
               "pseudo_gamma must be positive");
      m.number("lr_out_scale", c.model.lr_out_scale, 1e-300, 1e100,
               "lr_out_scale must be positive");
    }
  }
  if (c.model.widths.size() == 1) errs.push_back("model.widths: needs at least two layers");
  if (experiment == "sinusoid-mlp" && !c.model.widths.empty() &&
      (c.model.widths.front() != 1 || c.model.widths.back() != 1))
    errs.push_back("model.widths: sinusoid regression maps one input to one output");
  if (experiment == "wheel-bandit" && !c.model.widths.empty() &&
      (c.model.widths.front() != 2 || c.model.widths.back() != 5))
    errs.push_back("model.widths: bandit values map a 2-d context to 5 actions");

  if (top.has("task")) {
    detail::Check t = top.sub("task");
    if (experiment == "quad-verify") {
      t.unknown_keys({"betas", "budgets"});
      t.number_list("betas", c.task.betas, 1e-300, "betas must be positive numbers");
      t.int_list("budgets", c.task.budgets, -1, "budgets must be integers >= -1");
      for (int b : c.task.budgets)
        if (b == 0) {
          errs.push_back("task.budgets: 0 steps is not a budget (-1 means exact)");
          break;
        }
    } else if (experiment == "ridge-hyperopt") {
      t.unknown_keys({"rows", "features", "learn_frac", "csv", "csv_header"});
      t.integer("rows", c.task.rows, 10, 100000000, "rows must be >= 10");
      t.integer("features", c.task.features, 1, 100000, "features must be >= 1");
      t.number("learn_frac", c.task.learn_frac, 1e-6, 1.0 - 1e-6,
               "learn_frac must be inside (0, 1)");
      t.text("csv", c.task.csv);
      t.flag("csv_header", c.task.csv_header);
    } else if (experiment == "sinusoid-mlp" || experiment == "sinusoid-spiking") {
      std::set<std::string> keys{"n_learn", "n_eval", "holdout"};
      if (experiment == "sinusoid-spiking") keys.insert({"encoder_steps", "encoder_sigma2"});
      t.unknown_keys(keys);
      t.integer("n_learn", c.task.n_learn, 1, 100000000, "n_learn must be >= 1");
      t.integer("n_eval", c.task.n_eval, 1, 100000000, "n_eval must be >= 1");
      t.integer("holdout", c.task.holdout, 1, 100000000, "holdout must be >= 1");
      if (experiment == "sinusoid-spiking") {
        t.integer("encoder_steps", c.task.encoder_steps, 1, 100000000,
                  "encoder_steps must be >= 1");
        t.number("encoder_sigma2", c.task.encoder_sigma2, 1e-300, 1e100,
                 "encoder_sigma2 must be positive");
      }
    } else if (experiment == "wheel-bandit") {
      t.unknown_keys({"delta", "pool", "n_learn", "n_eval", "horizon", "warmup", "refit_every",
                      "refit_steps", "refit_batch", "lr_online", "noise_sd"});
      t.number("delta", c.task.delta, 0.0, 1.0, "delta must be in [0, 1]");
      t.integer("pool", c.task.pool, 1, 100000000, "pool must be >= 1");
      t.integer("n_learn", c.task.n_learn, 1, 100000000, "n_learn must be >= 1");
      t.integer("n_eval", c.task.n_eval, 1, 100000000, "n_eval must be >= 1");
      t.integer("horizon", c.task.horizon, 10, 100000000, "horizon must be >= 10");
      t.integer("warmup", c.task.warmup, 0, 100000000, "warmup must be >= 0");
      t.integer("refit_every", c.task.refit_every, 1, 100000000, "refit_every must be >= 1");
      t.integer("refit_steps", c.task.refit_steps, 0, 100000000, "refit_steps must be >= 0");
      t.integer("refit_batch", c.task.refit_batch, 1, 100000000, "refit_batch must be >= 1");
      t.number("lr_online", c.task.lr_online, 1e-300, 1e100, "lr_online must be positive");
      t.number("noise_sd", c.task.noise_sd, 0.0, 1e100, "noise_sd must be >= 0");
    }
  }
  if (!c.model.learn_omega && !c.model.learn_lambda && experiment != "quad-verify")
    errs.push_back("model: nothing to meta-learn (both learn_omega and learn_lambda off)");

  if (!errs.empty()) {
    std::string msg = "config: " + std::to_string(errs.size()) + " problem(s)";
    for (const auto& e : errs) msg += "\n  " + e;
    throw ParseError(msg);
  }
  return c;
}

// Canonical form: every key the experiment understands, defaults included.
inline Json config_json(const ExperimentConfig& c) {
  Json j;
  j["experiment"] = c.experiment;
  j["seed"] = c.seed;
  j["out"] = c.out;
  j["estimator"] = c.estimator;
  j["beta"] = c.beta;
  j["outer_steps"] = c.outer_steps;
  j["meta_batch"] = c.meta_batch;
  j["threads"] = c.threads;
  j["polyak"] = c.polyak;
  j["polyak_start"] = c.polyak_start;
  auto phase = [](const PhaseSpec& p) {
    Json o;
    o["steps"] = p.steps;
    o["tol"] = p.tol;
    o["opt"] = p.opt;
    o["lr"] = p.lr;
    return o;
  };
  j["inner"] = phase(c.inner);
  j["nudged"] = phase(c.nudged);
  j["outer_opt"] = Json{{"opt", c.outer.opt}, {"lr", c.outer.lr}};
  j["mu"] = Json{{"iters", c.mu.iters},
                 {"alpha", c.mu.alpha},
                 {"power_iters", c.mu.power_iters},
                 {"cg_tol", c.mu.cg_tol},
                 {"fd_scale", c.mu.fd_scale}};

  Json m, t;
  auto synapse_model = [&]() {
    m["lambda_init"] = c.model.lambda_init;
    m["learn_omega"] = c.model.learn_omega;
    m["learn_lambda"] = c.model.learn_lambda;
    m["scalar_lambda"] = c.model.scalar_lambda;
    m["lambda_min"] = c.model.lambda_min;
  };
  if (c.experiment == "quad-verify") {
    m["n"] = c.model.n;
    m["lambda"] = c.model.lambda;
    t["betas"] = c.task.betas;
    t["budgets"] = c.task.budgets;
  } else if (c.experiment == "ridge-hyperopt") {
    m["hidden"] = c.model.hidden;
    synapse_model();
    t["rows"] = c.task.rows;
    t["features"] = c.task.features;
    t["learn_frac"] = c.task.learn_frac;
    t["csv"] = c.task.csv;
    t["csv_header"] = c.task.csv_header;
  } else if (c.experiment == "sinusoid-mlp" || c.experiment == "sinusoid-spiking") {
    if (c.experiment == "sinusoid-mlp")
      m["widths"] = c.model.widths;
    else {
      m["n_rec"] = c.model.n_rec;
      m["reg_strength"] = c.model.reg_strength;
      m["reg_target"] = c.model.reg_target;
      m["pseudo_gamma"] = c.model.pseudo_gamma;
      m["lr_out_scale"] = c.model.lr_out_scale;
    }
    synapse_model();
    t["n_learn"] = c.task.n_learn;
    t["n_eval"] = c.task.n_eval;
    t["holdout"] = c.task.holdout;
    if (c.experiment == "sinusoid-spiking") {
      t["encoder_steps"] = c.task.encoder_steps;
      t["encoder_sigma2"] = c.task.encoder_sigma2;
    }
  } else if (c.experiment == "wheel-bandit") {
    m["widths"] = c.model.widths;
    synapse_model();
    t["delta"] = c.task.delta;
    t["pool"] = c.task.pool;
    t["n_learn"] = c.task.n_learn;
    t["n_eval"] = c.task.n_eval;
    t["horizon"] = c.task.horizon;
    t["warmup"] = c.task.warmup;
    t["refit_every"] = c.task.refit_every;
    t["refit_steps"] = c.task.refit_steps;
    t["refit_batch"] = c.task.refit_batch;
    t["lr_online"] = c.task.lr_online;
    t["noise_sd"] = c.task.noise_sd;
  }
  j["model"] = m;
  j["task"] = t;
  return j;
}

inline std::string emit_config(const ExperimentConfig& c) { return dump17(config_json(c)); }

}  // namespace cml::config
