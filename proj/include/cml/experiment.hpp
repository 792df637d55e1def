#pragma once

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <string>
#include <utility>
#include <vector>

#include "cml/config.hpp"
#include "cml/meta.hpp"
#include "cml/spiking.hpp"
#include "cml/synapse.hpp"
#include "cml/tasks.hpp"
#include "cml/theory.hpp"

namespace cml::experiment {

using config::ExperimentConfig;
using config::Json;

namespace fs = std::filesystem;

inline bool deterministic_env() {
  const char* v = std::getenv("CML_DETERMINISTIC");
  return v && std::string(v) == "1";
}

inline int effective_threads(const ExperimentConfig& c) {
  return deterministic_env() ? 1 : c.threads;
}

inline double now_ms() {
  using namespace std::chrono;
  return duration<double, std::milli>(steady_clock::now().time_since_epoch()).count();
}

inline OptimCfg optim_from(const std::string& name, double lr) {
  OptimCfg o;
  o.kind = opt_from_name(name);
  o.lr = lr;
  return o;
}

inline bilevel::EstimatorCfg estimator_cfg(const ExperimentConfig& c, Vec lr_scale = Vec()) {
  bilevel::EstimatorCfg e;
  e.kind = bilevel::estimator_from_name(c.estimator);
  e.beta = c.beta;
  e.free_budget = bilevel::Budget{c.inner.steps, c.inner.tol};
  e.nudged_budget = bilevel::Budget{c.nudged.steps, c.nudged.tol};
  e.inner_opt = optim_from(c.inner.opt, c.inner.lr);
  e.nudged_opt = optim_from(c.nudged.opt, c.nudged.lr);
  e.inner_lr_scale = std::move(lr_scale);
  e.mu.iters = c.mu.iters;
  e.mu.alpha = c.mu.alpha;
  e.mu.power_iters = c.mu.power_iters;
  e.mu.cg_tol = c.mu.cg_tol;
  e.mu.hvp.fd_scale = c.mu.fd_scale;
  return e;
}

// Clamps the lambda block of a flat theta vector to its floor.
inline std::function<void(Vec&)> synapse_projector(const synapse::SynapseModel& m) {
  if (!m.spec.learn_lambda) return nullptr;
  Eigen::Index tail = m.spec.scalar_lambda ? 1 : m.dim();
  double lo = m.spec.lambda_min;
  return [tail, lo](Vec& th) { th.tail(tail) = th.tail(tail).cwiseMax(lo); };
}

inline synapse::SynapseSpec synapse_spec(const ExperimentConfig& c) {
  synapse::SynapseSpec s;
  s.learn_omega = c.model.learn_omega;
  s.learn_lambda = c.model.learn_lambda;
  s.scalar_lambda = c.model.scalar_lambda;
  s.lambda_min = c.model.lambda_min;
  return s;
}

// ---------------------------------------------------------------- emission

class MetricsLog {
 public:
  void open(const fs::path& p) {
    f_.open(p, std::ios::binary);
    require(f_.good(), "cannot open metrics file " + p.string());
  }
  void line(const Json& j) {
    f_ << config::dump17(j, 0) << "\n";
    f_.flush();
  }

 private:
  std::ofstream f_;
};

class TsvLog {
 public:
  void open(const fs::path& p, const std::vector<std::string>& header) {
    f_.open(p, std::ios::binary);
    require(f_.good(), "cannot open table file " + p.string());
    for (std::size_t i = 0; i < header.size(); ++i) f_ << (i ? "\t" : "") << header[i];
    f_ << "\n";
  }
  void row(const std::vector<double>& vals) {
    for (std::size_t i = 0; i < vals.size(); ++i) f_ << (i ? "\t" : "") << fmt_g17(vals[i]);
    f_ << "\n";
    ++rows_;
  }
  long rows() const { return rows_; }

 private:
  std::ofstream f_;
  long rows_ = 0;
};

// ---------------------------------------------------------------- meta loop

using TaskFactory =
    std::function<bilevel::BilevelTask(const synapse::SynapseModel&, long step, int i)>;

struct TrainOut {
  double final_eval = 0.0;
  long steps = 0;
};

// The outer optimization: rebind the batch at the current meta snapshot, take
// one estimator-driven step, log. The model ends at the trained parameters
// (Polyak tail average when configured).
inline TrainOut train_meta(const ExperimentConfig& cfg, synapse::SynapseModel& model,
                           const bilevel::EstimatorCfg& est, const TaskFactory& make_task,
                           MetricsLog& metrics, TsvLog& curve) {
  bilevel::MetaState st;
  st.theta = model.theta_flat();
  st.outer = OptimState(optim_from(cfg.outer.opt, cfg.outer.lr));
  st.average = cfg.polyak;
  st.average_start = cfg.polyak_start;
  auto project = synapse_projector(model);
  int threads = effective_threads(cfg);
  TrainOut out;
  for (long step = 0; step < cfg.outer_steps; ++step) {
    model.set_theta_flat(st.theta);
    std::vector<bilevel::BilevelTask> batch;
    batch.reserve(static_cast<std::size_t>(cfg.meta_batch));
    for (int i = 0; i < cfg.meta_batch; ++i) batch.push_back(make_task(model, step, i));
    double t0 = now_ms();
    bilevel::MetaStepResult res = bilevel::meta_step(st, batch, est, project, threads);
    double wall = now_ms() - t0;
    double grad_free = 0.0, grad_nudged = 0.0;
    for (const auto& t : res.tasks) {
      grad_free += t.free.grad_norm;
      grad_nudged += t.nudged.grad_norm;
    }
    grad_free /= static_cast<double>(res.tasks.size());
    grad_nudged /= static_cast<double>(res.tasks.size());
    Json m;
    m["step"] = step;
    m["eval_loss"] = res.mean_eval;
    m["delta_norm"] = res.mean_delta.norm();
    m["grad_free"] = grad_free;
    m["grad_nudged"] = grad_nudged;
    m["wall_ms"] = wall;
    metrics.line(m);
    curve.row({static_cast<double>(step), res.mean_eval, res.mean_delta.norm()});
    out.final_eval = res.mean_eval;
    ++out.steps;
  }
  model.set_theta_flat(cfg.polyak ? st.averaged() : st.theta);
  return out;
}

// Free-phase learning on a bound task followed by the evaluation loss.
inline double eval_after_learning(const bilevel::BilevelTask& t,
                                  const bilevel::EstimatorCfg& est) {
  bilevel::PhaseResult free = bilevel::solve_phase(
      t, 0.0, t.init, bilevel::make_phase_opt(est.inner_opt, est.inner_lr_scale),
      est.free_budget);
  return t.eval(free.phi, nullptr);
}

inline double median(std::vector<double> v) {
  require(!v.empty(), "median of an empty set");
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------- experiments

inline std::vector<double> default_beta_grid() {
  std::vector<double> betas;
  for (int i = 0; i < 17; ++i) betas.push_back(1e-4 * std::pow(10.0, 5.0 * i / 16.0));
  return betas;
}

inline Json run_quad(const ExperimentConfig& cfg, MetricsLog& metrics, const fs::path& dir) {
  Rng rng = Rng::from_key(cfg.seed, "instance", 0);
  theory::QuadModel m = theory::quad_default_instance(rng, cfg.model.n, cfg.model.lambda);
  std::vector<double> betas = cfg.task.betas.empty() ? default_beta_grid() : cfg.task.betas;
  bool symmetric = cfg.estimator == "symmetric";

  TsvLog tsv;
  tsv.open(dir / "error_curve.tsv", {"steps", "beta", "err", "err_rel", "delta_free",
                                     "delta_nudged", "grad_free", "grad_nudged"});
  long idx = 0;
  double best_err = 0.0, best_beta = 0.0;
  int best_budget = 0;
  for (int budget : cfg.task.budgets) {
    for (double beta : betas) {
      double t0 = now_ms();
      theory::CurveCfg cc{m, {budget}, {beta}, symmetric};
      theory::CurveRow row = theory::error_curve(cc).at(0);
      double wall = now_ms() - t0;
      tsv.row({static_cast<double>(row.steps), row.beta, row.err, row.err_rel, row.delta_free,
               row.delta_nudged, row.grad_free, row.grad_nudged});
      Json line;
      line["step"] = idx;
      line["budget"] = budget;
      line["beta"] = beta;
      line["err"] = row.err;
      line["err_rel"] = row.err_rel;
      line["wall_ms"] = wall;
      metrics.line(line);
      if (idx == 0 || row.err < best_err) {
        best_err = row.err;
        best_beta = beta;
        best_budget = budget;
      }
      ++idx;
    }
  }
  Json final;
  final["rows"] = idx;
  final["min_err"] = best_err;
  final["min_err_beta"] = best_beta;
  final["min_err_budget"] = best_budget;
  return final;
}

inline Json run_ridge(const ExperimentConfig& cfg, MetricsLog& metrics, const fs::path& dir) {
  Mat X;
  Vec y;
  if (!cfg.task.csv.empty()) {
    tasks::CsvTable tb = tasks::read_csv_file(cfg.task.csv, cfg.task.csv_header);
    require(tb.data.cols() >= 2, "csv needs at least one feature and the target column");
    X = tb.data.leftCols(tb.data.cols() - 1);
    y = tb.data.col(tb.data.cols() - 1);
  } else {
    Rng rng = Rng::from_key(cfg.seed, "data", 0);
    tasks::synthetic_regression(cfg.task.rows, cfg.task.features, rng, &X, &y);
  }
  Rng split_rng = Rng::from_key(cfg.seed, "split", 0);
  tasks::SplitData split = tasks::regression_split(X, y, cfg.task.learn_frac, split_rng);

  MlpArch arch = MlpArch::dense({static_cast<int>(X.cols()), cfg.model.hidden, 1}, Act::Tanh);
  Rng init_rng = Rng::from_key(cfg.seed, "init", 0);
  Vec phi_init = mlp_flatten(mlp_init(arch, init_rng, 1.0));
  synapse::SynapseSpec spec = synapse_spec(cfg);
  // ridge pulls toward zero unless the targets themselves are learned
  Vec omega0 = spec.learn_omega ? phi_init : Vec(Vec::Zero(phi_init.size()));
  auto model = synapse::SynapseModel::make(spec, omega0, cfg.model.lambda_init);

  Mat yl = split.y_learn, ye = split.y_eval;
  auto learn_fn = tasks::mlp_flat_mse(arch, split.x_learn, yl);
  auto eval_fn = tasks::mlp_flat_mse(arch, split.x_eval, ye);
  TaskFactory factory = [&](const synapse::SynapseModel& mdl, long, int) {
    return mdl.bind("ridge", learn_fn, eval_fn, phi_init);
  };

  TsvLog curve;
  curve.open(dir / "eval_curve.tsv", {"step", "eval_mse", "delta_norm"});
  bilevel::EstimatorCfg est = estimator_cfg(cfg);
  TrainOut tr = train_meta(cfg, model, est, factory, metrics, curve);

  Json final;
  final["eval_mse"] = tr.steps > 0 ? tr.final_eval
                                   : eval_after_learning(factory(model, 0, 0), est);
  final["lambda_mean"] = model.meta.lambda.mean();
  final["lambda_max"] = model.meta.lambda.maxCoeff();
  return final;
}

inline Json run_sinusoid_mlp(const ExperimentConfig& cfg, MetricsLog& metrics,
                             const fs::path& dir) {
  MlpArch arch = MlpArch::dense(cfg.model.widths, Act::Tanh);
  Rng init_rng = Rng::from_key(cfg.seed, "init", 0);
  Vec omega0 = mlp_flatten(mlp_init(arch, init_rng, 1.0));
  auto model = synapse::SynapseModel::make(synapse_spec(cfg), omega0, cfg.model.lambda_init);

  auto task_data = [&](std::string_view component, long idx) {
    Rng rng = Rng::from_key(cfg.seed, component, static_cast<std::uint64_t>(idx));
    tasks::SinusoidTask t = tasks::sample_sinusoid(rng);
    tasks::RegressionSet learn = tasks::sinusoid_dataset(t, cfg.task.n_learn, rng);
    tasks::RegressionSet eval = tasks::sinusoid_dataset(t, cfg.task.n_eval, rng);
    return std::make_pair(learn, eval);
  };
  TaskFactory factory = [&](const synapse::SynapseModel& mdl, long step, int i) {
    long idx = step * cfg.meta_batch + i;
    auto [learn, eval] = task_data("tasks", idx);
    return mdl.bind("sin-" + std::to_string(idx), tasks::mlp_flat_mse(arch, learn.X, learn.Y),
                    tasks::mlp_flat_mse(arch, eval.X, eval.Y));
  };

  TsvLog curve;
  curve.open(dir / "eval_curve.tsv", {"step", "eval_mse", "delta_norm"});
  bilevel::EstimatorCfg est = estimator_cfg(cfg);
  TrainOut tr = train_meta(cfg, model, est, factory, metrics, curve);

  auto scratch = synapse::SynapseModel::make(synapse::SynapseSpec{}, omega0, 0.0);
  std::vector<double> meta_mse, scratch_mse;
  for (int i = 0; i < cfg.task.holdout; ++i) {
    auto [learn, eval] = task_data("holdout", i);
    auto learn_fn = tasks::mlp_flat_mse(arch, learn.X, learn.Y);
    auto eval_fn = tasks::mlp_flat_mse(arch, eval.X, eval.Y);
    meta_mse.push_back(eval_after_learning(model.bind("h", learn_fn, eval_fn), est));
    scratch_mse.push_back(eval_after_learning(scratch.bind("s", learn_fn, eval_fn), est));
  }
  Json final;
  final["final_eval"] = tr.final_eval;
  final["holdout_median"] = median(meta_mse);
  final["scratch_median"] = median(scratch_mse);
  return final;
}

inline Json run_sinusoid_spiking(const ExperimentConfig& cfg, MetricsLog& metrics,
                                 const fs::path& dir) {
  spiking::LifConfig lc;
  lc.n_rec = cfg.model.n_rec;
  spiking::PoissonEncoder enc;
  enc.steps = cfg.task.encoder_steps;
  enc.sigma2 = cfg.task.encoder_sigma2;
  lc.n_in = enc.n;
  spiking::EpropCfg ep;
  ep.reg_strength = cfg.model.reg_strength;
  ep.reg_target = cfg.model.reg_target;
  ep.pseudo_gamma = cfg.model.pseudo_gamma;

  Rng init_rng = Rng::from_key(cfg.seed, "init", 0);
  Vec omega0 = spiking::lif_flatten(spiking::lif_init(lc, init_rng));
  auto model = synapse::SynapseModel::make(synapse_spec(cfg), omega0, cfg.model.lambda_init);

  auto task_data = [&](std::string_view component, long idx) {
    Rng rng = Rng::from_key(cfg.seed, component, static_cast<std::uint64_t>(idx));
    tasks::SinusoidTask t = tasks::sample_sinusoid(rng);
    return spiking::make_sinusoid_spiking_task(lc, enc, t, cfg.task.n_learn, cfg.task.n_eval,
                                               rng);
  };
  TaskFactory factory = [&](const synapse::SynapseModel& mdl, long step, int i) {
    long idx = step * cfg.meta_batch + i;
    return spiking::bind_spiking_task(mdl, task_data("tasks", idx), ep,
                                      "spk-" + std::to_string(idx));
  };

  TsvLog curve;
  curve.open(dir / "eval_curve.tsv", {"step", "eval_mse", "delta_norm"});
  bilevel::EstimatorCfg est = estimator_cfg(cfg, spiking::lif_lr_scale(lc, cfg.model.lr_out_scale));
  TrainOut tr = train_meta(cfg, model, est, factory, metrics, curve);

  auto scratch = synapse::SynapseModel::make(synapse::SynapseSpec{}, omega0, 0.0);
  std::vector<double> meta_mse, scratch_mse;
  for (int i = 0; i < cfg.task.holdout; ++i) {
    spiking::SpikingTaskData data = task_data("holdout", i);
    meta_mse.push_back(eval_after_learning(spiking::bind_spiking_task(model, data, ep, "h"), est));
    scratch_mse.push_back(
        eval_after_learning(spiking::bind_spiking_task(scratch, data, ep, "s"), est));
  }
  Json final;
  final["final_eval"] = tr.final_eval;
  final["holdout_median"] = median(meta_mse);
  final["scratch_median"] = median(scratch_mse);
  return final;
}

inline Json run_wheel(const ExperimentConfig& cfg, MetricsLog& metrics, const fs::path& dir) {
  MlpArch arch = MlpArch::dense(cfg.model.widths, Act::Relu);
  Rng init_rng = Rng::from_key(cfg.seed, "init", 0);
  Vec omega0 = mlp_flatten(mlp_init(arch, init_rng, 1.0));
  auto model = synapse::SynapseModel::make(synapse_spec(cfg), omega0, cfg.model.lambda_init);

  tasks::WheelBandit bandit;
  bandit.delta = cfg.task.delta;
  bandit.noise_sd = cfg.task.noise_sd;
  std::vector<tasks::BanditTaskData> pool;
  pool.reserve(static_cast<std::size_t>(cfg.task.pool));
  for (int p = 0; p < cfg.task.pool; ++p) {
    Rng rng = Rng::from_key(cfg.seed, "pool", static_cast<std::uint64_t>(p));
    pool.push_back(tasks::bandit_task_data(bandit, cfg.task.n_learn, cfg.task.n_eval, rng));
  }
  TaskFactory factory = [&](const synapse::SynapseModel& mdl, long step, int i) {
    long idx = step * cfg.meta_batch + i;
    Rng rng = Rng::from_key(cfg.seed, "sched", static_cast<std::uint64_t>(idx));
    auto pick = static_cast<std::size_t>(rng.uniform_int(pool.size()));
    return tasks::bind_bandit_task(arch, mdl, pool[pick], "wheel-" + std::to_string(pick));
  };

  TsvLog curve;
  curve.open(dir / "eval_curve.tsv", {"step", "eval_mse", "delta_norm"});
  bilevel::EstimatorCfg est = estimator_cfg(cfg);
  TrainOut tr = train_meta(cfg, model, est, factory, metrics, curve);

  tasks::OnlineCfg ocfg;
  ocfg.horizon = cfg.task.horizon;
  ocfg.warmup_per_action = cfg.task.warmup;
  ocfg.refit_every = cfg.task.refit_every;
  ocfg.refit_steps = cfg.task.refit_steps;
  ocfg.refit_batch = cfg.task.refit_batch;
  ocfg.opt = optim_from("adam", cfg.task.lr_online);
  ocfg.record_trace = true;
  Rng greedy_rng = Rng::from_key(cfg.seed, "online", 0);
  tasks::OnlineResult greedy =
      tasks::bandit_online_eval(bandit, arch, model, tasks::BanditPolicy::Greedy, ocfg, greedy_rng);
  tasks::OnlineCfg rcfg = ocfg;
  rcfg.record_trace = false;
  Rng random_rng = Rng::from_key(cfg.seed, "online", 1);
  tasks::OnlineResult random = tasks::bandit_online_eval(
      bandit, arch, model, tasks::BanditPolicy::UniformRandom, rcfg, random_rng);

  TsvLog trace;
  trace.open(dir / "regret_trace.tsv", {"step", "cum_regret", "cum_random", "normalized"});
  for (std::size_t i = 0; i < greedy.ledger.trace_regret.size(); ++i) {
    double cr = greedy.ledger.trace_regret[i];
    double crand = greedy.ledger.trace_random[i];
    trace.row({static_cast<double>(i + 1), cr, crand, crand > 0.0 ? cr / crand : 0.0});
  }

  Json final;
  final["final_eval"] = tr.final_eval;
  final["greedy_normalized"] = greedy.ledger.normalized();
  final["random_normalized"] = random.ledger.normalized();
  final["greedy_cum_regret"] = greedy.ledger.cum_regret;
  return final;
}

// ---------------------------------------------------------------- run

struct RunResult {
  Json summary;
  fs::path dir;
};

// Orchestrates one experiment end to end. On failure an error record lands in
// metrics.jsonl and summary.json before the exception propagates.
inline RunResult run_experiment(const ExperimentConfig& cfg) {
  fs::path dir(cfg.out);
  fs::create_directories(dir);
  {
    std::ofstream raw(dir / "config.json", std::ios::binary);
    require(raw.good(), "cannot write into " + dir.string());
    raw << cfg.raw;
  }
  MetricsLog metrics;
  metrics.open(dir / "metrics.jsonl");

  Json summary;
  summary["version"] = config::version_string;
  summary["experiment"] = cfg.experiment;
  summary["seed"] = cfg.seed;
  summary["config"] = config::config_json(cfg);
  summary["config_raw"] = cfg.raw;

  double t0 = now_ms();
  try {
    Json final;
    if (cfg.experiment == "quad-verify")
      final = run_quad(cfg, metrics, dir);
    else if (cfg.experiment == "ridge-hyperopt")
      final = run_ridge(cfg, metrics, dir);
    else if (cfg.experiment == "sinusoid-mlp")
      final = run_sinusoid_mlp(cfg, metrics, dir);
    else if (cfg.experiment == "sinusoid-spiking")
      final = run_sinusoid_spiking(cfg, metrics, dir);
    else if (cfg.experiment == "wheel-bandit")
      final = run_wheel(cfg, metrics, dir);
    else
      throw ContractError("unknown experiment " + cfg.experiment);
    summary["final"] = final;
  } catch (const std::exception& e) {
    Json err;
    err["error"] = e.what();
    metrics.line(err);
    summary["error"] = e.what();
    summary["wall_ms_total"] = now_ms() - t0;
    std::ofstream sf(dir / "summary.json", std::ios::binary);
    sf << config::dump17(summary);
    throw;
  }
  summary["wall_ms_total"] = now_ms() - t0;
  std::ofstream sf(dir / "summary.json", std::ios::binary);
  require(sf.good(), "cannot write summary into " + dir.string());
  sf << config::dump17(summary);
  return RunResult{summary, dir};
}

// ---------------------------------------------------------------- sweep

namespace detail {

inline void set_at_path(Json& j, const std::string& path, const Json& value) {
  Json* cur = &j;
  std::size_t start = 0;
  for (;;) {
    std::size_t dot = path.find('.', start);
    std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
    require(!key.empty(), "empty segment in grid path '" + path + "'");
    if (dot == std::string::npos) {
      (*cur)[key] = value;
      return;
    }
    if (!cur->contains(key) || !(*cur)[key].is_object()) (*cur)[key] = Json::object();
    cur = &(*cur)[key];
    start = dot + 1;
  }
}

inline std::string csv_field(const Json& v) {
  std::string s;
  if (v.is_string())
    s = v.get<std::string>();
  else
    s = config::dump17(v, 0);
  bool quote = s.find_first_of(",\"\n") != std::string::npos;
  if (!quote) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out.push_back('"');
  return out;
}

}  // namespace detail

struct SweepCell {
  long index = 0;
  Json values;  // path -> value for this cell
  std::string status;
  Json final;
  std::string dir;
};

struct SweepResult {
  std::vector<SweepCell> cells;
  fs::path dir;
};

// Deterministic cartesian grid over whitelisted config paths. Cells write to
// out/cell_NNN; failures are recorded per cell and the sweep continues.
inline SweepResult run_sweep(const std::string& cfg_text, const std::string& grid_text,
                             const std::string& out_override, int threads) {
  Json base, grid;
  try {
    base = Json::parse(cfg_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
  try {
    grid = Json::parse(grid_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("grid: ") + e.what());
  }
  require(base.is_object(), "config: top level must be a JSON object");
  require(grid.is_object() && !grid.empty(), "grid: top level must be a non-empty JSON object");

  std::vector<std::string> paths;
  for (auto it = grid.begin(); it != grid.end(); ++it) {
    const std::string& p = it.key();
    if (p == "out" || p == "experiment" || p == "threads")
      throw ContractError("grid: '" + p + "' cannot be swept");
    require(it.value().is_array() && !it.value().empty(),
            "grid: '" + p + "' must map to a non-empty array");
    paths.push_back(p);
  }
  std::sort(paths.begin(), paths.end());
  long cells = 1;
  for (const auto& p : paths) {
    cells *= static_cast<long>(grid.at(p).size());
    require(cells <= 100000, "grid: too many cells");
  }

  std::string out = out_override;
  if (out.empty() && base.contains("out") && base.at("out").is_string())
    out = base.at("out").get<std::string>();
  if (out.empty() && base.contains("experiment") && base.at("experiment").is_string())
    out = "runs/" + base.at("experiment").get<std::string>() + "-sweep";
  require(!out.empty(), "sweep needs an output directory");
  fs::path root(out);
  fs::create_directories(root);

  SweepResult result;
  result.dir = root;
  result.cells.resize(static_cast<std::size_t>(cells));

  auto run_cell = [&](long idx) {
    SweepCell cell;
    cell.index = idx;
    char buf[32];
    std::snprintf(buf, sizeof buf, "cell_%03ld", idx);
    fs::path cell_dir = root / buf;
    cell.dir = cell_dir.string();
    Json cfg_json = base;
    long rem = idx;
    for (auto it = paths.rbegin(); it != paths.rend(); ++it) {
      const Json& vals = grid.at(*it);
      long n = static_cast<long>(vals.size());
      const Json& v = vals.at(static_cast<std::size_t>(rem % n));
      cell.values[*it] = v;
      detail::set_at_path(cfg_json, *it, v);
      rem /= n;
    }
    detail::set_at_path(cfg_json, "out", Json(cell_dir.string()));
    try {
      ExperimentConfig cfg = config::parse_config(config::dump17(cfg_json));
      RunResult rr = run_experiment(cfg);
      cell.status = "ok";
      if (rr.summary.contains("final")) cell.final = rr.summary.at("final");
    } catch (const std::exception& e) {
      std::string msg = e.what();
      std::replace(msg.begin(), msg.end(), '\n', ' ');
      cell.status = "error: " + msg;
    }
    return cell;
  };

  if (threads > 1 && !deterministic_env()) {
    for (long start = 0; start < cells; start += threads) {
      std::vector<std::future<SweepCell>> futs;
      for (long i = start; i < std::min(cells, start + threads); ++i)
        futs.push_back(std::async(std::launch::async, run_cell, i));
      for (std::size_t k = 0; k < futs.size(); ++k)
        result.cells[static_cast<std::size_t>(start) + k] = futs[k].get();
    }
  } else {
    for (long i = 0; i < cells; ++i) result.cells[static_cast<std::size_t>(i)] = run_cell(i);
  }

  // single-writer aggregate, written once after every cell settled
  std::vector<std::string> final_keys;
  for (const auto& c : result.cells)
    if (c.status == "ok") {
      for (auto it = c.final.begin(); it != c.final.end(); ++it) final_keys.push_back(it.key());
      break;
    }
  std::ofstream agg(root / "aggregate.csv", std::ios::binary);
  require(agg.good(), "cannot write aggregate table");
  agg << "cell";
  for (const auto& p : paths) agg << "," << detail::csv_field(Json(p));
  agg << ",status";
  for (const auto& k : final_keys) agg << "," << detail::csv_field(Json(k));
  agg << "\n";
  for (const auto& c : result.cells) {
    agg << c.index;
    for (const auto& p : paths) agg << "," << detail::csv_field(c.values.at(p));
    agg << "," << detail::csv_field(Json(c.status));
    for (const auto& k : final_keys) {
      agg << ",";
      if (c.final.contains(k)) agg << detail::csv_field(c.final.at(k));
    }
    agg << "\n";
  }
  return result;
}

}  // namespace cml::experiment
