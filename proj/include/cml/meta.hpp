#pragma once

#include <functional>
#include <future>
#include <string>
#include <vector>

#include "cml/bilevel.hpp"
#include "cml/implicit.hpp"
#include "cml/optim.hpp"

namespace cml::bilevel {

enum class Estimator { Forward, Symmetric, T1T2, Neumann, Cg };

inline Estimator estimator_from_name(const std::string& name) {
  if (name == "forward") return Estimator::Forward;
  if (name == "symmetric") return Estimator::Symmetric;
  if (name == "t1t2") return Estimator::T1T2;
  if (name == "neumann") return Estimator::Neumann;
  if (name == "cg") return Estimator::Cg;
  throw ParseError("unknown estimator '" + name + "'");
}

inline std::string estimator_name(Estimator e) {
  switch (e) {
    case Estimator::Forward: return "forward";
    case Estimator::Symmetric: return "symmetric";
    case Estimator::T1T2: return "t1t2";
    case Estimator::Neumann: return "neumann";
    case Estimator::Cg: return "cg";
  }
  return "forward";
}

struct EstimatorCfg {
  Estimator kind = Estimator::Forward;
  double beta = 0.1;
  Budget free_budget{100, 0.0};
  Budget nudged_budget{100, 0.0};
  OptimCfg inner_opt = OptimCfg::gd(1e-2);
  OptimCfg nudged_opt = OptimCfg::gd(1e-2);
  Vec inner_lr_scale;       // optional per-parameter factors for both phases
  implicit::MuCfg mu;       // implicit estimators only
};

struct TaskOutcome {
  std::string id;
  Vec delta;  // proposed meta change; -delta estimates the meta-gradient
  PhaseResult free;
  PhaseResult nudged;  // unused by implicit estimators
  double eval_at_free = 0.0;
  implicit::MuResult mu;
  bool fell_back = false;
};

inline OptimState make_phase_opt(const OptimCfg& cfg, const Vec& lr_scale) {
  OptimState st(cfg);
  st.lr_scale = lr_scale;
  return st;
}

// Runs the phases (or the implicit solve) for one task bound at the current
// meta snapshot and returns the proposed meta change.
inline TaskOutcome estimate_task(const BilevelTask& t, const EstimatorCfg& cfg) {
  TaskOutcome out;
  out.id = t.id;
  out.free = solve_phase(t, 0.0, t.init, make_phase_opt(cfg.inner_opt, cfg.inner_lr_scale),
                         cfg.free_budget);
  out.eval_at_free = t.eval(out.free.phi, nullptr);
  switch (cfg.kind) {
    case Estimator::Forward: {
      out.nudged = solve_phase(t, cfg.beta, out.free.phi,
                               make_phase_opt(cfg.nudged_opt, cfg.inner_lr_scale),
                               cfg.nudged_budget);
      out.delta = contrastive_update(t, out.free, out.nudged);
      break;
    }
    case Estimator::Symmetric: {
      out.nudged = solve_phase(t, cfg.beta, out.free.phi,
                               make_phase_opt(cfg.nudged_opt, cfg.inner_lr_scale),
                               cfg.nudged_budget);
      PhaseResult mirrored = solve_phase(t, -cfg.beta, out.free.phi,
                                         make_phase_opt(cfg.nudged_opt, cfg.inner_lr_scale),
                                         cfg.nudged_budget);
      out.delta = symmetric_update(t, out.nudged, mirrored);
      break;
    }
    case Estimator::T1T2:
    case Estimator::Neumann:
    case Estimator::Cg: {
      implicit::MuCfg mu = cfg.mu;
      mu.kind = cfg.kind == Estimator::T1T2    ? implicit::MuKind::Identity
                : cfg.kind == Estimator::Neumann ? implicit::MuKind::Neumann
                                                 : implicit::MuKind::Cg;
      auto res = implicit::implicit_meta_gradient(t, out.free.phi, mu);
      out.delta = -res.grad;
      out.mu = res.mu;
      out.fell_back = res.fell_back;
      break;
    }
  }
  check_finite(out.delta, "meta update for task " + t.id);
  return out;
}

struct MetaState {
  Vec theta;
  OptimState outer;
  long step = 0;

  // Tail averaging of theta snapshots taken after each outer step.
  bool average = false;
  long average_start = 0;
  Vec theta_avg;
  long average_count = 0;

  const Vec& averaged() const { return average_count > 0 ? theta_avg : theta; }

  void record_average() {
    if (!average || step < average_start) return;
    if (average_count == 0)
      theta_avg = theta;
    else
      theta_avg += (theta - theta_avg) / static_cast<double>(average_count + 1);
    ++average_count;
  }
};

struct MetaStepResult {
  Vec mean_delta;
  double mean_eval = 0.0;  // evaluation loss at the free solutions
  std::vector<TaskOutcome> tasks;
};

// One outer step: estimate per task, average the proposed changes in batch
// order, take an optimizer step on theta with -mean as the gradient, project.
// Tasks must be bound to the theta snapshot the caller read before the call.
inline MetaStepResult meta_step(MetaState& st, const std::vector<BilevelTask>& batch,
                                const EstimatorCfg& cfg,
                                const std::function<void(Vec&)>& project = nullptr,
                                int threads = 1) {
  require(!batch.empty(), "meta_step needs a nonempty task batch");
  MetaStepResult res;
  res.tasks.resize(batch.size());
  if (threads > 1 && batch.size() > 1) {
    std::vector<std::future<TaskOutcome>> futs;
    futs.reserve(batch.size());
    for (const auto& t : batch)
      futs.push_back(std::async(std::launch::async, [&t, &cfg] { return estimate_task(t, cfg); }));
    for (std::size_t i = 0; i < futs.size(); ++i) res.tasks[i] = futs[i].get();
  } else {
    for (std::size_t i = 0; i < batch.size(); ++i) res.tasks[i] = estimate_task(batch[i], cfg);
  }
  res.mean_delta = Vec::Zero(res.tasks[0].delta.size());
  for (const auto& t : res.tasks) {
    require_shape(t.delta.size() == res.mean_delta.size(), "task delta size mismatch");
    res.mean_delta += t.delta;
    res.mean_eval += t.eval_at_free;
  }
  res.mean_delta /= static_cast<double>(res.tasks.size());
  res.mean_eval /= static_cast<double>(res.tasks.size());
  Vec grad = -res.mean_delta;
  st.outer.step(st.theta, grad);
  if (project) project(st.theta);
  ++st.step;
  st.record_average();
  return res;
}

}  // namespace cml::bilevel
