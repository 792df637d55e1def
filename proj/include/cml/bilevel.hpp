#pragma once

#include <functional>
#include <string>
#include <utility>

#include "cml/core.hpp"
#include "cml/optim.hpp"

namespace cml::bilevel {

// One inner problem bound to a snapshot of the meta-parameters. learn/eval
// return the loss value and, when grad is non-null, write the gradient in the
// fast parameters. theta_partials returns the flattened partial derivatives of
// the augmented loss (learn + beta * eval) in the meta-parameters at fixed phi.
struct BilevelTask {
  std::string id;
  Eigen::Index fast_dim = 0;
  std::function<double(const Vec& phi, Vec* grad)> learn;
  std::function<double(const Vec& phi, Vec* grad)> eval;
  std::function<Vec(const Vec& phi, double beta)> theta_partials;

  // Optional analytic routes; finite differences are used when absent.
  std::function<Vec(const Vec& phi, const Vec& v)> hvp;
  std::function<Vec(const Vec& phi, const Vec& mu)> cross_dvp;

  Vec init;  // free-phase starting point
};

struct Budget {
  int max_steps = 0;
  double grad_tol = 0.0;  // 0 disables the tolerance stop
};

struct PhaseResult {
  Vec phi;
  double beta = 0.0;
  int steps = 0;
  double grad_norm = 0.0;  // measured at the returned phi
  double loss = 0.0;       // augmented loss at the returned phi
};

// Augmented loss learn + beta * eval. At beta == 0 the eval branch is skipped
// entirely so the free phase never touches evaluation data.
inline double augmented_eval(const BilevelTask& t, double beta, const Vec& phi, Vec* grad) {
  require_shape(phi.size() == t.fast_dim, "phi size mismatch for task " + t.id);
  double value = t.learn(phi, grad);
  if (beta != 0.0) {
    Vec ge;
    double ve = t.eval(phi, grad ? &ge : nullptr);
    value += beta * ve;
    if (grad) *grad += beta * ge;
  }
  return value;
}

// First-order descent on the augmented loss. Stops when the gradient norm
// reaches grad_tol (checked before stepping, so a converged init takes zero
// steps) or when max_steps optimizer steps have been taken.
inline PhaseResult solve_phase(const BilevelTask& t, double beta, const Vec& init,
                               OptimState opt, Budget budget) {
  require(budget.max_steps >= 1, "phase budget must allow at least one step");
  Vec phi = init;
  int steps = 0;
  for (;;) {
    Vec g;
    double value = augmented_eval(t, beta, phi, &g);
    if (!std::isfinite(value) || !g.allFinite())
      throw NumericError("non-finite augmented loss at step " + std::to_string(steps) +
                         " of phase (beta=" + fmt_g17(beta) + ") for task " + t.id);
    double gn = g.norm();
    if ((budget.grad_tol > 0.0 && gn <= budget.grad_tol) || steps >= budget.max_steps)
      return {std::move(phi), beta, steps, gn, value};
    opt.step(phi, g);
    ++steps;
  }
}

// Forward-difference rule: delta_theta = -(1/beta) (d_theta L(phi_beta, beta)
// - d_theta L(phi_0, 0)). The return value is the proposed meta-parameter
// change; its negation estimates the meta-gradient.
inline Vec contrastive_update(const BilevelTask& t, const PhaseResult& free,
                              const PhaseResult& nudged) {
  require(free.beta == 0.0, "contrastive_update needs a free phase at beta = 0");
  require(nudged.beta > 0.0, "contrastive_update needs a nudged phase at beta > 0");
  Vec p1 = t.theta_partials(nudged.phi, nudged.beta);
  Vec p0 = t.theta_partials(free.phi, 0.0);
  require_shape(p1.size() == p0.size(), "theta partials size mismatch");
  return (p0 - p1) / nudged.beta;
}

// Symmetric rule: delta_theta = -(1/2 beta) (d_theta L(phi_+beta, +beta)
// - d_theta L(phi_-beta, -beta)). Leading bias is one order better in beta.
inline Vec symmetric_update(const BilevelTask& t, const PhaseResult& plus,
                            const PhaseResult& minus) {
  require(plus.beta > 0.0, "symmetric_update needs the +beta phase first");
  require(minus.beta == -plus.beta, "symmetric_update needs phases at +beta and -beta");
  Vec pp = t.theta_partials(plus.phi, plus.beta);
  Vec pm = t.theta_partials(minus.phi, minus.beta);
  require_shape(pp.size() == pm.size(), "theta partials size mismatch");
  return (pm - pp) / (2.0 * plus.beta);
}

}  // namespace cml::bilevel
