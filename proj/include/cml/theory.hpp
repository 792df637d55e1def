#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "cml/bilevel.hpp"
#include "cml/core.hpp"
#include "cml/rng.hpp"
#include "cml/synapse.hpp"

namespace cml::theory {

// Diagonal quadratic family with every quantity of interest in closed form:
// learn loss 0.5 (phi - phi_learn)' H (phi - phi_learn) + 0.5 lambda |phi - omega|^2,
// eval loss 0.5 (phi - phi_eval)' H (phi - phi_eval).
struct QuadModel {
  Vec h;  // diagonal of H, strictly positive
  Vec phi_learn, phi_eval, omega;
  double lambda = 1.0;

  void validate() const {
    require_shape(phi_learn.size() == h.size() && phi_eval.size() == h.size() &&
                      omega.size() == h.size(),
                  "quad model size mismatch");
    require((h.array() > 0.0).all(), "quad model needs positive curvature");
    require(lambda >= 0.0, "quad model needs lambda >= 0");
  }

  Eigen::Index dim() const { return h.size(); }
};

// Minimizer of the augmented loss at nudging strength beta.
inline Vec quad_solution(const QuadModel& m, double beta) {
  m.validate();
  Vec out(m.dim());
  for (Eigen::Index i = 0; i < m.dim(); ++i) {
    double r = m.lambda / m.h[i];
    out[i] = (m.phi_learn[i] + beta * m.phi_eval[i] + r * m.omega[i]) / (1.0 + beta + r);
  }
  return out;
}

// True meta-gradient of the evaluation loss at the free equilibrium in omega:
// -lambda (Id + lambda H^-1)^-2 psi with psi = (phi_eval - phi_learn)
// + lambda H^-1 (phi_eval - omega).
inline Vec quad_meta_gradient(const QuadModel& m) {
  m.validate();
  Vec out(m.dim());
  for (Eigen::Index i = 0; i < m.dim(); ++i) {
    double r = m.lambda / m.h[i];
    double psi = (m.phi_eval[i] - m.phi_learn[i]) + r * (m.phi_eval[i] - m.omega[i]);
    double a = 1.0 + r;
    out[i] = -m.lambda * psi / (a * a);
  }
  return out;
}

// Contrastive estimate from exact inner solutions, -(lambda/beta)(phi*_beta - phi*_0).
inline Vec quad_contrastive_exact(const QuadModel& m, double beta) {
  require(beta > 0.0, "quad_contrastive_exact needs beta > 0");
  Vec p0 = quad_solution(m, 0.0), pb = quad_solution(m, beta);
  return Vec(-(m.lambda / beta) * (pb - p0));
}

inline Vec quad_symmetric_exact(const QuadModel& m, double beta) {
  require(beta > 0.0, "quad_symmetric_exact needs beta > 0");
  Vec pp = quad_solution(m, beta), pm = quad_solution(m, -beta);
  return Vec(-(m.lambda / (2.0 * beta)) * (pp - pm));
}

// Estimator error at exact solutions, beta ((1+beta) Id + lambda H^-1)^-1 grad.
inline Vec quad_error_exact(const QuadModel& m, double beta) {
  Vec g = quad_meta_gradient(m);
  Vec out(m.dim());
  for (Eigen::Index i = 0; i < m.dim(); ++i)
    out[i] = beta * g[i] / (1.0 + beta + m.lambda / m.h[i]);
  return out;
}

// Norm bounds mu beta / ((1+beta) mu + lambda) <= |err| / |grad| <= the same
// expression with L, for mu = min h and L = max h.
struct TwoSided {
  double lo = 0.0, hi = 0.0;
};

inline TwoSided quad_error_bounds(const QuadModel& m, double beta) {
  double mu = m.h.minCoeff(), L = m.h.maxCoeff();
  double g = quad_meta_gradient(m).norm();
  TwoSided b;
  b.lo = mu * beta / ((1.0 + beta) * mu + m.lambda) * g;
  b.hi = L * beta / ((1.0 + beta) * L + m.lambda) * g;
  return b;
}

// Reference instance: harmonic spectrum diag(1, 1/2, ..., 1/n), omega spread
// sigma_omega, learn/eval targets scattered around a shared task center.
inline QuadModel quad_default_instance(Rng& rng, int n = 50, double lambda = 1.0,
                                       double sigma_omega = 2.0, double sigma_center = 1.0,
                                       double sigma_spread = 1.0) {
  require(n >= 1, "quad instance needs n >= 1");
  QuadModel m;
  m.lambda = lambda;
  m.h = Vec(n);
  for (int i = 0; i < n; ++i) m.h[i] = 1.0 / (i + 1.0);
  m.omega = rng.normal_vec(n, 0.0, sigma_omega);
  Vec center = rng.normal_vec(n, 0.0, sigma_center);
  m.phi_learn = center + rng.normal_vec(n, 0.0, sigma_spread);
  m.phi_eval = center + rng.normal_vec(n, 0.0, sigma_spread);
  return m;
}

inline QuadModel quad_random_instance(Rng& rng, int n_max = 50) {
  int n = 1 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(n_max)));
  QuadModel m;
  m.lambda = rng.log_uniform(1e-2, 10.0);
  m.h = Vec(n);
  for (int i = 0; i < n; ++i) m.h[i] = rng.log_uniform(1e-2, 1e1);
  m.omega = rng.normal_vec(n, 0.0, 2.0);
  Vec center = rng.normal_vec(n, 0.0, 1.0);
  m.phi_learn = center + rng.normal_vec(n, 0.0, 1.0);
  m.phi_eval = center + rng.normal_vec(n, 0.0, 1.0);
  return m;
}

// Bilevel task running the quadratic model through the generic machinery,
// meta-learning omega only. Free phase starts at omega.
inline bilevel::BilevelTask quad_task(const QuadModel& m) {
  m.validate();
  synapse::SynapseModel sm;
  sm.spec.learn_omega = true;
  sm.spec.learn_lambda = false;
  sm.meta.omega = m.omega;
  sm.meta.lambda = Vec::Constant(m.dim(), m.lambda);
  QuadModel snap = m;
  auto learn = [snap](const Vec& phi, Vec* g) {
    Vec d = phi - snap.phi_learn;
    if (g) *g = snap.h.cwiseProduct(d);
    return 0.5 * d.dot(snap.h.cwiseProduct(d));
  };
  auto eval = [snap](const Vec& phi, Vec* g) {
    Vec d = phi - snap.phi_eval;
    if (g) *g = snap.h.cwiseProduct(d);
    return 0.5 * d.dot(snap.h.cwiseProduct(d));
  };
  auto hvp = [snap](const Vec&, const Vec& v) { return Vec(snap.h.cwiseProduct(v)); };
  return sm.bind("quad", learn, eval, m.omega, hvp);
}

// Bias bound B(delta, delta', beta) = b_learn (delta + delta')/beta
// + b_eval delta' + curvature beta/(1+beta).
struct BoundParams {
  double b_learn = 0.0, b_eval = 0.0, curvature = 0.0;

  void validate() const {
    require(b_learn >= 0.0 && b_eval >= 0.0 && curvature >= 0.0,
            "bound constants must be nonnegative");
  }
};

inline double bound_value(const BoundParams& p, double delta_free, double delta_nudged,
                          double beta) {
  p.validate();
  require(beta > 0.0, "bound_value needs beta > 0");
  require(delta_free >= 0.0 && delta_nudged >= 0.0, "solver gaps must be nonnegative");
  return p.b_learn * (delta_free + delta_nudged) / beta + p.b_eval * delta_nudged +
         p.curvature * beta / (1.0 + beta);
}

struct BetaStar {
  double beta = 0.0;
  double bound = 0.0;
};

// Minimizer of the bound over beta. Exact inner solutions degenerate to
// beta -> 0; a bias term at least as large as the curvature term has no
// interior optimum.
inline BetaStar beta_star(const BoundParams& p, double delta_free, double delta_nudged) {
  p.validate();
  require(delta_free >= 0.0 && delta_nudged >= 0.0, "solver gaps must be nonnegative");
  double a = p.b_learn * (delta_free + delta_nudged);
  if (a == 0.0) return {0.0, p.b_eval * delta_nudged};
  if (a >= p.curvature)
    throw DomainError("no interior optimum: b_learn (delta + delta') >= curvature");
  double sa = std::sqrt(a), sc = std::sqrt(p.curvature);
  BetaStar out;
  out.beta = sa / (sc - sa);
  out.bound = p.b_eval * delta_nudged + 2.0 * sa * sc - a;
  return out;
}

// Empirical estimator-error sweep over (budget, beta) cells using plain
// gradient descent with step 1/L on the augmented loss. budget -1 short
// circuits to the closed-form solutions.
struct CurveCfg {
  QuadModel model;
  std::vector<int> budgets;
  std::vector<double> betas;
  bool symmetric = false;
};

struct CurveRow {
  int steps = 0;
  double beta = 0.0;
  double err = 0.0, err_rel = 0.0;
  double delta_free = 0.0, delta_nudged = 0.0;
  double grad_free = 0.0, grad_nudged = 0.0;
};

inline std::vector<CurveRow> error_curve(const CurveCfg& cfg) {
  cfg.model.validate();
  require(!cfg.budgets.empty() && !cfg.betas.empty(), "error_curve needs a nonempty grid");
  const QuadModel& m = cfg.model;
  Vec grad_true = quad_meta_gradient(m);
  double gnorm = grad_true.norm();
  double hmax = m.h.maxCoeff(), hmin = m.h.minCoeff();
  bilevel::BilevelTask task = quad_task(m);
  std::vector<CurveRow> rows;
  rows.reserve(cfg.budgets.size() * cfg.betas.size());
  for (int budget : cfg.budgets) {
    for (double beta : cfg.betas) {
      require(beta > 0.0, "error_curve needs positive beta");
      CurveRow row;
      row.steps = budget;
      row.beta = beta;
      if (budget < 0) {
        Vec est = cfg.symmetric ? quad_symmetric_exact(m, beta) : quad_contrastive_exact(m, beta);
        row.err = (est - grad_true).norm();
      } else {
        double mu0 = hmin + m.lambda, l0 = hmax + m.lambda;
        double mub = (1.0 + beta) * hmin + m.lambda, lb = (1.0 + beta) * hmax + m.lambda;
        bilevel::Budget steps{budget, 0.0};
        auto free = bilevel::solve_phase(task, 0.0, task.init, OptimState(OptimCfg::gd(1.0 / l0)), steps);
        auto nudged =
            bilevel::solve_phase(task, beta, free.phi, OptimState(OptimCfg::gd(1.0 / lb)), steps);
        Vec delta;
        if (cfg.symmetric) {
          auto mirrored =
              bilevel::solve_phase(task, -beta, free.phi, OptimState(OptimCfg::gd(1.0 / lb)), steps);
          delta = bilevel::symmetric_update(task, nudged, mirrored);
        } else {
          delta = bilevel::contrastive_update(task, free, nudged);
        }
        row.err = (-delta - grad_true).norm();
        row.grad_free = free.grad_norm;
        row.grad_nudged = nudged.grad_norm;
        row.delta_free = free.grad_norm / mu0;
        row.delta_nudged = nudged.grad_norm / mub;
      }
      row.err_rel = gnorm > 0.0 ? row.err / gnorm : row.err;
      rows.push_back(row);
    }
  }
  return rows;
}

}  // namespace cml::theory
