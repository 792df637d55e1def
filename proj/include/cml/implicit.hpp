#pragma once

#include <cmath>
#include <string>

#include "cml/bilevel.hpp"
#include "cml/core.hpp"
#include "cml/rng.hpp"

namespace cml::implicit {

struct HvpCfg {
  double fd_scale = 1e-4;       // step h = fd_scale * (1 + |phi|_inf)
  bool prefer_analytic = true;  // use the task's analytic route when present
};

// Hessian-vector product of the learning loss at phi, analytic when the task
// provides one, otherwise a central difference of the gradient.
inline Vec hvp(const bilevel::BilevelTask& t, const Vec& phi, const Vec& v,
               const HvpCfg& cfg = {}) {
  require_shape(v.size() == phi.size(), "hvp direction size mismatch");
  if (cfg.prefer_analytic && t.hvp) return t.hvp(phi, v);
  if (v.norm() == 0.0) return Vec::Zero(phi.size());
  double h = cfg.fd_scale * (1.0 + phi.cwiseAbs().maxCoeff());
  Vec gp, gm;
  t.learn(phi + h * v, &gp);
  t.learn(phi - h * v, &gm);
  return Vec((gp - gm) / (2.0 * h));
}

// Contraction mu * d2 L_learn / dphi dtheta, analytic when available,
// otherwise a central difference of the theta partials along mu.
inline Vec cross_dvp(const bilevel::BilevelTask& t, const Vec& phi, const Vec& mu,
                     const HvpCfg& cfg = {}) {
  require_shape(mu.size() == phi.size(), "cross_dvp direction size mismatch");
  if (cfg.prefer_analytic && t.cross_dvp) return t.cross_dvp(phi, mu);
  if (mu.norm() == 0.0) return Vec::Zero(t.theta_partials(phi, 0.0).size());
  double h = cfg.fd_scale * (1.0 + phi.cwiseAbs().maxCoeff());
  Vec pp = t.theta_partials(phi + h * mu, 0.0);
  Vec pm = t.theta_partials(phi - h * mu, 0.0);
  return Vec((pp - pm) / (2.0 * h));
}

enum class MuKind { Identity, Neumann, Cg };

inline MuKind mu_kind_from_name(const std::string& name) {
  if (name == "identity" || name == "t1t2") return MuKind::Identity;
  if (name == "neumann") return MuKind::Neumann;
  if (name == "cg") return MuKind::Cg;
  throw ParseError("unknown mu solver '" + name + "'");
}

struct MuCfg {
  MuKind kind = MuKind::Identity;
  int iters = 50;
  double alpha = 0.0;  // Neumann step size; 0 selects 1/L from power iteration
  int power_iters = 10;
  double cg_tol = 0.0;  // optional residual early stop
  HvpCfg hvp;
};

struct MuResult {
  Vec mu;
  bool ok = true;
  std::string note;
  int iters = 0;
  double residual = 0.0;  // |H mu + grad_eval| where measured
  double alpha = 0.0;
};

// Largest-curvature estimate by power iteration on the Hessian of the
// learning loss; seeds its own stream so results never depend on call order.
inline double curvature_estimate(const bilevel::BilevelTask& t, const Vec& phi, int iters,
                                 const HvpCfg& cfg) {
  Rng rng(0x5ca1ab1eULL);
  Vec v = rng.normal_vec(phi.size());
  double nv = v.norm();
  if (nv == 0.0) return 1.0;
  v /= nv;
  double est = 1.0;
  for (int k = 0; k < iters; ++k) {
    Vec w = hvp(t, phi, v, cfg);
    double nw = w.norm();
    if (nw == 0.0 || !w.allFinite()) return est;
    est = nw;
    v = w / nw;
  }
  return est;
}

// Approximates mu solving mu H = -grad_eval for the Hessian H of the learning
// loss at phi. Identity substitutes H ~ Id; Neumann iterates
// mu <- mu - alpha (H mu + grad_eval); Cg runs conjugate gradients and flags
// breakdown (nonpositive curvature or non-finite values) instead of throwing.
inline MuResult solve_mu(const bilevel::BilevelTask& t, const Vec& phi, const Vec& grad_eval,
                         const MuCfg& cfg) {
  require_shape(grad_eval.size() == phi.size(), "grad_eval size mismatch");
  MuResult out;
  switch (cfg.kind) {
    case MuKind::Identity:
      out.mu = -grad_eval;
      return out;
    case MuKind::Neumann: {
      require(cfg.iters >= 1, "Neumann needs at least one iteration");
      double alpha = cfg.alpha;
      if (alpha <= 0.0) alpha = 1.0 / curvature_estimate(t, phi, cfg.power_iters, cfg.hvp);
      out.alpha = alpha;
      Vec mu = Vec::Zero(phi.size());
      for (int k = 0; k < cfg.iters; ++k) {
        Vec r = hvp(t, phi, mu, cfg.hvp) + grad_eval;
        mu -= alpha * r;
        ++out.iters;
        if (!mu.allFinite()) {
          out.ok = false;
          out.note = "breakdown: non-finite Neumann iterate at " + std::to_string(out.iters);
          out.mu = Vec::Zero(phi.size());
          return out;
        }
      }
      out.mu = mu;
      out.residual = (hvp(t, phi, mu, cfg.hvp) + grad_eval).norm();
      return out;
    }
    case MuKind::Cg: {
      require(cfg.iters >= 1, "CG needs at least one iteration");
      Vec x = Vec::Zero(phi.size());
      Vec r = -grad_eval;  // residual of H x = -grad_eval at x = 0
      Vec p = r;
      double rr = r.squaredNorm();
      if (rr == 0.0) {
        out.mu = x;
        return out;
      }
      for (int k = 0; k < cfg.iters; ++k) {
        Vec hp = hvp(t, phi, p, cfg.hvp);
        double php = p.dot(hp);
        if (!(php > 0.0) || !hp.allFinite()) {
          out.ok = false;
          out.note = "breakdown: nonpositive curvature in CG at iteration " +
                     std::to_string(k + 1);
          out.mu = x;
          out.residual = std::sqrt(rr);
          return out;
        }
        double step = rr / php;
        x += step * p;
        r -= step * hp;
        ++out.iters;
        double rr_new = r.squaredNorm();
        if (cfg.cg_tol > 0.0 && std::sqrt(rr_new) <= cfg.cg_tol) {
          rr = rr_new;
          break;
        }
        p = r + (rr_new / rr) * p;
        rr = rr_new;
      }
      out.mu = x;
      out.residual = std::sqrt(rr);
      return out;
    }
  }
  return out;
}

struct ImplicitResult {
  Vec grad;  // estimate of the total meta-gradient of the evaluation loss
  MuResult mu;
  bool fell_back = false;  // CG breakdown handled by the identity solver
};

// Implicit-differentiation estimate d_theta L_eval + mu * d2 L / dphi dtheta.
inline ImplicitResult implicit_meta_gradient(const bilevel::BilevelTask& t, const Vec& phi,
                                             const MuCfg& cfg) {
  Vec ge;
  t.eval(phi, &ge);
  ImplicitResult out;
  out.mu = solve_mu(t, phi, ge, cfg);
  if (!out.mu.ok && cfg.kind == MuKind::Cg) {
    MuCfg fallback = cfg;
    fallback.kind = MuKind::Identity;
    MuResult id = solve_mu(t, phi, ge, fallback);
    id.note = out.mu.note + "; fell back to identity";
    id.ok = false;
    out.mu = id;
    out.fell_back = true;
  }
  Vec direct = t.theta_partials(phi, 1.0) - t.theta_partials(phi, 0.0);
  out.grad = direct + cross_dvp(t, phi, out.mu.mu, cfg.hvp);
  return out;
}

}  // namespace cml::implicit
