#pragma once

#include <cmath>
#include <string>

#include "cml/core.hpp"

namespace cml {

enum class Opt { Gd, Nesterov, Adam };

struct OptimCfg {
  Opt kind = Opt::Gd;
  double lr = 1e-2;
  double momentum = 0.9;          // Nesterov
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;  // Adam

  static OptimCfg gd(double lr) { return {Opt::Gd, lr}; }
  static OptimCfg nesterov(double lr, double momentum = 0.9) {
    OptimCfg c;
    c.kind = Opt::Nesterov;
    c.lr = lr;
    c.momentum = momentum;
    return c;
  }
  static OptimCfg adam(double lr) {
    OptimCfg c;
    c.kind = Opt::Adam;
    c.lr = lr;
    return c;
  }
};

inline Opt opt_from_name(const std::string& name) {
  if (name == "gd" || name == "sgd") return Opt::Gd;
  if (name == "nesterov") return Opt::Nesterov;
  if (name == "adam") return Opt::Adam;
  throw ParseError("unknown optimizer '" + name + "'");
}

inline std::string opt_name(Opt k) {
  switch (k) {
    case Opt::Gd: return "gd";
    case Opt::Nesterov: return "nesterov";
    case Opt::Adam: return "adam";
  }
  return "gd";
}

// In-place first-order update p <- p - step(g). State is sized lazily on the
// first call; lr_scale, when set, multiplies the step elementwise (used for
// per-block learning-rate factors).
struct OptimState {
  OptimCfg cfg;
  Vec buf;      // Nesterov momentum buffer
  Vec m, v;     // Adam moments
  long t = 0;
  Vec lr_scale;

  OptimState() = default;
  explicit OptimState(OptimCfg c) : cfg(c) {}

  void reset() {
    buf.resize(0);
    m.resize(0);
    v.resize(0);
    t = 0;
  }

  void step(Vec& p, const Vec& g) {
    require_shape(p.size() == g.size(), "optimizer param/grad size mismatch");
    check_finite(g, "optimizer gradient");
    Vec d;
    switch (cfg.kind) {
      case Opt::Gd:
        d = cfg.lr * g;
        break;
      case Opt::Nesterov: {
        if (buf.size() != p.size()) buf = Vec::Zero(p.size());
        buf = cfg.momentum * buf + g;
        d = cfg.lr * (g + cfg.momentum * buf);
        break;
      }
      case Opt::Adam: {
        if (m.size() != p.size()) {
          m = Vec::Zero(p.size());
          v = Vec::Zero(p.size());
          t = 0;
        }
        ++t;
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
        double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
        double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
        d = cfg.lr * (m / c1).array() / ((v / c2).array().sqrt() + cfg.eps);
        break;
      }
    }
    if (lr_scale.size()) {
      require_shape(lr_scale.size() == p.size(), "lr_scale size mismatch");
      d = d.cwiseProduct(lr_scale);
    }
    p -= d;
    check_finite(p, "optimizer parameters");
  }
};

}  // namespace cml
