#pragma once

#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "cml/bilevel.hpp"
#include "cml/core.hpp"
#include "cml/mlp.hpp"

namespace cml::synapse {

// Consolidation state: per-parameter attractor omega and coupling strength
// lambda. lambda >= 0 always; the quadratic pull 0.5 lambda (omega - phi)^2 is
// part of the learning loss, never the evaluation loss.
struct SynapseMeta {
  Vec omega;
  Vec lambda;

  void validate() const {
    require_shape(omega.size() == lambda.size(), "omega/lambda size mismatch");
    require((lambda.array() >= 0.0).all(), "negative lambda entries");
  }
};

// Adds the consolidation penalty to a data loss. Zero-lambda coordinates are
// skipped so a lambda = 0 model reproduces the unregularized loss bit for bit.
inline double consolidation_penalty(const Vec& phi, const SynapseMeta& m, Vec* grad) {
  m.validate();
  require_shape(phi.size() == m.omega.size(), "phi size mismatch in consolidation penalty");
  double value = 0.0;
  for (Eigen::Index i = 0; i < phi.size(); ++i) {
    if (m.lambda[i] == 0.0) continue;
    double d = m.omega[i] - phi[i];
    value += 0.5 * m.lambda[i] * d * d;
    if (grad) (*grad)[i] += m.lambda[i] * (phi[i] - m.omega[i]);
  }
  return value;
}

struct SynapseUpdate {
  Vec d_omega;
  Vec d_lambda;
};

// Closed-form contrastive update for the consolidation meta-parameters. Both
// components depend only on local quantities of the same synapse.
inline SynapseUpdate synapse_meta_update(const SynapseMeta& m, const Vec& phi_free,
                                         const Vec& phi_nudged, double beta) {
  m.validate();
  require(beta > 0.0, "synapse_meta_update needs beta > 0");
  require_shape(phi_free.size() == m.omega.size() && phi_nudged.size() == m.omega.size(),
                "phi size mismatch in synapse_meta_update");
  SynapseUpdate u;
  u.d_omega = (m.lambda.array() / beta) * (phi_nudged - phi_free).array();
  Vec a = phi_free - m.omega, b = phi_nudged - m.omega;
  u.d_lambda = (a.array().square() - b.array().square()) / (2.0 * beta);
  return u;
}

inline Vec lambda_project(const Vec& lambda, double lambda_min = 0.0) {
  return lambda.cwiseMax(lambda_min);
}

// Which meta components are learned and how lambda is shared.
struct SynapseSpec {
  bool learn_omega = true;
  bool learn_lambda = true;
  bool scalar_lambda = false;  // one lambda broadcast over all parameters
  double lambda_min = 0.0;
};

struct SynapseModel {
  SynapseSpec spec;
  SynapseMeta meta;

  static SynapseModel make(SynapseSpec s, Vec omega, double lambda_init) {
    SynapseModel m;
    m.spec = s;
    m.meta.lambda = Vec::Constant(omega.size(), lambda_init);
    m.meta.omega = std::move(omega);
    m.meta.validate();
    return m;
  }

  Eigen::Index dim() const { return meta.omega.size(); }

  Eigen::Index theta_dim() const {
    Eigen::Index n = 0;
    if (spec.learn_omega) n += dim();
    if (spec.learn_lambda) n += spec.scalar_lambda ? 1 : dim();
    return n;
  }

  Vec theta_flat() const {
    Vec th(theta_dim());
    Eigen::Index at = 0;
    if (spec.learn_omega) {
      th.segment(at, dim()) = meta.omega;
      at += dim();
    }
    if (spec.learn_lambda) {
      if (spec.scalar_lambda)
        th[at] = meta.lambda[0];
      else
        th.segment(at, dim()) = meta.lambda;
    }
    return th;
  }

  void set_theta_flat(const Vec& th) {
    require_shape(th.size() == theta_dim(), "theta size mismatch");
    Eigen::Index at = 0;
    if (spec.learn_omega) {
      meta.omega = th.segment(at, dim());
      at += dim();
    }
    if (spec.learn_lambda) {
      Vec lam = spec.scalar_lambda ? Vec::Constant(dim(), th[at])
                                   : Vec(th.segment(at, dim()));
      meta.lambda = lambda_project(lam, spec.lambda_min);
    }
  }

  // Partials of the augmented loss in the learned meta components. The
  // evaluation loss never involves omega or lambda, so this is the same for
  // every beta.
  Vec theta_partials(const Vec& phi) const {
    require_shape(phi.size() == dim(), "phi size mismatch in theta_partials");
    Vec th(theta_dim());
    Eigen::Index at = 0;
    if (spec.learn_omega) {
      th.segment(at, dim()) = meta.lambda.cwiseProduct(meta.omega - phi);
      at += dim();
    }
    if (spec.learn_lambda) {
      Vec sq = 0.5 * (meta.omega - phi).array().square();
      if (spec.scalar_lambda)
        th[at] = sq.sum();
      else
        th.segment(at, dim()) = sq;
    }
    return th;
  }

  // Contraction mu * d2L/dphi dtheta for the implicit route, analytic.
  Vec cross_dvp(const Vec& phi, const Vec& mu) const {
    require_shape(mu.size() == dim(), "mu size mismatch in cross_dvp");
    Vec th(theta_dim());
    Eigen::Index at = 0;
    if (spec.learn_omega) {
      th.segment(at, dim()) = -meta.lambda.cwiseProduct(mu);
      at += dim();
    }
    if (spec.learn_lambda) {
      Vec c = mu.cwiseProduct(phi - meta.omega);
      if (spec.scalar_lambda)
        th[at] = c.sum();
      else
        th.segment(at, dim()) = c;
    }
    return th;
  }

  // Wraps the data losses of one task into a bilevel task at the current meta
  // snapshot. data_hvp, when given, is the Hessian-vector product of the data
  // part of the learning loss; the penalty contributes lambda .* v on top.
  bilevel::BilevelTask bind(std::string id,
                            std::function<double(const Vec&, Vec*)> learn_data,
                            std::function<double(const Vec&, Vec*)> eval_data,
                            Vec init = Vec(),
                            std::function<Vec(const Vec&, const Vec&)> data_hvp = nullptr) const {
    meta.validate();
    bilevel::BilevelTask t;
    t.id = std::move(id);
    t.fast_dim = dim();
    SynapseModel snap = *this;
    t.learn = [snap, f = std::move(learn_data)](const Vec& phi, Vec* g) {
      double v = f(phi, g);
      return v + consolidation_penalty(phi, snap.meta, g);
    };
    t.eval = std::move(eval_data);
    t.theta_partials = [snap](const Vec& phi, double) { return snap.theta_partials(phi); };
    t.cross_dvp = [snap](const Vec& phi, const Vec& mu) { return snap.cross_dvp(phi, mu); };
    if (data_hvp) {
      t.hvp = [snap, dh = std::move(data_hvp)](const Vec& phi, const Vec& v) {
        Vec out = dh(phi, v);
        return Vec(out + snap.meta.lambda.cwiseProduct(v));
      };
    }
    t.init = init.size() ? std::move(init) : meta.omega;
    return t;
  }
};

// Neuromodulation model: slow hidden-layer weights, fast per-neuron gains and
// thresholds plus the whole output layer. The base net's output layer only
// seeds the fast parameters at the start of a task.
struct ModulationModel {
  MlpParams base;  // hidden layers ModRelu, output layer Linear

  static ModulationModel make(std::vector<int> widths, Rng& rng, double init_scale = 1.0) {
    MlpArch arch = MlpArch::dense(std::move(widths), Act::ModRelu);
    ModulationModel m;
    m.base = mlp_init(arch, rng, init_scale);
    return m;
  }

  int out_layer() const { return base.arch.layers() - 1; }

  Eigen::Index fast_dim() const {
    Eigen::Index n = 0;
    for (int l = 0; l < out_layer(); ++l) n += 2 * base.arch.widths[l + 1];
    int L = out_layer();
    n += static_cast<Eigen::Index>(base.arch.widths[L + 1]) * base.arch.widths[L] +
         base.arch.widths[L + 1];
    return n;
  }

  Eigen::Index theta_dim() const {
    Eigen::Index n = 0;
    for (int l = 0; l < out_layer(); ++l)
      n += static_cast<Eigen::Index>(base.arch.widths[l + 1]) * base.arch.widths[l] +
           base.arch.widths[l + 1];
    return n;
  }

  // Fast layout: per hidden layer gains then thresholds, then output W
  // (row-major) and output b.
  Vec fast_init() const {
    Vec phi(fast_dim());
    Eigen::Index at = 0;
    for (int l = 0; l < out_layer(); ++l) {
      int w = base.arch.widths[l + 1];
      phi.segment(at, w).setOnes();
      at += w;
      phi.segment(at, w).setZero();
      at += w;
    }
    int L = out_layer();
    const Mat& W = base.w[L];
    for (Eigen::Index i = 0; i < W.rows(); ++i)
      for (Eigen::Index j = 0; j < W.cols(); ++j) phi[at++] = W(i, j);
    phi.segment(at, base.b[L].size()) = base.b[L];
    return phi;
  }

  void materialize(const Vec& phi, MlpParams& p, Modulation& mod) const {
    require_shape(phi.size() == fast_dim(), "fast vector size mismatch");
    p = base;
    mod = Modulation::identity(base.arch);
    Eigen::Index at = 0;
    for (int l = 0; l < out_layer(); ++l) {
      int w = base.arch.widths[l + 1];
      mod.gain[l] = phi.segment(at, w);
      at += w;
      mod.thresh[l] = phi.segment(at, w);
      at += w;
    }
    int L = out_layer();
    for (Eigen::Index i = 0; i < p.w[L].rows(); ++i)
      for (Eigen::Index j = 0; j < p.w[L].cols(); ++j) p.w[L](i, j) = phi[at++];
    p.b[L] = phi.segment(at, p.b[L].size());
  }

  Vec fast_slice(const MlpGrads& g) const {
    Vec out(fast_dim());
    Eigen::Index at = 0;
    for (int l = 0; l < out_layer(); ++l) {
      int w = base.arch.widths[l + 1];
      out.segment(at, w) = g.gain[l];
      at += w;
      out.segment(at, w) = g.thresh[l];
      at += w;
    }
    int L = out_layer();
    for (Eigen::Index i = 0; i < g.w[L].rows(); ++i)
      for (Eigen::Index j = 0; j < g.w[L].cols(); ++j) out[at++] = g.w[L](i, j);
    out.segment(at, g.b[L].size()) = g.b[L];
    return out;
  }

  Vec slow_slice(const MlpGrads& g) const {
    Vec out(theta_dim());
    Eigen::Index at = 0;
    for (int l = 0; l < out_layer(); ++l) {
      for (Eigen::Index i = 0; i < g.w[l].rows(); ++i)
        for (Eigen::Index j = 0; j < g.w[l].cols(); ++j) out[at++] = g.w[l](i, j);
      out.segment(at, g.b[l].size()) = g.b[l];
      at += g.b[l].size();
    }
    return out;
  }

  Vec theta_flat() const {
    MlpGrads g = MlpGrads::zero(base.arch);
    for (int l = 0; l < out_layer(); ++l) {
      g.w[l] = base.w[l];
      g.b[l] = base.b[l];
    }
    return slow_slice(g);
  }

  void set_theta_flat(const Vec& th) {
    require_shape(th.size() == theta_dim(), "theta size mismatch");
    Eigen::Index at = 0;
    for (int l = 0; l < out_layer(); ++l) {
      for (Eigen::Index i = 0; i < base.w[l].rows(); ++i)
        for (Eigen::Index j = 0; j < base.w[l].cols(); ++j) base.w[l](i, j) = th[at++];
      base.b[l] = th.segment(at, base.b[l].size());
      at += base.b[l].size();
    }
  }

  // Gradients of the mean-MSE data loss in the fast (out_fast) and slow
  // (out_slow) parameters at phi.
  double data_loss(const Vec& phi, const Mat& X, const Mat& Y, Vec* out_fast,
                   Vec* out_slow) const {
    MlpParams p;
    Modulation mod;
    materialize(phi, p, mod);
    MlpGrads g = MlpGrads::zero(base.arch);
    bool want = out_fast || out_slow;
    double v = mlp_dataset_mse(p, &mod, X, Y, want ? &g : nullptr);
    if (out_fast) *out_fast = fast_slice(g);
    if (out_slow) *out_slow = slow_slice(g);
    return v;
  }

  bilevel::BilevelTask bind(std::string id, Mat Xl, Mat Yl, Mat Xe, Mat Ye) const {
    bilevel::BilevelTask t;
    t.id = std::move(id);
    t.fast_dim = fast_dim();
    ModulationModel snap = *this;
    auto lx = std::make_shared<Mat>(std::move(Xl));
    auto ly = std::make_shared<Mat>(std::move(Yl));
    auto ex = std::make_shared<Mat>(std::move(Xe));
    auto ey = std::make_shared<Mat>(std::move(Ye));
    t.learn = [snap, lx, ly](const Vec& phi, Vec* g) {
      return snap.data_loss(phi, *lx, *ly, g, nullptr);
    };
    t.eval = [snap, ex, ey](const Vec& phi, Vec* g) {
      return snap.data_loss(phi, *ex, *ey, g, nullptr);
    };
    t.theta_partials = [snap, lx, ly, ex, ey](const Vec& phi, double beta) {
      Vec gl, ge;
      snap.data_loss(phi, *lx, *ly, nullptr, &gl);
      if (beta == 0.0) return gl;
      snap.data_loss(phi, *ex, *ey, nullptr, &ge);
      return Vec(gl + beta * ge);
    };
    t.init = fast_init();
    return t;
  }
};

}  // namespace cml::synapse
