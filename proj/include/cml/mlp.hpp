#pragma once

#include <cmath>
#include <vector>

#include "cml/core.hpp"
#include "cml/rng.hpp"

namespace cml {

enum class Act { Linear, Tanh, Relu, ModRelu };

struct MlpArch {
  std::vector<int> widths;  // [in, h1, ..., out]
  std::vector<Act> act;     // one per weight layer, size widths.size()-1

  int layers() const { return static_cast<int>(act.size()); }

  void validate() const {
    require_shape(widths.size() >= 2, "mlp arch needs at least input and output widths");
    require_shape(act.size() + 1 == widths.size(), "mlp arch act count mismatch");
    for (int w : widths) require_shape(w > 0, "mlp widths must be positive");
  }

  static MlpArch dense(std::vector<int> widths, Act hidden, Act out = Act::Linear) {
    MlpArch a;
    a.widths = std::move(widths);
    a.act.assign(a.widths.size() - 1, hidden);
    a.act.back() = out;
    a.validate();
    return a;
  }

  Eigen::Index param_count() const {
    Eigen::Index n = 0;
    for (int l = 0; l < layers(); ++l)
      n += static_cast<Eigen::Index>(widths[l + 1]) * widths[l] + widths[l + 1];
    return n;
  }
};

struct MlpParams {
  MlpArch arch;
  std::vector<Mat> w;  // w[l]: widths[l+1] x widths[l]
  std::vector<Vec> b;  // b[l]: widths[l+1]
};

// Per-neuron gain and threshold for ModRelu layers; entries for other layers
// stay empty. out = gain .* max(pre - thresh, 0).
struct Modulation {
  std::vector<Vec> gain, thresh;

  static Modulation identity(const MlpArch& a) {
    Modulation m;
    m.gain.resize(a.layers());
    m.thresh.resize(a.layers());
    for (int l = 0; l < a.layers(); ++l) {
      if (a.act[l] == Act::ModRelu) {
        m.gain[l] = Vec::Ones(a.widths[l + 1]);
        m.thresh[l] = Vec::Zero(a.widths[l + 1]);
      }
    }
    return m;
  }
};

inline MlpParams mlp_zero(const MlpArch& arch) {
  arch.validate();
  MlpParams p;
  p.arch = arch;
  p.w.resize(arch.layers());
  p.b.resize(arch.layers());
  for (int l = 0; l < arch.layers(); ++l) {
    p.w[l] = Mat::Zero(arch.widths[l + 1], arch.widths[l]);
    p.b[l] = Vec::Zero(arch.widths[l + 1]);
  }
  return p;
}

// Kaiming-normal fan-in init, std = scale * sqrt(2 / fan_in), zero biases.
inline MlpParams mlp_init(const MlpArch& arch, Rng& rng, double scale = 1.0) {
  MlpParams p = mlp_zero(arch);
  for (int l = 0; l < arch.layers(); ++l) {
    double sd = scale * std::sqrt(2.0 / arch.widths[l]);
    for (Eigen::Index i = 0; i < p.w[l].rows(); ++i)
      for (Eigen::Index j = 0; j < p.w[l].cols(); ++j) p.w[l](i, j) = rng.normal(0.0, sd);
  }
  return p;
}

inline Vec mlp_flatten(const MlpParams& p) {
  Vec out(p.arch.param_count());
  Eigen::Index at = 0;
  for (int l = 0; l < p.arch.layers(); ++l) {
    for (Eigen::Index i = 0; i < p.w[l].rows(); ++i)
      for (Eigen::Index j = 0; j < p.w[l].cols(); ++j) out[at++] = p.w[l](i, j);
    out.segment(at, p.b[l].size()) = p.b[l];
    at += p.b[l].size();
  }
  return out;
}

inline MlpParams mlp_unflatten(const MlpArch& arch, const Vec& flat) {
  require_shape(flat.size() == arch.param_count(), "mlp flat vector length mismatch");
  MlpParams p = mlp_zero(arch);
  Eigen::Index at = 0;
  for (int l = 0; l < arch.layers(); ++l) {
    for (Eigen::Index i = 0; i < p.w[l].rows(); ++i)
      for (Eigen::Index j = 0; j < p.w[l].cols(); ++j) p.w[l](i, j) = flat[at++];
    p.b[l] = flat.segment(at, p.b[l].size());
    at += p.b[l].size();
  }
  return p;
}

struct MlpCache {
  std::vector<Vec> x;    // x[0] = input, x[l+1] = layer l output
  std::vector<Vec> pre;  // pre[l] = w[l] x[l] + b[l]
};

inline Vec mlp_forward(const MlpParams& p, const Modulation* mod, const Vec& in,
                       MlpCache* cache = nullptr) {
  require_shape(in.size() == p.arch.widths[0], "mlp input width mismatch");
  if (cache) {
    cache->x.assign(1, in);
    cache->pre.clear();
  }
  Vec x = in;
  for (int l = 0; l < p.arch.layers(); ++l) {
    Vec pre = p.w[l] * x + p.b[l];
    switch (p.arch.act[l]) {
      case Act::Linear:
        x = pre;
        break;
      case Act::Tanh:
        x = pre.array().tanh();
        break;
      case Act::Relu:
        x = pre.cwiseMax(0.0);
        break;
      case Act::ModRelu: {
        require(mod != nullptr, "ModRelu layer needs modulation state");
        require_shape(mod->gain[l].size() == pre.size() && mod->thresh[l].size() == pre.size(),
                      "modulation width mismatch");
        x = mod->gain[l].array() * (pre - mod->thresh[l]).cwiseMax(0.0).array();
        break;
      }
    }
    if (cache) {
      cache->pre.push_back(pre);
      cache->x.push_back(x);
    }
  }
  return x;
}

struct MlpGrads {
  std::vector<Mat> w;
  std::vector<Vec> b;
  std::vector<Vec> gain, thresh;  // ModRelu layers only, empty elsewhere

  static MlpGrads zero(const MlpArch& a) {
    MlpGrads g;
    g.w.resize(a.layers());
    g.b.resize(a.layers());
    g.gain.resize(a.layers());
    g.thresh.resize(a.layers());
    for (int l = 0; l < a.layers(); ++l) {
      g.w[l] = Mat::Zero(a.widths[l + 1], a.widths[l]);
      g.b[l] = Vec::Zero(a.widths[l + 1]);
      if (a.act[l] == Act::ModRelu) {
        g.gain[l] = Vec::Zero(a.widths[l + 1]);
        g.thresh[l] = Vec::Zero(a.widths[l + 1]);
      }
    }
    return g;
  }

  void scale(double c) {
    for (auto& m : w) m *= c;
    for (auto& v : b) v *= c;
    for (auto& v : gain) v *= c;
    for (auto& v : thresh) v *= c;
  }

  void axpy(double c, const MlpGrads& o) {
    for (std::size_t l = 0; l < w.size(); ++l) {
      w[l] += c * o.w[l];
      b[l] += c * o.b[l];
      if (gain[l].size()) gain[l] += c * o.gain[l];
      if (thresh[l].size()) thresh[l] += c * o.thresh[l];
    }
  }
};

// Reverse pass for one sample; accumulates into out. dy is dLoss/d(output).
inline void mlp_backward(const MlpParams& p, const Modulation* mod, const MlpCache& cache,
                         const Vec& dy, MlpGrads& out) {
  Vec delta = dy;  // dLoss/d(x[l+1]) walking down
  for (int l = p.arch.layers() - 1; l >= 0; --l) {
    Vec dpre;
    switch (p.arch.act[l]) {
      case Act::Linear:
        dpre = delta;
        break;
      case Act::Tanh: {
        Vec t = cache.x[static_cast<std::size_t>(l) + 1];
        dpre = delta.array() * (1.0 - t.array().square());
        break;
      }
      case Act::Relu:
        dpre = (cache.pre[l].array() > 0.0).select(delta, 0.0);
        break;
      case Act::ModRelu: {
        Vec shifted = cache.pre[l] - mod->thresh[l];
        Vec mask = (shifted.array() > 0.0).cast<double>();
        Vec r = shifted.cwiseMax(0.0);
        out.gain[l] += delta.cwiseProduct(r);
        Vec dpre_mod = delta.array() * mod->gain[l].array() * mask.array();
        out.thresh[l] -= dpre_mod;
        dpre = dpre_mod;
        break;
      }
    }
    out.w[l] += dpre * cache.x[l].transpose();
    out.b[l] += dpre;
    if (l > 0) delta = p.w[l].transpose() * dpre;
  }
}

struct LossOut {
  double value = 0.0;
  Vec grad;
};

// Mean of squared errors over entries; grad = 2 (pred - target) / n.
inline LossOut mse_loss(const Vec& pred, const Vec& target) {
  require_shape(pred.size() == target.size(), "mse size mismatch");
  require(pred.size() > 0, "mse on empty vectors");
  LossOut out;
  Vec d = pred - target;
  double n = static_cast<double>(pred.size());
  out.value = d.squaredNorm() / n;
  out.grad = (2.0 / n) * d;
  return out;
}

// Softmax cross-entropy with integer label; grad is softmax - onehot.
inline LossOut cross_entropy_loss(const Vec& logits, int label) {
  require(label >= 0 && label < logits.size(), "cross entropy label out of range");
  LossOut out;
  double mx = logits.maxCoeff();
  Vec e = (logits.array() - mx).exp();
  double z = e.sum();
  out.value = std::log(z) - (logits[label] - mx);
  out.grad = e / z;
  out.grad[label] -= 1.0;
  return out;
}

// Mean over rows of per-sample MSE; gradient accumulated into grads (callers
// zero it first). Rows of X are inputs, rows of Y targets.
inline double mlp_dataset_mse(const MlpParams& p, const Modulation* mod, const Mat& X,
                              const Mat& Y, MlpGrads* grads) {
  require(X.rows() > 0, "dataset loss on empty batch");
  require_shape(X.rows() == Y.rows(), "dataset X/Y row mismatch");
  double total = 0.0;
  double inv = 1.0 / static_cast<double>(X.rows());
  MlpCache cache;
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    Vec y = mlp_forward(p, mod, X.row(r).transpose(), grads ? &cache : nullptr);
    LossOut lo = mse_loss(y, Y.row(r).transpose());
    total += lo.value;
    if (grads) mlp_backward(p, mod, cache, inv * lo.grad, *grads);
  }
  return total * inv;
}

}  // namespace cml
