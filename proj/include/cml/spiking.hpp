#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "cml/bilevel.hpp"
#include "cml/core.hpp"
#include "cml/rng.hpp"
#include "cml/synapse.hpp"
#include "cml/tasks.hpp"

namespace cml::spiking {

// ---------------------------------------------------------------- network

struct LifConfig {
  int n_in = 100;
  int n_rec = 40;
  int n_out = 1;
  double dt = 1.0;
  double tau_m = 30.0;    // membrane time constant
  double tau_out = 30.0;  // readout filter time constant
  double v_th = 0.1;

  void validate() const {
    require(n_in > 0 && n_rec > 0 && n_out > 0, "lif sizes must be positive");
    require(dt > 0 && tau_m > 0 && tau_out > 0 && v_th > 0, "lif constants must be positive");
  }
  double alpha() const { return std::exp(-dt / tau_m); }
  double kappa() const { return std::exp(-dt / tau_out); }
};

struct LifNet {
  LifConfig cfg;
  Mat w_in;   // n_rec x n_in
  Mat w_rec;  // n_rec x n_rec, zero diagonal (no self loops)
  Mat w_out;  // n_out x n_rec
};

inline Eigen::Index lif_dim(const LifConfig& c) {
  return static_cast<Eigen::Index>(c.n_rec) * c.n_in +
         static_cast<Eigen::Index>(c.n_rec) * c.n_rec +
         static_cast<Eigen::Index>(c.n_out) * c.n_rec;
}

inline LifNet lif_init(const LifConfig& c, Rng& rng) {
  c.validate();
  LifNet net;
  net.cfg = c;
  double sd_in = 0.1 * std::sqrt(2.0 / c.n_in);
  double sd_rec = 0.01 * std::sqrt(2.0 / c.n_rec);
  double sd_out = 0.1 * std::sqrt(2.0 / c.n_rec);
  net.w_in = Mat(c.n_rec, c.n_in);
  net.w_rec = Mat(c.n_rec, c.n_rec);
  net.w_out = Mat(c.n_out, c.n_rec);
  for (int r = 0; r < c.n_rec; ++r)
    for (int i = 0; i < c.n_in; ++i) net.w_in(r, i) = rng.normal(0.0, sd_in);
  for (int r = 0; r < c.n_rec; ++r)
    for (int j = 0; j < c.n_rec; ++j) net.w_rec(r, j) = rng.normal(0.0, sd_rec);
  for (int k = 0; k < c.n_out; ++k)
    for (int j = 0; j < c.n_rec; ++j) net.w_out(k, j) = rng.normal(0.0, sd_out);
  net.w_rec.diagonal().setZero();
  return net;
}

namespace detail {
inline void flatten_block(const Mat& m, Vec& out, Eigen::Index& at) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) out[at++] = m(r, c);
}
inline void unflatten_block(const Vec& in, Mat& m, Eigen::Index& at) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = in[at++];
}
}  // namespace detail

// Layout: w_in, then w_rec, then w_out, each row major.
inline Vec lif_flatten_mats(const Mat& w_in, const Mat& w_rec, const Mat& w_out) {
  Vec v(w_in.size() + w_rec.size() + w_out.size());
  Eigen::Index at = 0;
  detail::flatten_block(w_in, v, at);
  detail::flatten_block(w_rec, v, at);
  detail::flatten_block(w_out, v, at);
  return v;
}

inline Vec lif_flatten(const LifNet& net) {
  return lif_flatten_mats(net.w_in, net.w_rec, net.w_out);
}

inline LifNet lif_unflatten(const LifConfig& c, const Vec& v) {
  require_shape(v.size() == lif_dim(c), "lif parameter vector has the wrong length");
  LifNet net;
  net.cfg = c;
  net.w_in = Mat(c.n_rec, c.n_in);
  net.w_rec = Mat(c.n_rec, c.n_rec);
  net.w_out = Mat(c.n_out, c.n_rec);
  Eigen::Index at = 0;
  detail::unflatten_block(v, net.w_in, at);
  detail::unflatten_block(v, net.w_rec, at);
  detail::unflatten_block(v, net.w_out, at);
  net.w_rec.diagonal().setZero();
  return net;
}

// Readout weights learn more slowly than the recurrent fabric.
inline Vec lif_lr_scale(const LifConfig& c, double out_factor = 0.1) {
  Vec s = Vec::Ones(lif_dim(c));
  s.tail(static_cast<Eigen::Index>(c.n_out) * c.n_rec).setConstant(out_factor);
  return s;
}

// ---------------------------------------------------------------- dynamics

struct LifState {
  Vec h, z, y;
  static LifState zero(const LifConfig& c) {
    LifState s;
    s.h = Vec::Zero(c.n_rec);
    s.z = Vec::Zero(c.n_rec);
    s.y = Vec::Zero(c.n_out);
    return s;
  }
};

struct Rollout {
  Mat h, z;  // T x n_rec, row r holds step r+1
  Mat y;     // T x n_out
  Vec prediction;  // time average of the readout
};

// Leaky integrate and fire with soft reset: a spike subtracts the threshold
// from the next membrane update. The readout filters the previous step's
// spikes, so input at step t can reach the readout at t+1 the earliest.
inline Rollout lif_rollout(const LifNet& net, const Mat& raster, const LifState& init) {
  const LifConfig& c = net.cfg;
  c.validate();
  require_shape(raster.cols() == c.n_in, "raster width must match n_in");
  require(raster.rows() > 0, "rollout needs at least one step");
  require_shape(init.h.size() == c.n_rec && init.z.size() == c.n_rec && init.y.size() == c.n_out,
                "initial state sizes must match the network");
  const Eigen::Index T = raster.rows();
  const double al = c.alpha(), ka = c.kappa();
  Rollout out;
  out.h = Mat(T, c.n_rec);
  out.z = Mat(T, c.n_rec);
  out.y = Mat(T, c.n_out);
  Vec h = init.h, z_prev = init.z, y = init.y;
  Vec pred = Vec::Zero(c.n_out);
  for (Eigen::Index r = 0; r < T; ++r) {
    h = al * h + net.w_rec * z_prev + net.w_in * raster.row(r).transpose() - c.v_th * z_prev;
    y = ka * y + net.w_out * z_prev;
    Vec z = (h.array() >= c.v_th).cast<double>();
    out.h.row(r) = h.transpose();
    out.z.row(r) = z.transpose();
    out.y.row(r) = y.transpose();
    pred += y;
    z_prev = z;
  }
  out.prediction = pred / static_cast<double>(T);
  check_finite(out.prediction, "lif prediction");
  return out;
}

// Triangular surrogate for the spike derivative, peaked at the threshold.
inline double pseudo_derivative(double h, double v_th, double gamma) {
  return gamma * std::max(0.0, 1.0 - std::abs(h - v_th) / v_th);
}

// ---------------------------------------------------------------- traces

// Shared recursions for the eligibility machinery. filt_z carries the
// readout-filtered presynaptic spikes (previous step), a_in and a_rec the
// membrane-filtered presynaptic activity. a_rec deliberately includes the
// current step's spikes.
struct TraceRunner {
  double alpha = 0.0, kappa = 0.0;
  Vec a_in, a_rec, filt_z, z_prev;

  void reset(const LifConfig& c, const LifState& init) {
    alpha = c.alpha();
    kappa = c.kappa();
    a_in = Vec::Zero(c.n_in);
    a_rec = Vec::Zero(c.n_rec);
    filt_z = Vec::Zero(c.n_rec);
    z_prev = init.z;
  }

  void step(const Eigen::Ref<const Eigen::RowVectorXd>& raster_row,
            const Eigen::Ref<const Eigen::RowVectorXd>& z_row) {
    filt_z = kappa * filt_z + z_prev;
    a_in = alpha * a_in + raster_row.transpose();
    a_rec = alpha * a_rec + z_row.transpose();
    z_prev = z_row.transpose();
  }
};

struct TraceDiag {
  Mat filt_z;  // T x n_rec
  Mat a_in;    // T x n_in
  Mat a_rec;   // T x n_rec
};

inline TraceDiag eprop_traces(const LifConfig& c, const Mat& raster, const Mat& spikes,
                              const LifState& init) {
  require_shape(raster.cols() == c.n_in && spikes.cols() == c.n_rec &&
                    raster.rows() == spikes.rows(),
                "trace inputs must share the rollout shape");
  const Eigen::Index T = raster.rows();
  TraceRunner run;
  run.reset(c, init);
  TraceDiag d;
  d.filt_z = Mat(T, c.n_rec);
  d.a_in = Mat(T, c.n_in);
  d.a_rec = Mat(T, c.n_rec);
  for (Eigen::Index r = 0; r < T; ++r) {
    run.step(raster.row(r), spikes.row(r));
    d.filt_z.row(r) = run.filt_z.transpose();
    d.a_in.row(r) = run.a_in.transpose();
    d.a_rec.row(r) = run.a_rec.transpose();
  }
  return d;
}

// ---------------------------------------------------------------- e-prop

struct EpropCfg {
  double reg_strength = 1e-5;  // activity regularizer weight
  double reg_target = 0.2;     // target firing rate per neuron and step
  double pseudo_gamma = 0.3;

  EpropCfg without_reg() const {
    EpropCfg c = *this;
    c.reg_strength = 0.0;
    return c;
  }
};

struct EpropOut {
  Mat g_in, g_rec, g_out;
  double task_loss = 0.0;
  double reg_loss = 0.0;
  Vec rates;        // per-neuron firing rate over the batch
  Mat predictions;  // B x n_out
};

// Eligibility-propagation gradient estimate over a batch of rasters. The
// readout gradient is exact; the recurrent and input gradients broadcast the
// time-averaged learning signal over summed filtered eligibilities, and the
// rate regularizer couples through the unfiltered ones.
inline EpropOut eprop_grads(const LifNet& net, const std::vector<Mat>& rasters,
                            const Mat& targets, const EpropCfg& ep) {
  const LifConfig& c = net.cfg;
  c.validate();
  require(!rasters.empty(), "eprop needs at least one sample");
  require_shape(targets.rows() == static_cast<Eigen::Index>(rasters.size()) &&
                    targets.cols() == c.n_out,
                "target shape must be batch x n_out");
  const auto B = static_cast<Eigen::Index>(rasters.size());
  const LifState init = LifState::zero(c);

  std::vector<Rollout> rolls(static_cast<std::size_t>(B));
  Vec z_total = Vec::Zero(c.n_rec);
  double steps_total = 0.0;
  for (Eigen::Index b = 0; b < B; ++b) {
    rolls[static_cast<std::size_t>(b)] = lif_rollout(net, rasters[static_cast<std::size_t>(b)], init);
    z_total += rolls[static_cast<std::size_t>(b)].z.colwise().sum().transpose();
    steps_total += static_cast<double>(rasters[static_cast<std::size_t>(b)].rows());
  }

  EpropOut out;
  out.rates = z_total / steps_total;
  out.predictions = Mat(B, c.n_out);
  for (Eigen::Index b = 0; b < B; ++b)
    out.predictions.row(b) = rolls[static_cast<std::size_t>(b)].prediction.transpose();

  Mat err = 2.0 * (out.predictions - targets) / static_cast<double>(B * c.n_out);
  out.task_loss = (out.predictions - targets).array().square().sum() /
                  static_cast<double>(B * c.n_out);
  Vec rate_gap = out.rates.array() - ep.reg_target;
  out.reg_loss = ep.reg_strength * rate_gap.array().square().mean();
  // learning signal of the regularizer, already averaged over batch and time
  Vec reg_sig = ep.reg_strength * 2.0 * rate_gap / (static_cast<double>(c.n_rec) * steps_total);

  out.g_in = Mat::Zero(c.n_rec, c.n_in);
  out.g_rec = Mat::Zero(c.n_rec, c.n_rec);
  out.g_out = Mat::Zero(c.n_out, c.n_rec);

  TraceRunner run;
  Mat ebar_in(c.n_rec, c.n_in), ebar_rec(c.n_rec, c.n_rec);
  Mat se_in(c.n_rec, c.n_in), se_rec(c.n_rec, c.n_rec);
  Mat sebar_in(c.n_rec, c.n_in), sebar_rec(c.n_rec, c.n_rec);
  for (Eigen::Index b = 0; b < B; ++b) {
    const Mat& raster = rasters[static_cast<std::size_t>(b)];
    const Rollout& roll = rolls[static_cast<std::size_t>(b)];
    const Eigen::Index T = raster.rows();
    run.reset(c, init);
    ebar_in.setZero();
    ebar_rec.setZero();
    se_in.setZero();
    se_rec.setZero();
    sebar_in.setZero();
    sebar_rec.setZero();
    Vec filt_z_sum = Vec::Zero(c.n_rec);
    for (Eigen::Index r = 0; r < T; ++r) {
      run.step(raster.row(r), roll.z.row(r));
      filt_z_sum += run.filt_z;
      Vec pd(c.n_rec);
      for (Eigen::Index j = 0; j < c.n_rec; ++j)
        pd[j] = pseudo_derivative(roll.h(r, j), c.v_th, ep.pseudo_gamma);
      Mat e_in = pd * run.a_in.transpose();
      Mat e_rec = pd * run.a_rec.transpose();
      ebar_in = run.kappa * ebar_in + e_in;
      ebar_rec = run.kappa * ebar_rec + e_rec;
      se_in += e_in;
      se_rec += e_rec;
      sebar_in += ebar_in;
      sebar_rec += ebar_rec;
    }
    double inv_T = 1.0 / static_cast<double>(T);
    out.g_out += err.row(b).transpose() * (filt_z_sum * inv_T).transpose();
    Vec sig = net.w_out.transpose() * err.row(b).transpose() * inv_T;
    out.g_in += sig.asDiagonal() * sebar_in + reg_sig.asDiagonal() * se_in;
    out.g_rec += sig.asDiagonal() * sebar_rec + reg_sig.asDiagonal() * se_rec;
  }
  out.g_rec.diagonal().setZero();
  check_finite(out.task_loss, "eprop task loss");
  return out;
}

// ---------------------------------------------------------------- encoding

// Population rate code on [0,1]: bell-shaped tuning curves with evenly spaced
// centers, sampled as independent Bernoulli spikes per step.
struct PoissonEncoder {
  int n = 100;
  double sigma2 = 2e-4;
  int steps = 20;

  void validate() const {
    require(n >= 2 && steps > 0 && sigma2 > 0, "encoder needs n >= 2, steps > 0, sigma2 > 0");
  }

  Vec rates(double z01) const {
    validate();
    require(z01 >= 0.0 && z01 <= 1.0, "encoder input outside [0,1]");
    Vec p(n);
    for (int i = 0; i < n; ++i) {
      double mu = static_cast<double>(i) / (n - 1);
      p[i] = std::exp(-(mu - z01) * (mu - z01) / (2.0 * sigma2));
    }
    return p;
  }

  Mat encode(double z01, Rng& rng) const {
    Vec p = rates(z01);
    Mat raster(steps, n);
    for (int t = 0; t < steps; ++t)
      for (int i = 0; i < n; ++i) raster(t, i) = rng.uniform01() < p[i] ? 1.0 : 0.0;
    return raster;
  }
};

inline double unit_from_range(double x, double lo, double hi) {
  require(hi > lo, "empty range");
  require(x >= lo && x <= hi, "value outside the encoded range");
  return (x - lo) / (hi - lo);
}

// ---------------------------------------------------------------- task binding

struct SpikingTaskData {
  LifConfig cfg;
  std::vector<Mat> learn_rasters, eval_rasters;
  Mat learn_targets, eval_targets;  // n x n_out
};

// Samples a sinusoid, draws inputs, and freezes the spike encodings so the
// task is a fixed deterministic objective from then on.
inline SpikingTaskData make_sinusoid_spiking_task(const LifConfig& cfg,
                                                  const PoissonEncoder& enc,
                                                  const tasks::SinusoidTask& task, int n_learn,
                                                  int n_eval, Rng& rng) {
  require(cfg.n_in == enc.n, "encoder width must match n_in");
  require(cfg.n_out == 1, "sinusoid regression uses a single readout");
  require(n_learn > 0 && n_eval > 0, "task needs learn and eval samples");
  SpikingTaskData d;
  d.cfg = cfg;
  d.learn_targets = Mat(n_learn, 1);
  d.eval_targets = Mat(n_eval, 1);
  for (int i = 0; i < n_learn; ++i) {
    double x = rng.uniform(-5.0, 5.0);
    d.learn_targets(i, 0) = task(x);
    d.learn_rasters.push_back(enc.encode(unit_from_range(x, -5.0, 5.0), rng));
  }
  for (int i = 0; i < n_eval; ++i) {
    double x = rng.uniform(-5.0, 5.0);
    d.eval_targets(i, 0) = task(x);
    d.eval_rasters.push_back(enc.encode(unit_from_range(x, -5.0, 5.0), rng));
  }
  return d;
}

inline std::function<double(const Vec&, Vec*)> spiking_loss_fn(
    const LifConfig& cfg, const EpropCfg& ep,
    std::shared_ptr<const std::vector<Mat>> rasters, std::shared_ptr<const Mat> targets) {
  return [cfg, ep, rasters, targets](const Vec& phi, Vec* g) {
    LifNet net = lif_unflatten(cfg, phi);
    EpropOut out = eprop_grads(net, *rasters, *targets, ep);
    if (g) *g = lif_flatten_mats(out.g_in, out.g_rec, out.g_out);
    return out.task_loss + out.reg_loss;
  };
}

// The learning loss carries the rate regularizer; the evaluation loss is the
// plain prediction error.
inline bilevel::BilevelTask bind_spiking_task(const synapse::SynapseModel& model,
                                              const SpikingTaskData& data, const EpropCfg& ep,
                                              std::string id) {
  require_shape(model.dim() == lif_dim(data.cfg), "meta model size must match the network");
  auto lr = std::make_shared<const std::vector<Mat>>(data.learn_rasters);
  auto er = std::make_shared<const std::vector<Mat>>(data.eval_rasters);
  auto lt = std::make_shared<const Mat>(data.learn_targets);
  auto et = std::make_shared<const Mat>(data.eval_targets);
  return model.bind(std::move(id), spiking_loss_fn(data.cfg, ep, lr, lt),
                    spiking_loss_fn(data.cfg, ep.without_reg(), er, et));
}

}  // namespace cml::spiking
