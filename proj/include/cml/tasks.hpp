#pragma once

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <istream>
#include <memory>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "cml/bilevel.hpp"
#include "cml/core.hpp"
#include "cml/mlp.hpp"
#include "cml/rng.hpp"
#include "cml/synapse.hpp"

namespace cml::tasks {

// ---------------------------------------------------------------- sinusoid

struct SinusoidTask {
  double amplitude = 1.0;
  double phase = 0.0;

  double operator()(double x) const { return amplitude * std::sin(x + phase); }
};

// Amplitude uniform on [0.1, 5], phase uniform on [0, pi], inputs uniform on
// [-5, 5]; draw order: amplitude, then phase, then inputs.
inline SinusoidTask sample_sinusoid(Rng& rng) {
  SinusoidTask t;
  t.amplitude = rng.uniform(0.1, 5.0);
  t.phase = rng.uniform(0.0, M_PI);
  return t;
}

struct RegressionSet {
  Mat X, Y;  // rows are samples
};

inline RegressionSet sinusoid_dataset(const SinusoidTask& t, int n, Rng& rng) {
  require(n > 0, "sinusoid dataset needs n > 0");
  RegressionSet s;
  s.X = Mat(n, 1);
  s.Y = Mat(n, 1);
  for (int i = 0; i < n; ++i) {
    double x = rng.uniform(-5.0, 5.0);
    s.X(i, 0) = x;
    s.Y(i, 0) = t(x);
  }
  return s;
}

// Mean MSE over a dataset as a loss in the flattened network parameters.
inline std::function<double(const Vec&, Vec*)> mlp_flat_mse(const MlpArch& arch, Mat X, Mat Y) {
  auto sx = std::make_shared<Mat>(std::move(X));
  auto sy = std::make_shared<Mat>(std::move(Y));
  return [arch, sx, sy](const Vec& phi, Vec* g) {
    MlpParams p = mlp_unflatten(arch, phi);
    if (!g) return mlp_dataset_mse(p, nullptr, *sx, *sy, nullptr);
    MlpGrads gr = MlpGrads::zero(arch);
    double v = mlp_dataset_mse(p, nullptr, *sx, *sy, &gr);
    MlpParams gp = mlp_zero(arch);
    gp.w = gr.w;
    gp.b = gr.b;
    *g = mlp_flatten(gp);
    return v;
  };
}

// ---------------------------------------------------------------- csv

struct CsvTable {
  std::vector<std::string> header;  // empty when the file has none
  Mat data;
};

namespace detail {
inline double parse_field(const std::string& field, std::size_t line_no, std::size_t col) {
  const char* begin = field.c_str();
  char* end = nullptr;
  double v = std::strtod(begin, &end);
  while (end && *end && std::isspace(static_cast<unsigned char>(*end))) ++end;
  if (end == begin || (end && *end != '\0'))
    throw ParseError("csv: line " + std::to_string(line_no) + ", column " +
                     std::to_string(col + 1) + ": not a number: '" + field + "'");
  return v;
}

inline std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}
}  // namespace detail

// Numeric CSV. Accepts LF and CRLF endings; every row must have the same
// column count; errors carry 1-based line numbers.
inline CsvTable read_csv(std::istream& in, bool has_header) {
  CsvTable t;
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  std::size_t cols = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() && in.peek() == EOF) break;  // trailing newline
    std::vector<std::string> fields = detail::split_fields(line);
    if (line_no == 1 && has_header) {
      t.header = fields;
      cols = fields.size();
      continue;
    }
    if (cols == 0) cols = fields.size();
    if (fields.size() != cols)
      throw ParseError("csv: line " + std::to_string(line_no) + ": expected " +
                       std::to_string(cols) + " columns, got " + std::to_string(fields.size()));
    std::vector<double> row(fields.size());
    for (std::size_t c = 0; c < fields.size(); ++c)
      row[c] = detail::parse_field(fields[c], line_no, c);
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ParseError("csv: no data rows");
  t.data = Mat(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < cols; ++c)
      t.data(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  return t;
}

inline CsvTable read_csv_file(const std::string& path, bool has_header) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("csv: cannot open '" + path + "'");
  return read_csv(in, has_header);
}

// Full-precision writer; read_csv(write_csv(t)) reproduces t exactly.
inline void write_csv(std::ostream& out, const CsvTable& t) {
  if (!t.header.empty()) {
    for (std::size_t i = 0; i < t.header.size(); ++i)
      out << (i ? "," : "") << t.header[i];
    out << "\n";
  }
  for (Eigen::Index r = 0; r < t.data.rows(); ++r) {
    for (Eigen::Index c = 0; c < t.data.cols(); ++c)
      out << (c ? "," : "") << fmt_g17(t.data(r, c));
    out << "\n";
  }
}

// ---------------------------------------------------------------- regression

struct SplitData {
  Mat x_learn, x_eval;
  Vec y_learn, y_eval;
};

// Shuffled split with the learn fraction rounded down (at least one row each
// side), then feature standardization using learn-split statistics only.
inline SplitData regression_split(const Mat& X, const Vec& y, double learn_frac, Rng& rng) {
  require_shape(X.rows() == y.size(), "regression split X/y mismatch");
  require(X.rows() >= 2, "regression split needs at least two rows");
  require(learn_frac > 0.0 && learn_frac < 1.0, "learn fraction must be in (0,1)");
  Eigen::Index n = X.rows();
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  for (Eigen::Index i = n - 1; i > 0; --i) {
    auto j = static_cast<Eigen::Index>(rng.uniform_int(static_cast<std::uint64_t>(i + 1)));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  auto n_learn = static_cast<Eigen::Index>(learn_frac * static_cast<double>(n));
  n_learn = std::max<Eigen::Index>(1, std::min(n - 1, n_learn));
  SplitData s;
  s.x_learn = Mat(n_learn, X.cols());
  s.y_learn = Vec(n_learn);
  s.x_eval = Mat(n - n_learn, X.cols());
  s.y_eval = Vec(n - n_learn);
  for (Eigen::Index i = 0; i < n_learn; ++i) {
    s.x_learn.row(i) = X.row(idx[static_cast<std::size_t>(i)]);
    s.y_learn[i] = y[idx[static_cast<std::size_t>(i)]];
  }
  for (Eigen::Index i = n_learn; i < n; ++i) {
    s.x_eval.row(i - n_learn) = X.row(idx[static_cast<std::size_t>(i)]);
    s.y_eval[i - n_learn] = y[idx[static_cast<std::size_t>(i)]];
  }
  Vec mean = s.x_learn.colwise().mean();
  Vec sd(X.cols());
  for (Eigen::Index c = 0; c < X.cols(); ++c) {
    double var = (s.x_learn.col(c).array() - mean[c]).square().mean();
    sd[c] = var > 0.0 ? std::sqrt(var) : 1.0;
  }
  for (Eigen::Index c = 0; c < X.cols(); ++c) {
    s.x_learn.col(c) = (s.x_learn.col(c).array() - mean[c]) / sd[c];
    s.x_eval.col(c) = (s.x_eval.col(c).array() - mean[c]) / sd[c];
  }
  return s;
}

// Synthetic regression in the shape of a small housing table: a linear part
// plus a bounded nonlinearity and observation noise.
inline void synthetic_regression(int rows, int features, Rng& rng, Mat* X, Vec* y) {
  require(rows >= 2 && features >= 1, "synthetic regression needs rows >= 2, features >= 1");
  Vec w = rng.normal_vec(features);
  Vec u = rng.normal_vec(features);
  u /= u.norm();
  *X = Mat(rows, features);
  *y = Vec(rows);
  for (int r = 0; r < rows; ++r) {
    Vec x = rng.normal_vec(features);
    X->row(r) = x.transpose();
    (*y)[r] = w.dot(x) / std::sqrt(static_cast<double>(features)) +
              0.5 * std::sin(2.0 * u.dot(x)) + 0.1 * rng.normal();
  }
}

// ---------------------------------------------------------------- wheel bandit

// Contexts live on the unit disc. Inside radius delta only action 5 pays more
// than baseline; outside, the action matching the context quadrant pays 50.
// Actions are 1-based; ties on the axes go to the smaller action index.
struct WheelBandit {
  double delta = 0.5;
  double noise_sd = 0.01;
  static constexpr int n_actions = 5;

  void validate() const { require(delta >= 0.0 && delta <= 1.0, "wheel delta outside [0,1]"); }

  static int quadrant_action(const Vec& x) {
    return x[0] >= 0.0 ? (x[1] >= 0.0 ? 1 : 2) : (x[1] >= 0.0 ? 3 : 4);
  }

  double mean_reward(const Vec& x, int action) const {
    validate();
    require_shape(x.size() == 2, "wheel context must be two-dimensional");
    require(x.norm() <= 1.0 + 1e-12, "wheel context outside the unit disc");
    require(action >= 1 && action <= n_actions, "wheel action outside 1..5");
    if (action == 5) return 1.2;
    bool high = x.norm() > delta;
    return (high && action == quadrant_action(x)) ? 50.0 : 1.0;
  }

  int optimal_action(const Vec& x) const {
    return x.norm() > delta ? quadrant_action(x) : 5;
  }

  double optimal_mean(const Vec& x) const { return mean_reward(x, optimal_action(x)); }

  // Expected per-step regret of a uniform-random policy at this context:
  // 0.16 in the low-reward region, 39.16 in the high-reward region.
  double random_regret_expectation(const Vec& x) const {
    double opt = optimal_mean(x);
    double total = 0.0;
    for (int a = 1; a <= n_actions; ++a) total += opt - mean_reward(x, a);
    return total / n_actions;
  }
};

// Uniform draw from the unit disc by rejection from the enclosing square.
inline Vec sample_disc(Rng& rng) {
  for (;;) {
    Vec x(2);
    x[0] = rng.uniform(-1.0, 1.0);
    x[1] = rng.uniform(-1.0, 1.0);
    if (x.squaredNorm() <= 1.0) return x;
  }
}

struct PullResult {
  double reward = 0.0;
  double regret = 0.0;  // optimal mean minus chosen mean, never negative
};

inline PullResult wheel_step(const WheelBandit& b, const Vec& x, int action, Rng& rng) {
  double mean = b.mean_reward(x, action);
  PullResult r;
  r.reward = mean + b.noise_sd * rng.normal();
  r.regret = b.optimal_mean(x) - mean;
  return r;
}

struct RegretLedger {
  double cum_regret = 0.0;
  double cum_random = 0.0;  // analytic uniform-random expectation, same contexts
  long steps = 0;
  bool record_trace = false;
  std::vector<double> trace_regret, trace_random;

  void add(double regret, double random_expectation) {
    require(regret >= -1e-12, "negative regret contribution");
    cum_regret += regret;
    cum_random += random_expectation;
    ++steps;
    if (record_trace) {
      trace_regret.push_back(cum_regret);
      trace_random.push_back(cum_random);
    }
  }

  double normalized() const { return cum_random > 0.0 ? cum_regret / cum_random : 0.0; }
};

struct BanditRecord {
  Vec x;
  int action = 1;
  double reward = 0.0;
};

// Offline set: contexts uniform on the disc, actions uniform, rewards sampled.
// Draw order per record: context (rejection draws), action, reward noise.
inline std::vector<BanditRecord> bandit_dataset(const WheelBandit& b, int n, Rng& rng) {
  require(n > 0, "bandit dataset needs n > 0");
  std::vector<BanditRecord> recs(static_cast<std::size_t>(n));
  for (auto& rec : recs) {
    rec.x = sample_disc(rng);
    rec.action = 1 + static_cast<int>(rng.uniform_int(WheelBandit::n_actions));
    rec.reward = wheel_step(b, rec.x, rec.action, rng).reward;
  }
  return recs;
}

// Masked regression: the loss only reads the predicted value of the action
// actually taken in each record.
inline std::function<double(const Vec&, Vec*)> bandit_value_mse(
    const MlpArch& arch, std::shared_ptr<const std::vector<BanditRecord>> recs) {
  require(!recs->empty(), "bandit value loss over an empty record set");
  return [arch, recs](const Vec& phi, Vec* g) {
    MlpParams p = mlp_unflatten(arch, phi);
    MlpGrads gr = MlpGrads::zero(arch);
    double total = 0.0;
    double inv = 1.0 / static_cast<double>(recs->size());
    MlpCache cache;
    for (const auto& rec : *recs) {
      Vec pred = mlp_forward(p, nullptr, rec.x, g ? &cache : nullptr);
      double d = pred[rec.action - 1] - rec.reward;
      total += d * d;
      if (g) {
        Vec up = Vec::Zero(pred.size());
        up[rec.action - 1] = 2.0 * d * inv;
        mlp_backward(p, nullptr, cache, up, gr);
      }
    }
    if (g) {
      MlpParams gp = mlp_zero(arch);
      gp.w = gr.w;
      gp.b = gr.b;
      *g = mlp_flatten(gp);
    }
    return total * inv;
  };
}

struct BanditTaskData {
  WheelBandit bandit;
  std::shared_ptr<const std::vector<BanditRecord>> learn, eval;
};

// One meta-task: a wheel instance plus fixed learn/eval interaction sets.
inline BanditTaskData bandit_task_data(const WheelBandit& b, int n_learn, int n_eval, Rng& rng) {
  BanditTaskData d;
  d.bandit = b;
  d.learn = std::make_shared<const std::vector<BanditRecord>>(bandit_dataset(b, n_learn, rng));
  d.eval = std::make_shared<const std::vector<BanditRecord>>(bandit_dataset(b, n_eval, rng));
  return d;
}

inline bilevel::BilevelTask bind_bandit_task(const MlpArch& arch,
                                             const synapse::SynapseModel& model,
                                             const BanditTaskData& data, std::string id) {
  return model.bind(std::move(id), bandit_value_mse(arch, data.learn),
                    bandit_value_mse(arch, data.eval));
}

enum class BanditPolicy { Greedy, UniformRandom, FixedActionFive, Oracle };

struct OnlineCfg {
  long horizon = 20000;
  int warmup_per_action = 2;
  int refit_every = 50;   // contexts between refits
  int refit_steps = 250;  // optimizer steps per refit
  int refit_batch = 512;  // replay minibatch size (full buffer when smaller)
  OptimCfg opt = OptimCfg::adam(1e-4);
  bool record_trace = false;
};

struct OnlineResult {
  RegretLedger ledger;
  Vec phi;  // fast parameters at the end of the episode
};

// Runs one evaluation episode. The greedy policy predicts action values with
// the fast parameters, which start at omega and are refit on the replay
// buffer (masked MSE plus the consolidation pull) on a fixed schedule.
inline OnlineResult bandit_online_eval(const WheelBandit& b, const MlpArch& arch,
                                       const synapse::SynapseModel& model,
                                       BanditPolicy policy, const OnlineCfg& cfg, Rng& rng) {
  b.validate();
  require(cfg.horizon > 0, "online eval needs a positive horizon");
  OnlineResult out;
  out.ledger.record_trace = cfg.record_trace;
  out.phi = model.meta.omega;
  MlpParams params = mlp_unflatten(arch, out.phi);
  std::vector<BanditRecord> replay;
  replay.reserve(static_cast<std::size_t>(cfg.horizon));
  long warmup = static_cast<long>(cfg.warmup_per_action) * WheelBandit::n_actions;
  for (long t = 0; t < cfg.horizon; ++t) {
    Vec x = sample_disc(rng);
    int action;
    switch (policy) {
      case BanditPolicy::UniformRandom:
        action = 1 + static_cast<int>(rng.uniform_int(WheelBandit::n_actions));
        break;
      case BanditPolicy::FixedActionFive:
        action = 5;
        break;
      case BanditPolicy::Oracle:
        action = b.optimal_action(x);
        break;
      case BanditPolicy::Greedy:
      default: {
        if (t < warmup) {
          action = 1 + static_cast<int>(t % WheelBandit::n_actions);
        } else {
          Vec values = mlp_forward(params, nullptr, x);
          int best = 0;
          for (int a = 1; a < WheelBandit::n_actions; ++a)
            if (values[a] > values[best]) best = a;  // ties keep the lower index
          action = best + 1;
        }
        break;
      }
    }
    PullResult pr = wheel_step(b, x, action, rng);
    out.ledger.add(pr.regret, b.random_regret_expectation(x));
    if (policy == BanditPolicy::Greedy) {
      replay.push_back({x, action, pr.reward});
      if ((t + 1) % cfg.refit_every == 0) {
        OptimState opt(cfg.opt);
        for (int s = 0; s < cfg.refit_steps; ++s) {
          std::shared_ptr<const std::vector<BanditRecord>> batch;
          if (static_cast<int>(replay.size()) <= cfg.refit_batch) {
            batch = std::make_shared<const std::vector<BanditRecord>>(replay);
          } else {
            std::vector<BanditRecord> mb(static_cast<std::size_t>(cfg.refit_batch));
            for (auto& rec : mb)
              rec = replay[rng.uniform_int(replay.size())];
            batch = std::make_shared<const std::vector<BanditRecord>>(std::move(mb));
          }
          auto loss = bandit_value_mse(arch, batch);
          Vec g;
          loss(out.phi, &g);
          consolidation_penalty(out.phi, model.meta, &g);
          opt.step(out.phi, g);
        }
        params = mlp_unflatten(arch, out.phi);
      }
    }
  }
  return out;
}

}  // namespace cml::tasks
