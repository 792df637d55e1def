#include <catch2/catch_amalgamated.hpp>

#include "cml/mlp.hpp"
#include "helpers.hpp"

using namespace cml;

TEST_CASE("mse value and gradient on a worked example") {
  Vec pred(2), target(2);
  pred << 1.0, 3.0;
  target << 0.0, 1.0;
  LossOut lo = mse_loss(pred, target);
  REQUIRE(lo.value == Catch::Approx(2.5).epsilon(1e-15));
  REQUIRE(lo.grad[0] == Catch::Approx(1.0).epsilon(1e-15));
  REQUIRE(lo.grad[1] == Catch::Approx(2.0).epsilon(1e-15));
  REQUIRE_THROWS_AS(mse_loss(pred, Vec::Zero(3)), ShapeError);
}

TEST_CASE("cross entropy against softmax identities") {
  Vec logits(3);
  logits << 0.3, 0.3, 0.3;
  LossOut lo = cross_entropy_loss(logits, 1);
  REQUIRE(lo.value == Catch::Approx(std::log(3.0)).epsilon(1e-14));
  REQUIRE(std::abs(lo.grad.sum()) < 1e-14);
  // gradient is softmax minus onehot: checked by finite differences
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    Vec z = rng.normal_vec(4);
    int label = static_cast<int>(rng.uniform_int(4));
    LossOut out = cross_entropy_loss(z, label);
    Vec fd = testutil::fd_grad(
        [&](const Vec& x) { return cross_entropy_loss(x, label).value; }, z);
    REQUIRE((out.grad - fd).norm() < 1e-7);
  }
  REQUIRE_THROWS_AS(cross_entropy_loss(logits, 3), ContractError);
}

TEST_CASE("flatten and unflatten round trip") {
  Rng rng(5);
  MlpArch arch = MlpArch::dense({3, 5, 2}, Act::Tanh);
  MlpParams p = mlp_init(arch, rng);
  Vec flat = mlp_flatten(p);
  REQUIRE(flat.size() == arch.param_count());
  MlpParams q = mlp_unflatten(arch, flat);
  for (int l = 0; l < arch.layers(); ++l) {
    REQUIRE((p.w[l] - q.w[l]).norm() == 0.0);
    REQUIRE((p.b[l] - q.b[l]).norm() == 0.0);
  }
}

TEST_CASE("kaiming init scales with fan-in and zeroes biases") {
  Rng rng(7);
  MlpArch arch = MlpArch::dense({200, 300, 1}, Act::Relu);
  MlpParams p = mlp_init(arch, rng);
  REQUIRE(p.b[0].norm() == 0.0);
  REQUIRE(p.b[1].norm() == 0.0);
  double sd = std::sqrt(p.w[0].array().square().mean());
  REQUIRE(sd == Catch::Approx(std::sqrt(2.0 / 200.0)).margin(0.01));
}

static double flat_loss(const MlpArch& arch, const Vec& flat, const Vec& x, const Vec& y) {
  MlpParams p = mlp_unflatten(arch, flat);
  return mse_loss(mlp_forward(p, nullptr, x), y).value;
}

TEST_CASE("backprop matches finite differences on random nets") {
  Rng rng(11);
  std::vector<Act> acts{Act::Tanh, Act::Relu, Act::Linear};
  for (int trial = 0; trial < 100; ++trial) {
    Act hidden = acts[trial % acts.size()];
    MlpArch arch = MlpArch::dense({2, 4, 3, 1}, hidden);
    MlpParams p = mlp_init(arch, rng);
    Vec x = rng.normal_vec(2), y = rng.normal_vec(1);
    MlpCache cache;
    Vec out = mlp_forward(p, nullptr, x, &cache);
    if (hidden == Act::Relu) {
      // finite differences are meaningless within h of a relu kink
      double closest = 1e300;
      for (const auto& pre : cache.pre) closest = std::min(closest, pre.cwiseAbs().minCoeff());
      if (closest < 1e-3) continue;
    }
    LossOut lo = mse_loss(out, y);
    MlpGrads g = MlpGrads::zero(arch);
    mlp_backward(p, nullptr, cache, lo.grad, g);
    MlpParams gp = mlp_zero(arch);
    gp.w = g.w;
    gp.b = g.b;
    Vec flat = mlp_flatten(p);
    Vec fd = testutil::fd_grad([&](const Vec& f) { return flat_loss(arch, f, x, y); }, flat);
    REQUIRE(testutil::max_rel_gap(mlp_flatten(gp), fd, 1e-4) < 1e-4);
  }
}

TEST_CASE("modulated relu with unit gain and zero threshold is plain relu") {
  Rng rng(13);
  MlpArch march = MlpArch::dense({3, 6, 2}, Act::ModRelu);
  MlpArch rarch = MlpArch::dense({3, 6, 2}, Act::Relu);
  MlpParams p = mlp_init(march, rng);
  MlpParams q = p;
  q.arch = rarch;
  Modulation mod = Modulation::identity(march);
  for (int trial = 0; trial < 100; ++trial) {
    Vec x = rng.normal_vec(3);
    Vec ym = mlp_forward(p, &mod, x);
    Vec yr = mlp_forward(q, nullptr, x);
    REQUIRE((ym - yr).norm() == 0.0);
  }
}

TEST_CASE("modulation gradients match finite differences") {
  Rng rng(17);
  MlpArch arch = MlpArch::dense({2, 5, 1}, Act::ModRelu);
  for (int trial = 0; trial < 100; ++trial) {
    MlpParams p = mlp_init(arch, rng);
    Vec gain = rng.uniform_vec(5, 0.5, 1.5);
    Vec thresh = rng.normal_vec(5);
    thresh *= 0.3;
    Vec x = rng.normal_vec(2), y = rng.normal_vec(1);
    auto run = [&](const Vec& g_, const Vec& t_) {
      Modulation m = Modulation::identity(arch);
      m.gain[0] = g_;
      m.thresh[0] = t_;
      return mse_loss(mlp_forward(p, &m, x), y).value;
    };
    Modulation m = Modulation::identity(arch);
    m.gain[0] = gain;
    m.thresh[0] = thresh;
    MlpCache cache;
    Vec out = mlp_forward(p, &m, x, &cache);
    LossOut lo = mse_loss(out, y);
    MlpGrads g = MlpGrads::zero(arch);
    mlp_backward(p, &m, cache, lo.grad, g);
    Vec fd_gain = testutil::fd_grad([&](const Vec& v) { return run(v, thresh); }, gain);
    Vec fd_thresh = testutil::fd_grad([&](const Vec& v) { return run(gain, v); }, thresh);
    REQUIRE((g.gain[0] - fd_gain).norm() < 1e-5 * (1.0 + fd_gain.norm()));
    REQUIRE((g.thresh[0] - fd_thresh).norm() < 1e-5 * (1.0 + fd_thresh.norm()));
  }
}

TEST_CASE("dataset loss averages per-sample losses") {
  Rng rng(19);
  MlpArch arch = MlpArch::dense({2, 3, 1}, Act::Tanh);
  MlpParams p = mlp_init(arch, rng);
  Mat X(4, 2), Y(4, 1);
  for (int r = 0; r < 4; ++r) {
    X.row(r) = rng.normal_vec(2).transpose();
    Y.row(r) = rng.normal_vec(1).transpose();
  }
  double manual = 0.0;
  for (int r = 0; r < 4; ++r)
    manual += mse_loss(mlp_forward(p, nullptr, X.row(r).transpose()), Y.row(r).transpose()).value;
  manual /= 4.0;
  REQUIRE(mlp_dataset_mse(p, nullptr, X, Y, nullptr) == Catch::Approx(manual).epsilon(1e-14));
  REQUIRE_THROWS_AS(mlp_dataset_mse(p, nullptr, Mat(0, 2), Mat(0, 1), nullptr), ContractError);
}
