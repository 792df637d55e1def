#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cstring>
#include <sstream>

#include "cml/tasks.hpp"
#include "helpers.hpp"

using namespace cml;
using namespace cml::tasks;

TEST_CASE("sinusoid sampler hits the documented ranges and moments") {
  Rng rng(11);
  double sum_a = 0.0, sum_p = 0.0, sum_x = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    SinusoidTask t = sample_sinusoid(rng);
    REQUIRE(t.amplitude >= 0.1);
    REQUIRE(t.amplitude <= 5.0);
    REQUIRE(t.phase >= 0.0);
    REQUIRE(t.phase <= M_PI);
    sum_a += t.amplitude;
    sum_p += t.phase;
    RegressionSet s = sinusoid_dataset(t, 4, rng);
    for (int r = 0; r < 4; ++r) {
      REQUIRE(s.X(r, 0) >= -5.0);
      REQUIRE(s.X(r, 0) <= 5.0);
      REQUIRE(s.Y(r, 0) == t(s.X(r, 0)));
      sum_x += s.X(r, 0);
    }
  }
  CHECK(std::abs(sum_a / n - 2.55) < 0.05);
  CHECK(std::abs(sum_p / n - M_PI / 2.0) < 0.05);
  CHECK(std::abs(sum_x / (4.0 * n)) < 0.05);
}

TEST_CASE("mlp_flat_mse matches the dataset loss it wraps") {
  Rng rng(21);
  MlpArch arch = MlpArch::dense({1, 7, 1}, Act::Tanh);
  for (int trial = 0; trial < 100; ++trial) {
    SinusoidTask t = sample_sinusoid(rng);
    RegressionSet s = sinusoid_dataset(t, 6, rng);
    auto loss = mlp_flat_mse(arch, s.X, s.Y);
    MlpParams p = mlp_init(arch, rng, 0.5);
    Vec phi = mlp_flatten(p);
    Vec g;
    double got = loss(phi, &g);
    MlpGrads gr = MlpGrads::zero(arch);
    double want = mlp_dataset_mse(p, nullptr, s.X, s.Y, &gr);
    REQUIRE(got == want);
    MlpParams gp = mlp_zero(arch);
    gp.w = gr.w;
    gp.b = gr.b;
    REQUIRE((g - mlp_flatten(gp)).norm() == 0.0);
    REQUIRE(loss(phi, nullptr) == want);
  }
}

TEST_CASE("csv reader handles lf, crlf and headers") {
  std::istringstream lf("a,b\n1,2\n3.5,-4e2\n");
  CsvTable t = read_csv(lf, true);
  REQUIRE(t.header == std::vector<std::string>{"a", "b"});
  REQUIRE(t.data.rows() == 2);
  REQUIRE(t.data(0, 0) == 1.0);
  REQUIRE(t.data(1, 1) == -400.0);

  std::istringstream crlf("x\r\n1\r\n2\r\n");
  CsvTable u = read_csv(crlf, true);
  REQUIRE(u.header == std::vector<std::string>{"x"});
  REQUIRE(u.data.rows() == 2);
  REQUIRE(u.data(1, 0) == 2.0);

  std::istringstream bare("1,2\n3,4");
  CsvTable v = read_csv(bare, false);
  REQUIRE(v.header.empty());
  REQUIRE(v.data.rows() == 2);
  REQUIRE(v.data(1, 1) == 4.0);
}

TEST_CASE("csv errors carry one-based line numbers") {
  std::istringstream bad_field("a\n1\nx7\n");
  try {
    read_csv(bad_field, true);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }

  std::istringstream ragged("1,2\n3\n");
  try {
    read_csv(ragged, false);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }

  std::istringstream empty("");
  CHECK_THROWS_AS(read_csv(empty, false), ParseError);
  CHECK_THROWS_AS(read_csv_file("/nonexistent/file.csv", false), ParseError);
}

TEST_CASE("csv round trip is bit exact") {
  Rng rng(31);
  CsvTable t;
  t.header = {"c0", "c1", "c2"};
  t.data = Mat(6, 3);
  for (Eigen::Index r = 0; r < 6; ++r)
    for (Eigen::Index c = 0; c < 3; ++c) t.data(r, c) = rng.normal(0.0, 1e3);
  t.data(0, 0) = 1.0 / 3.0;
  t.data(1, 1) = -0.0;
  t.data(2, 2) = 1e300;
  t.data(3, 0) = 5e-324;
  std::ostringstream out;
  write_csv(out, t);
  std::istringstream in(out.str());
  CsvTable back = read_csv(in, true);
  REQUIRE(back.header == t.header);
  REQUIRE(back.data.rows() == t.data.rows());
  for (Eigen::Index r = 0; r < 6; ++r)
    for (Eigen::Index c = 0; c < 3; ++c) {
      double a = t.data(r, c), b = back.data(r, c);
      REQUIRE(std::memcmp(&a, &b, sizeof a) == 0);
    }
}

TEST_CASE("regression split is a deterministic partition") {
  Rng data_rng(41);
  Mat X;
  Vec y;
  synthetic_regression(100, 13, data_rng, &X, &y);

  Rng a(7), b(7);
  SplitData s1 = regression_split(X, y, 0.7, a);
  SplitData s2 = regression_split(X, y, 0.7, b);
  REQUIRE(s1.x_learn.rows() == 70);
  REQUIRE(s1.x_eval.rows() == 30);
  REQUIRE((s1.x_learn - s2.x_learn).norm() == 0.0);
  REQUIRE((s1.y_eval - s2.y_eval).norm() == 0.0);

  // the row sets partition the input: compare the multiset of targets
  std::vector<double> got, want;
  for (Eigen::Index i = 0; i < s1.y_learn.size(); ++i) got.push_back(s1.y_learn[i]);
  for (Eigen::Index i = 0; i < s1.y_eval.size(); ++i) got.push_back(s1.y_eval[i]);
  for (Eigen::Index i = 0; i < y.size(); ++i) want.push_back(y[i]);
  std::sort(got.begin(), got.end());
  std::sort(want.begin(), want.end());
  REQUIRE(got == want);

  Rng c(9);
  SplitData s3 = regression_split(X, y, 0.7, c);
  CHECK((s3.x_learn - s1.x_learn).norm() != 0.0);
}

TEST_CASE("split standardization uses learn statistics only") {
  Rng rng(43);
  Mat X(40, 3);
  for (Eigen::Index r = 0; r < 40; ++r)
    for (Eigen::Index c = 0; c < 3; ++c) X(r, c) = rng.normal(3.0, 2.0);
  X.col(2).setConstant(5.0);  // degenerate feature
  Vec y = rng.normal_vec(40);
  SplitData s = regression_split(X, y, 0.7, rng);
  for (Eigen::Index c = 0; c < 2; ++c) {
    CHECK(std::abs(s.x_learn.col(c).mean()) < 1e-12);
    double var = s.x_learn.col(c).array().square().mean();
    CHECK(std::abs(var - 1.0) < 1e-12);
  }
  CHECK(s.x_learn.col(2).norm() == 0.0);  // sd guard keeps it finite
  CHECK(s.x_eval.allFinite());

  CHECK_THROWS_AS(regression_split(X, y, 0.0, rng), ContractError);
  CHECK_THROWS_AS(regression_split(X, y, 1.0, rng), ContractError);
  Vec bad = rng.normal_vec(39);
  CHECK_THROWS_AS(regression_split(X, bad, 0.7, rng), ShapeError);
}

TEST_CASE("synthetic regression is reproducible and finite") {
  Rng a(51), b(51);
  Mat X1, X2;
  Vec y1, y2;
  synthetic_regression(100, 13, a, &X1, &y1);
  synthetic_regression(100, 13, b, &X2, &y2);
  REQUIRE(X1.rows() == 100);
  REQUIRE(X1.cols() == 13);
  REQUIRE((X1 - X2).norm() == 0.0);
  REQUIRE((y1 - y2).norm() == 0.0);
  REQUIRE(X1.allFinite());
  REQUIRE(y1.allFinite());
}

TEST_CASE("wheel mean rewards and quadrant rule") {
  WheelBandit b;  // delta 0.5
  Vec low(2), high(2);
  low << 0.1, 0.1;
  high << 0.9, 0.1;
  CHECK(b.mean_reward(low, 1) == 1.0);
  CHECK(b.mean_reward(low, 5) == 1.2);
  CHECK(b.optimal_action(low) == 5);
  CHECK(b.optimal_mean(low) == 1.2);
  CHECK(b.mean_reward(high, 1) == 50.0);
  CHECK(b.mean_reward(high, 2) == 1.0);
  CHECK(b.mean_reward(high, 5) == 1.2);
  CHECK(b.optimal_action(high) == 1);

  Vec q(2);
  q << 0.9, -0.1;
  CHECK(b.optimal_action(q) == 2);
  q << -0.9, 0.1;
  CHECK(b.optimal_action(q) == 3);
  q << -0.9, -0.1;
  CHECK(b.optimal_action(q) == 4);
  q << 0.0, 0.9;  // boundary goes to the smaller index
  CHECK(b.optimal_action(q) == 1);

  CHECK_THROWS_AS(b.mean_reward(low, 0), ContractError);
  CHECK_THROWS_AS(b.mean_reward(low, 6), ContractError);
  Vec far(2);
  far << 1.2, 0.0;
  CHECK_THROWS_AS(b.mean_reward(far, 1), ContractError);
  Vec wrong(3);
  CHECK_THROWS_AS(b.mean_reward(wrong, 1), ShapeError);
  WheelBandit bad;
  bad.delta = 1.5;
  CHECK_THROWS_AS(bad.validate(), ContractError);
}

TEST_CASE("uniform random regret expectations match the closed forms") {
  WheelBandit b;
  Vec low(2), high(2);
  low << 0.1, 0.1;
  high << 0.9, 0.1;
  CHECK(b.random_regret_expectation(low) == Catch::Approx(0.16).epsilon(1e-12));
  CHECK(b.random_regret_expectation(high) == Catch::Approx(39.16).epsilon(1e-12));

  // averaged over the disc at delta = 0.5 this lands near 29.41
  Rng rng(61);
  double sum = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) sum += b.random_regret_expectation(sample_disc(rng));
  CHECK(std::abs(sum / n - 29.41) < 0.5);
}

TEST_CASE("disc sampler is uniform") {
  Rng rng(71);
  const int n = 20000;
  int quad[4] = {0, 0, 0, 0};
  int annulus[5] = {0, 0, 0, 0, 0};
  for (int i = 0; i < n; ++i) {
    Vec x = sample_disc(rng);
    REQUIRE(x.norm() <= 1.0);
    quad[WheelBandit::quadrant_action(x) - 1]++;
    // r^2 is uniform on [0,1] for a uniform disc, so equal-area annuli bins
    int bin = std::min(4, static_cast<int>(x.squaredNorm() * 5.0));
    annulus[bin]++;
  }
  double chi_quad = 0.0, chi_ann = 0.0;
  for (int q : quad) chi_quad += (q - n / 4.0) * (q - n / 4.0) / (n / 4.0);
  for (int a : annulus) chi_ann += (a - n / 5.0) * (a - n / 5.0) / (n / 5.0);
  CHECK(chi_quad < 11.345);  // chi-square 0.99 quantile, 3 dof
  CHECK(chi_ann < 13.277);   // chi-square 0.99 quantile, 4 dof
}

TEST_CASE("wheel_step reward noise and regret") {
  WheelBandit b;
  Vec high(2);
  high << 0.9, 0.1;
  Rng rng(81);
  double sum = 0.0;
  for (int i = 0; i < 5000; ++i) {
    PullResult r = wheel_step(b, high, 1, rng);
    REQUIRE(r.regret == 0.0);
    sum += r.reward;
  }
  CHECK(std::abs(sum / 5000 - 50.0) < 0.01);
  PullResult r5 = wheel_step(b, high, 5, rng);
  CHECK(r5.regret == Catch::Approx(48.8).epsilon(1e-12));
}

TEST_CASE("regret ledger accumulates monotonically") {
  RegretLedger led;
  led.record_trace = true;
  Rng rng(91);
  double prev = 0.0;
  for (int i = 0; i < 200; ++i) {
    led.add(rng.uniform(0.0, 2.0), 1.0);
    REQUIRE(led.cum_regret >= prev);
    prev = led.cum_regret;
  }
  REQUIRE(led.steps == 200);
  REQUIRE(led.trace_regret.size() == 200);
  for (std::size_t i = 1; i < led.trace_regret.size(); ++i) {
    REQUIRE(led.trace_regret[i] >= led.trace_regret[i - 1]);
    REQUIRE(led.trace_random[i] == Catch::Approx(double(i + 1)));
  }
  CHECK(led.normalized() == Catch::Approx(led.cum_regret / 200.0));
  CHECK_THROWS_AS(led.add(-0.5, 1.0), ContractError);
  RegretLedger empty;
  CHECK(empty.normalized() == 0.0);
}

TEST_CASE("bandit value loss only reads the chosen coordinate") {
  Rng rng(101);
  MlpArch arch = MlpArch::dense({2, 6, 5}, Act::Tanh);
  WheelBandit b;
  for (int trial = 0; trial < 100; ++trial) {
    auto recs = std::make_shared<const std::vector<BanditRecord>>(bandit_dataset(b, 5, rng));
    auto loss = bandit_value_mse(arch, recs);
    MlpParams p = mlp_init(arch, rng, 0.5);
    Vec phi = mlp_flatten(p);

    // value agrees with a hand loop over records
    double manual = 0.0;
    for (const auto& rec : *recs) {
      Vec pred = mlp_forward(p, nullptr, rec.x);
      double d = pred[rec.action - 1] - rec.reward;
      manual += d * d;
    }
    manual /= static_cast<double>(recs->size());
    Vec g;
    REQUIRE(loss(phi, &g) == Catch::Approx(manual).epsilon(1e-13));

    // rewards near 50 make the loss O(1e3), so fd roundoff is ~1e-7 absolute;
    // the comparison floor has to sit above that
    Vec fd = testutil::fd_grad([&](const Vec& q) { return loss(q, nullptr); }, phi);
    REQUIRE(testutil::max_rel_gap(g, fd, 1e-2) < 1e-4);
  }
}

TEST_CASE("offline bandit datasets are reproducible") {
  WheelBandit b;
  Rng a(111), c(111);
  auto d1 = bandit_dataset(b, 50, a);
  auto d2 = bandit_dataset(b, 50, c);
  REQUIRE(d1.size() == 50);
  for (std::size_t i = 0; i < d1.size(); ++i) {
    REQUIRE((d1[i].x - d2[i].x).norm() == 0.0);
    REQUIRE(d1[i].action == d2[i].action);
    REQUIRE(d1[i].reward == d2[i].reward);
    REQUIRE(d1[i].action >= 1);
    REQUIRE(d1[i].action <= 5);
  }
}

TEST_CASE("oracle policy has exactly zero regret") {
  WheelBandit b;
  MlpArch arch = MlpArch::dense({2, 4, 5}, Act::Relu);
  Rng init_rng(121);
  MlpParams p = mlp_init(arch, init_rng, 0.1);
  synapse::SynapseSpec spec;
  auto model = synapse::SynapseModel::make(spec, mlp_flatten(p), 1.0);
  OnlineCfg cfg;
  cfg.horizon = 500;
  Rng rng(122);
  OnlineResult r = bandit_online_eval(b, arch, model, BanditPolicy::Oracle, cfg, rng);
  CHECK(r.ledger.cum_regret == 0.0);
  CHECK(r.ledger.normalized() == 0.0);
  CHECK(r.ledger.steps == 500);
}

TEST_CASE("uniform random policy normalizes to one") {
  WheelBandit b;
  MlpArch arch = MlpArch::dense({2, 4, 5}, Act::Relu);
  Rng init_rng(131);
  MlpParams p = mlp_init(arch, init_rng, 0.1);
  auto model = synapse::SynapseModel::make(synapse::SynapseSpec{}, mlp_flatten(p), 1.0);
  OnlineCfg cfg;
  cfg.horizon = 10000;
  Rng rng(132);
  OnlineResult r = bandit_online_eval(b, arch, model, BanditPolicy::UniformRandom, cfg, rng);
  CHECK(r.ledger.normalized() > 0.95);
  CHECK(r.ledger.normalized() < 1.05);
}

TEST_CASE("always pulling the safe arm wins only when the high region is thin") {
  MlpArch arch = MlpArch::dense({2, 4, 5}, Act::Relu);
  Rng init_rng(141);
  MlpParams p = mlp_init(arch, init_rng, 0.1);
  auto model = synapse::SynapseModel::make(synapse::SynapseSpec{}, mlp_flatten(p), 1.0);
  OnlineCfg cfg;
  cfg.horizon = 20000;

  WheelBandit thin;
  thin.delta = 0.995;
  Rng rng1(142);
  OnlineResult thin_r =
      bandit_online_eval(thin, arch, model, BanditPolicy::FixedActionFive, cfg, rng1);
  CHECK(thin_r.ledger.normalized() < 1.0);
  CHECK(thin_r.ledger.normalized() > 0.7);

  WheelBandit wide;  // delta 0.5: the high region dominates
  Rng rng2(143);
  OnlineResult wide_r =
      bandit_online_eval(wide, arch, model, BanditPolicy::FixedActionFive, cfg, rng2);
  CHECK(wide_r.ledger.normalized() > 1.0);
}

TEST_CASE("greedy policy warms up round robin and refits on schedule") {
  WheelBandit b;
  MlpArch arch = MlpArch::dense({2, 8, 5}, Act::Relu);
  Rng init_rng(151);
  MlpParams p = mlp_init(arch, init_rng, 0.1);
  auto model = synapse::SynapseModel::make(synapse::SynapseSpec{}, mlp_flatten(p), 10.0);
  OnlineCfg cfg;
  cfg.horizon = 120;
  cfg.refit_every = 50;
  cfg.refit_steps = 10;
  cfg.refit_batch = 64;
  cfg.record_trace = true;
  Rng rng(152);
  OnlineResult r = bandit_online_eval(b, arch, model, BanditPolicy::Greedy, cfg, rng);
  REQUIRE(r.ledger.steps == 120);
  REQUIRE(r.ledger.trace_regret.size() == 120);
  // two refits happened, so the fast weights moved off omega
  CHECK((r.phi - model.meta.omega).norm() > 0.0);
  CHECK(r.phi.allFinite());

  Rng rng2(152);
  OnlineResult r2 = bandit_online_eval(b, arch, model, BanditPolicy::Greedy, cfg, rng2);
  REQUIRE((r2.phi - r.phi).norm() == 0.0);
  REQUIRE(r2.ledger.cum_regret == r.ledger.cum_regret);
}

TEST_CASE("bandit bilevel binding differentiates like its pieces") {
  WheelBandit b;
  MlpArch arch = MlpArch::dense({2, 5, 5}, Act::Tanh);
  Rng rng(161);
  MlpParams p = mlp_init(arch, rng, 0.5);
  auto model = synapse::SynapseModel::make(synapse::SynapseSpec{}, mlp_flatten(p), 2.0);
  BanditTaskData data = bandit_task_data(b, 16, 8, rng);
  bilevel::BilevelTask task = bind_bandit_task(arch, model, data, "wheel-0");
  REQUIRE(task.fast_dim == model.dim());
  Vec phi = rng.normal_vec(task.fast_dim, 0.0, 0.3);
  Vec g(task.fast_dim);
  g.setZero();
  double v = task.learn(phi, &g);
  auto direct = bandit_value_mse(arch, data.learn);
  Vec gd;
  double vd = direct(phi, &gd);
  Vec pen = Vec::Zero(phi.size());
  double vp = synapse::consolidation_penalty(phi, model.meta, &pen);
  REQUIRE(v == vd + vp);
  REQUIRE((g - (gd + pen)).norm() == 0.0);
  Vec ge(task.fast_dim);
  ge.setZero();
  double ve = task.eval(phi, &ge);
  Vec gde;
  REQUIRE(ve == bandit_value_mse(arch, data.eval)(phi, &gde));
  REQUIRE((ge - gde).norm() == 0.0);
}
