#include <catch2/catch_amalgamated.hpp>

#include "cml/optim.hpp"
#include "cml/rng.hpp"

using namespace cml;

TEST_CASE("gd step is p - lr g") {
  OptimState st(OptimCfg::gd(0.1));
  Vec p(2), g(2);
  p << 1.0, -2.0;
  g << 0.5, 0.25;
  st.step(p, g);
  REQUIRE(p[0] == Catch::Approx(0.95).epsilon(1e-15));
  REQUIRE(p[1] == Catch::Approx(-2.025).epsilon(1e-15));
}

TEST_CASE("nesterov trajectory on frozen gradients") {
  // lr 0.1, momentum 0.9, unit gradients:
  // step 1: buf = 1,   step = 0.1 (1 + 0.9)       -> p = 1 - 0.19  = 0.81
  // step 2: buf = 1.9, step = 0.1 (1 + 0.9 * 1.9) -> p = 0.81 - 0.271 = 0.539
  OptimState st(OptimCfg::nesterov(0.1, 0.9));
  Vec p = Vec::Ones(1), g = Vec::Ones(1);
  st.step(p, g);
  REQUIRE(p[0] == Catch::Approx(0.81).epsilon(1e-14));
  st.step(p, g);
  REQUIRE(p[0] == Catch::Approx(0.539).epsilon(1e-14));
}

TEST_CASE("adam bias correction gives near-lr first steps") {
  OptimState st(OptimCfg::adam(0.1));
  Vec p = Vec::Zero(1), g = Vec::Ones(1);
  st.step(p, g);
  REQUIRE(p[0] == Catch::Approx(-0.1).margin(1e-8));
  st.step(p, g);
  REQUIRE(p[0] == Catch::Approx(-0.2).margin(1e-7));
}

TEST_CASE("descent on convex quadratics for lr below 2/L") {
  Rng rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    int n = 2 + static_cast<int>(rng.uniform_int(6));
    Vec h(n);
    for (int i = 0; i < n; ++i) h[i] = rng.log_uniform(0.1, 10.0);
    double L = h.maxCoeff();
    OptimState st(OptimCfg::gd(rng.uniform(0.1, 1.9) / L));
    Vec p = rng.normal_vec(n);
    double prev = 0.5 * p.dot(h.cwiseProduct(p));
    for (int k = 0; k < 20; ++k) {
      Vec g = h.cwiseProduct(p);
      if (g.norm() < 1e-12) break;
      st.step(p, g);
      double now = 0.5 * p.dot(h.cwiseProduct(p));
      REQUIRE(now <= prev);
      prev = now;
    }
  }
}

TEST_CASE("per-parameter lr scaling multiplies the step") {
  OptimState plain(OptimCfg::gd(0.2));
  OptimState scaled(OptimCfg::gd(0.2));
  scaled.lr_scale = Vec(2);
  scaled.lr_scale << 1.0, 0.5;
  Vec p1(2), p2(2), g(2);
  p1 << 1.0, 1.0;
  p2 = p1;
  g << 1.0, 1.0;
  plain.step(p1, g);
  scaled.step(p2, g);
  REQUIRE(p2[0] == p1[0]);
  REQUIRE(p2[1] == Catch::Approx(0.9).epsilon(1e-15));
}

TEST_CASE("reset restores the fresh trajectory") {
  Rng rng(29);
  OptimState a(OptimCfg::adam(0.05));
  Vec p = Vec::Zero(3);
  for (int k = 0; k < 5; ++k) {
    Vec g = rng.normal_vec(3);
    a.step(p, g);
  }
  a.reset();
  OptimState b(OptimCfg::adam(0.05));
  Vec pa = Vec::Ones(3), pb = Vec::Ones(3);
  Rng ga(31), gb(31);
  for (int k = 0; k < 5; ++k) {
    a.step(pa, ga.normal_vec(3));
    b.step(pb, gb.normal_vec(3));
  }
  REQUIRE((pa - pb).norm() == 0.0);
}

TEST_CASE("non-finite gradients are rejected") {
  OptimState st(OptimCfg::gd(0.1));
  Vec p = Vec::Zero(1), g(1);
  g << std::numeric_limits<double>::quiet_NaN();
  REQUIRE_THROWS_AS(st.step(p, g), NumericError);
}
