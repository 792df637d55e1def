#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

#include "cml/core.hpp"

namespace cml {

// Counter-free splittable RNG: xoshiro256++ seeded through splitmix64.
// Everything that draws randomness takes an Rng (or a child stream from
// split()), never a global, so runs are reproducible bit for bit across
// platforms. Distribution code is hand rolled for the same reason: libstdc++
// and libc++ disagree on std::normal_distribution.
struct Rng {
  std::array<std::uint64_t, 4> s{};

  static std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  explicit Rng(std::uint64_t seed = 0) {
    std::uint64_t x = seed;
    for (auto& si : s) si = splitmix64(x);
  }

  static std::uint64_t rotl(std::uint64_t v, int k) {
    return (v << k) | (v >> (64 - k));
  }

  std::uint64_t next_u64() {
    std::uint64_t result = rotl(s[0] + s[3], 23) + s[0];
    std::uint64_t t = s[1] << 17;
    s[2] ^= s[0];
    s[3] ^= s[1];
    s[1] ^= s[2];
    s[0] ^= s[3];
    s[2] ^= t;
    s[3] = rotl(s[3], 45);
    return result;
  }

  // Independent child stream; advances this stream by two draws.
  Rng split() {
    std::uint64_t x = next_u64() ^ (0xd1b54a32d192ed03ULL + next_u64());
    Rng child(0);
    for (auto& si : child.s) si = splitmix64(x);
    return child;
  }

  std::vector<Rng> split_n(int k) {
    std::vector<Rng> out;
    out.reserve(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) out.push_back(split());
    return out;
  }

  // Stable stream derivation from (master seed, component name, index).
  static Rng from_key(std::uint64_t master, std::string_view component,
                      std::uint64_t index) {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (char c : component) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ULL;
    }
    std::uint64_t x = master;
    std::uint64_t a = splitmix64(x);
    x ^= h;
    std::uint64_t b = splitmix64(x);
    x ^= index * 0x9e3779b97f4a7c15ULL;
    std::uint64_t c = splitmix64(x);
    return Rng(a ^ rotl(b, 17) ^ rotl(c, 41));
  }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  double log_uniform(double lo, double hi) {
    require(lo > 0.0 && hi > lo, "log_uniform requires 0 < lo < hi");
    return std::exp(uniform(std::log(lo), std::log(hi)));
  }

  // Unbiased integer in [0, n) by rejection.
  std::uint64_t uniform_int(std::uint64_t n) {
    require(n > 0, "uniform_int requires n > 0");
    std::uint64_t threshold = (0ULL - n) % n;
    for (;;) {
      std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  // Box-Muller with a cached spare.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform01(), u2 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  Vec normal_vec(Eigen::Index n, double mean = 0.0, double sd = 1.0) {
    Vec v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = normal(mean, sd);
    return v;
  }

  Vec uniform_vec(Eigen::Index n, double lo, double hi) {
    Vec v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = uniform(lo, hi);
    return v;
  }

 private:
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace cml
