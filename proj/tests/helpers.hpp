#pragma once

#include <functional>

#include "cml/core.hpp"

namespace testutil {

// Central finite difference of a scalar field.
inline cml::Vec fd_grad(const std::function<double(const cml::Vec&)>& f, const cml::Vec& x,
                        double h = 1e-6) {
  cml::Vec g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    cml::Vec xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    g[i] = (f(xp) - f(xm)) / (2.0 * h);
  }
  return g;
}

inline double max_rel_gap(const cml::Vec& got, const cml::Vec& want, double floor = 1e-8) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < got.size(); ++i) {
    double denom = std::max(std::abs(want[i]), floor);
    worst = std::max(worst, std::abs(got[i] - want[i]) / denom);
  }
  return worst;
}

}  // namespace testutil
