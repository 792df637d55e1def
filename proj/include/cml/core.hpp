#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

namespace cml {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Error taxonomy. Everything user-facing derives from Error so the CLI can
// catch one type and report the category.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : Error {
  using Error::Error;
};
struct ContractError : Error {
  using Error::Error;
};
struct NumericError : Error {
  using Error::Error;
};
struct ParseError : Error {
  using Error::Error;
};
struct DomainError : Error {
  using Error::Error;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractError(msg);
}

inline void require_shape(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

inline bool all_finite(const Vec& v) { return v.allFinite(); }
inline bool all_finite(const Mat& m) { return m.allFinite(); }

inline void check_finite(const Vec& v, const std::string& what) {
  if (!v.allFinite()) throw NumericError("non-finite values in " + what);
}
inline void check_finite(double x, const std::string& what) {
  if (!std::isfinite(x)) throw NumericError("non-finite value in " + what);
}

// Shortest-round-trip style decimal output: 17 significant digits always
// reproduce the same double on read-back.
inline std::string fmt_g17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

inline double rel_err(double got, double want) {
  double scale = std::max(1.0, std::abs(want));
  return std::abs(got - want) / scale;
}

inline double rel_err(const Vec& got, const Vec& want) {
  double scale = std::max(1.0, want.norm());
  return (got - want).norm() / scale;
}

}  // namespace cml
