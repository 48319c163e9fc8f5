#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "trendrev/common.hpp"

namespace trendrev {

/// X'X, X'y and response moments for a p-regressor least-squares problem.
struct NormalEquations {
  std::size_t p = 0;
  std::vector<double> xtx;  // p*p, symmetric, row-major
  std::vector<double> xty;  // p
  double yty = 0.0;
  double sum_y = 0.0;
  double count = 0.0;

  explicit NormalEquations(std::size_t p_ = 0) : p(p_), xtx(p_ * p_, 0.0), xty(p_, 0.0) {}

  double& at(std::size_t i, std::size_t j) { return xtx[i * p + j]; }
  double at(std::size_t i, std::size_t j) const { return xtx[i * p + j]; }

  /// Centered total sum of squares.
  double sst() const { return count > 0.0 ? yty - sum_y * sum_y / count : 0.0; }
};

/// Singular design; the message names the regressor that is collinear with
/// the ones before it.
class CollinearityError : public Error {
 public:
  using Error::Error;
};

struct OlsSolution {
  std::vector<double> beta;
  double ssr = 0.0;
  double r_squared = 0.0;
};

namespace detail {

inline std::string join_names(const std::vector<std::string>& names, std::size_t upto) {
  std::string s;
  for (std::size_t i = 0; i < upto; ++i) s += (i ? ", " : "") + names[i];
  return s.empty() ? "(none)" : s;
}

}  // namespace detail

/// Solves the normal equations by Cholesky on the unit-diagonal scaled matrix,
/// followed by two steps of iterative refinement.
inline OlsSolution solve_normal_equations(const NormalEquations& ne, const std::vector<std::string>& names,
                                          double pivot_tol = 1e-11) {
  const std::size_t p = ne.p;
  std::vector<double> scale(p), L(p * p, 0.0);
  for (std::size_t i = 0; i < p; ++i) {
    const double d = ne.at(i, i);
    if (!(d > 0.0)) throw CollinearityError("singular design: regressor '" + names[i] + "' is identically zero");
    scale[i] = 1.0 / std::sqrt(d);
  }
  for (std::size_t j = 0; j < p; ++j) {
    double s = ne.at(j, j) * scale[j] * scale[j];
    for (std::size_t k = 0; k < j; ++k) s -= L[j * p + k] * L[j * p + k];
    if (!(s > pivot_tol))
      throw CollinearityError("singular design: regressor '" + names[j] + "' is collinear with {" +
                              detail::join_names(names, j) + "}");
    L[j * p + j] = std::sqrt(s);
    for (std::size_t i = j + 1; i < p; ++i) {
      double t = ne.at(i, j) * scale[i] * scale[j];
      for (std::size_t k = 0; k < j; ++k) t -= L[i * p + k] * L[j * p + k];
      L[i * p + j] = t / L[j * p + j];
    }
  }
  auto solve_scaled = [&](std::vector<double> rhs) {
    for (std::size_t i = 0; i < p; ++i) rhs[i] *= scale[i];
    for (std::size_t i = 0; i < p; ++i) {
      for (std::size_t k = 0; k < i; ++k) rhs[i] -= L[i * p + k] * rhs[k];
      rhs[i] /= L[i * p + i];
    }
    for (std::size_t i = p; i-- > 0;) {
      for (std::size_t k = i + 1; k < p; ++k) rhs[i] -= L[k * p + i] * rhs[k];
      rhs[i] /= L[i * p + i];
    }
    for (std::size_t i = 0; i < p; ++i) rhs[i] *= scale[i];
    return rhs;
  };
  OlsSolution sol;
  sol.beta = solve_scaled(ne.xty);
  for (int iter = 0; iter < 2; ++iter) {
    std::vector<double> r(p);
    for (std::size_t i = 0; i < p; ++i) {
      double s = ne.xty[i];
      for (std::size_t j = 0; j < p; ++j) s -= ne.at(i, j) * sol.beta[j];
      r[i] = s;
    }
    const auto delta = solve_scaled(r);
    for (std::size_t i = 0; i < p; ++i) sol.beta[i] += delta[i];
  }
  // SSR = y'y - 2 b'X'y + b'X'X b
  double bxy = 0.0, bxxb = 0.0;
  for (std::size_t i = 0; i < p; ++i) {
    bxy += sol.beta[i] * ne.xty[i];
    for (std::size_t j = 0; j < p; ++j) bxxb += sol.beta[i] * ne.at(i, j) * sol.beta[j];
  }
  sol.ssr = std::max(0.0, ne.yty - 2.0 * bxy + bxxb);
  const double sst = ne.sst();
  sol.r_squared = sst > 0.0 ? 1.0 - sol.ssr / sst : 0.0;
  return sol;
}

}  // namespace trendrev
