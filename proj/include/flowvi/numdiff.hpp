// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>

#include "flowvi/common.hpp"
#include "flowvi/target.hpp"

namespace flowvi {

// Central-difference oracles used to cross-check every analytic derivative in
// the library. Deliberately simple: fixed step, no extrapolation.

inline Vec central_diff_grad(const std::function<double(const Vec&)>& f, const Vec& z,
                             double step = 1e-5) {
  Vec g(z.size());
  Vec zp = z;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    const double zi = z[i];
    zp[i] = zi + step;
    const double fp = f(zp);
    zp[i] = zi - step;
    const double fm = f(zp);
    zp[i] = zi;
    g[i] = (fp - fm) / (2.0 * step);
  }
  return g;
}

// Diagonal of the Hessian from central differences of a gradient callable.
inline Vec central_diff_hess_diag(const std::function<Vec(const Vec&)>& grad, const Vec& z,
                                  double step = 1e-5) {
  Vec h(z.size());
  Vec zp = z;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    const double zi = z[i];
    zp[i] = zi + step;
    const double gp = grad(zp)[i];
    zp[i] = zi - step;
    const double gm = grad(zp)[i];
    zp[i] = zi;
    h[i] = (gp - gm) / (2.0 * step);
  }
  return h;
}

// Second-order central difference of a scalar callable, f(z+h) - 2f(z) + f(z-h).
inline Vec second_diff_diag(const std::function<double(const Vec&)>& f, const Vec& z,
                            double step = 1e-3) {
  Vec h(z.size());
  const double f0 = f(z);
  Vec zp = z;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    const double zi = z[i];
    zp[i] = zi + step;
    const double fp = f(zp);
    zp[i] = zi - step;
    const double fm = f(zp);
    zp[i] = zi;
    h[i] = (fp - 2.0 * f0 + fm) / (step * step);
  }
  return h;
}

inline Vec finite_diff_grad(const TargetModel& target, const Vec& z, double step = 1e-5) {
  return central_diff_grad([&](const Vec& x) { return target.value(x); }, z, step);
}

inline Vec finite_diff_hess_diag(const TargetModel& target, const Vec& z, double step = 1e-5) {
  return central_diff_hess_diag([&](const Vec& x) { return target.grad(x); }, z, step);
}

}  // namespace flowvi
