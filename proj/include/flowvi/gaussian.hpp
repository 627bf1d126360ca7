// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>

#include "flowvi/common.hpp"

namespace flowvi {

// Diagonal Gaussian in mean/precision form: q(z) = N(z | mu, diag(1/s)).
// Storing precisions rather than variances keeps the natural-gradient and
// mirror-map updates additive in the stored coordinates.
struct GaussianParticle {
  Vec mu;
  Vec s;  // per-coordinate precision, strictly positive

  Eigen::Index dim() const { return mu.size(); }
};

inline void validate_particle(const GaussianParticle& p, const char* what = "particle") {
  if (p.mu.size() == 0) throw std::invalid_argument(std::string(what) + ": empty mean");
  check_same_dim(p.mu, p.s, what);
  check_finite(p.mu, what);
  for (Eigen::Index i = 0; i < p.s.size(); ++i) {
    if (!(p.s[i] > 0.0) || !std::isfinite(p.s[i]))
      throw std::invalid_argument(std::string(what) + ": precision must be positive and finite (coord " +
                                  std::to_string(i) + ")");
  }
}

// log N(z | mu, diag(1/s)) = 1/2 sum log s_i - 1/2 sum s_i (z_i - mu_i)^2 - d/2 log 2pi
inline double component_log_density(const GaussianParticle& p, const Vec& z) {
  check_same_dim(p.mu, z, "component_log_density");
  const double d = static_cast<double>(p.dim());
  const Vec diff = z - p.mu;
  return 0.5 * p.s.array().log().sum() -
         0.5 * (p.s.array() * diff.array().square()).sum() -
         0.5 * d * std::log(2.0 * std::numbers::pi);
}

// Gradients of log q(z | mu, s) in the stored parameters:
//   d/dmu = s .* (z - mu),   d/ds = 1/(2s) - (z - mu)^2 / 2
struct ParamGrads {
  Vec mu;
  Vec s;
};

inline ParamGrads component_param_grads(const GaussianParticle& p, const Vec& z) {
  check_same_dim(p.mu, z, "component_param_grads");
  const Vec diff = z - p.mu;
  ParamGrads g;
  g.mu = p.s.array() * diff.array();
  g.s = 0.5 / p.s.array() - 0.5 * diff.array().square();
  return g;
}

// z = mu + eps ./ sqrt(s), eps ~ N(0, I)
inline Vec sample_component(const GaussianParticle& p, Rng& rng) {
  Vec eps = standard_normal(rng, p.dim());
  return p.mu.array() + eps.array() / p.s.array().sqrt();
}

}  // namespace flowvi
