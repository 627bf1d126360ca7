// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "flowvi/common.hpp"
#include "flowvi/gaussian.hpp"

namespace flowvi {

// Finite mixture of diagonal Gaussians, q_n(z) = sum_k a_k q(z | mu_k, s_k).
// This one type plays both roles in the optimizer: the variational family
// (particles = atoms of a discrete measure over parameters) and, for the
// synthetic benchmarks, the target density itself.
struct ParticleMixture {
  std::vector<GaussianParticle> particles;
  Vec weights;  // simplex: nonnegative, sums to 1

  Eigen::Index size() const { return static_cast<Eigen::Index>(particles.size()); }
  Eigen::Index dim() const { return particles.empty() ? 0 : particles.front().dim(); }
};

inline void validate_mixture(const ParticleMixture& m, const char* what = "mixture") {
  if (m.particles.empty()) throw std::invalid_argument(std::string(what) + ": no components");
  if (m.weights.size() != m.size())
    throw std::invalid_argument(std::string(what) + ": weight count does not match component count");
  const Eigen::Index d = m.particles.front().dim();
  for (const auto& p : m.particles) {
    validate_particle(p, what);
    if (p.dim() != d) throw std::invalid_argument(std::string(what) + ": components differ in dimension");
  }
  double sum = 0.0;
  for (Eigen::Index k = 0; k < m.weights.size(); ++k) {
    if (!(m.weights[k] >= 0.0))
      throw std::invalid_argument(std::string(what) + ": negative weight at component " + std::to_string(k));
    sum += m.weights[k];
  }
  if (std::abs(sum - 1.0) > 1e-12)
    throw std::invalid_argument(std::string(what) + ": weights must sum to 1 (got " + std::to_string(sum) + ")");
}

// Everything the particle updates need at one evaluation point, computed in a
// single pass over components. All ratios go through log space with a max
// shift, so far-tail points underflow to zero responsibilities instead of NaN.
struct MixturePointEval {
  Vec log_q;      // per-component log q(z | lambda_k)
  double log_qn;  // log of the weighted mixture density
  Vec r;          // posterior responsibilities a_k q_k / q_n (sum to 1)
  Vec w;          // density ratios q_k / q_n
  Vec score;      // grad_z log q_n
  Vec hess_diag;  // diag of hess_z log q_n
};

inline MixturePointEval eval_mixture_point(const ParticleMixture& m, const Vec& z) {
  const Eigen::Index K = m.size();
  if (K == 0) throw std::invalid_argument("eval_mixture_point: no components");
  check_same_dim(m.particles.front().mu, z, "eval_mixture_point");

  MixturePointEval e;
  e.log_q.resize(K);
  for (Eigen::Index k = 0; k < K; ++k) e.log_q[k] = component_log_density(m.particles[k], z);

  // log q_n via log-sum-exp over components with positive weight
  Vec t = Vec::Constant(K, -std::numeric_limits<double>::infinity());
  double shift = -std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 0; k < K; ++k) {
    if (m.weights[k] <= 0.0) continue;
    t[k] = std::log(m.weights[k]) + e.log_q[k];
    shift = std::max(shift, t[k]);
  }
  if (!std::isfinite(shift)) {
    if ((m.weights.array() > 0.0).any())
      throw std::runtime_error("eval_mixture_point: non-finite component log densities");
    throw std::invalid_argument("eval_mixture_point: all mixture weights are zero");
  }
  double acc = 0.0;
  for (Eigen::Index k = 0; k < K; ++k)
    if (m.weights[k] > 0.0) acc += std::exp(t[k] - shift);
  e.log_qn = shift + std::log(acc);

  // Ratios come from the shifted logs, not from log_qn: far in the tails the
  // log densities grow so large that adding log(acc) to the shift is absorbed
  // by rounding, while exp(t_k - shift)/acc keeps sum_k r_k = 1 at any
  // magnitude.
  e.r.resize(K);
  e.w.resize(K);
  for (Eigen::Index k = 0; k < K; ++k) {
    if (m.weights[k] > 0.0) {
      e.r[k] = std::exp(t[k] - shift) / acc;
      e.w[k] = e.r[k] / m.weights[k];
    } else {
      e.r[k] = 0.0;
      e.w[k] = std::exp(e.log_q[k] - e.log_qn);
    }
  }

  // grad_z log q_n = sum_k r_k * (-s_k .* (z - mu_k))
  // diag hess     = sum_k r_k * ((s_k .* (z - mu_k))^2 - s_k) - score^2
  const Eigen::Index d = z.size();
  e.score = Vec::Zero(d);
  Vec second = Vec::Zero(d);
  for (Eigen::Index k = 0; k < K; ++k) {
    if (e.r[k] == 0.0) continue;
    const Vec u = (m.particles[k].s.array() * (z - m.particles[k].mu).array()).matrix();
    e.score -= e.r[k] * u;
    second += e.r[k] * (u.array().square() - m.particles[k].s.array()).matrix();
  }
  e.hess_diag = (second.array() - e.score.array().square()).matrix();
  return e;
}

inline double mixture_log_density(const ParticleMixture& m, const Vec& z) {
  return eval_mixture_point(m, z).log_qn;
}

// Density ratios w_k = q(z | lambda_k) / q_n(z). Note: not scaled by the
// weights; sum_k a_k w_k = 1.
inline Vec responsibilities(const ParticleMixture& m, const Vec& z) {
  return eval_mixture_point(m, z).w;
}

inline Vec mixture_score(const ParticleMixture& m, const Vec& z) {
  return eval_mixture_point(m, z).score;
}

inline Vec mixture_hess_diag(const ParticleMixture& m, const Vec& z) {
  return eval_mixture_point(m, z).hess_diag;
}

// Ancestral sampling: component index from the weights, then the Gaussian.
inline Vec sample_mixture(const ParticleMixture& m, Rng& rng) {
  if (m.particles.empty()) throw std::invalid_argument("sample_mixture: no components");
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double u = unif(rng);
  double cum = 0.0;
  Eigen::Index pick = m.size() - 1;
  for (Eigen::Index k = 0; k < m.size(); ++k) {
    cum += m.weights[k];
    if (u < cum) {
      pick = k;
      break;
    }
  }
  return sample_component(m.particles[pick], rng);
}

}  // namespace flowvi
