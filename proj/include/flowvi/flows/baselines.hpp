// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "flowvi/flows/config.hpp"
#include "flowvi/flows/mirror_map.hpp"
#include "flowvi/gaussian.hpp"
#include "flowvi/target.hpp"

namespace flowvi {

namespace detail {

// Baselines step in unconstrained coordinates; with a stabilizer configured
// the result is clamped back into the stabilizer's domain instead of erroring.
inline Vec clamp_or_throw_s(Vec s, const Stabilize& stab, const char* step) {
  if (stab.kind == Stabilize::Kind::kNone) {
    for (Eigen::Index i = 0; i < s.size(); ++i)
      if (!(s[i] > 0.0))
        throw std::runtime_error(std::string(step) + ": precision went nonpositive at coordinate " +
                                 std::to_string(i) + "; stabilize or reduce eta");
    return s;
  }
  double lo = 1e-12;
  double hi = std::numeric_limits<double>::infinity();
  if (stab.kind == Stabilize::Kind::kBoxMirror) {
    lo = std::nextafter(stab.lo, stab.hi);
    hi = std::nextafter(stab.hi, stab.lo);
  }
  for (Eigen::Index i = 0; i < s.size(); ++i) s[i] = std::min(hi, std::max(lo, s[i]));
  return s;
}

inline const GaussianParticle& single_particle(const FlowState& state, const char* step) {
  if (state.mixture.size() != 1)
    throw std::invalid_argument(std::string(step) + ": this baseline runs a single Gaussian (K == 1)");
  return state.mixture.particles.front();
}

}  // namespace detail

// Reparameterized stochastic gradient descent on the negated evidence bound in
// (mu, sigma) coordinates, sigma = s^{-1/2}:
//   z = mu + sigma .* eps,  eps ~ N(0, I)
//   d/dmu    = grad f(z) + grad_z log q(z) + dlogq/dmu      (q terms cancel)
//   d/dsigma = (grad f(z) + grad_z log q(z)) .* eps + dlogq/dsigma
// The explicit dlogq/dsigma carries the -1/sigma entropy term.
inline FlowState bbvi_step(const FlowState& state, const TargetModel& target, const FlowConfig& cfg) {
  validate_flow_config(cfg);
  const GaussianParticle& p = detail::single_particle(state, "bbvi_step");
  FlowState next{state.mixture, state.iteration + 1, state.seed};
  if (cfg.eta == 0.0) return next;

  const Eigen::Index d = p.dim();
  const Vec sigma = p.s.array().rsqrt();
  Rng rng = derive_rng(state.seed, static_cast<std::uint64_t>(state.iteration), 0);

  Vec gmu = Vec::Zero(d);
  Vec gsigma = Vec::Zero(d);
  for (int j = 0; j < cfg.samples_per_particle; ++j) {
    const Vec eps = standard_normal(rng, d);
    const Vec z = p.mu.array() + sigma.array() * eps.array();
    const Vec diff = z - p.mu;
    // total gradient through z plus the explicit parameter dependence of log q
    const Vec gz = target.grad(z) - (p.s.array() * diff.array()).matrix();
    gmu += gz + (p.s.array() * diff.array()).matrix();
    gsigma += (gz.array() * eps.array() - 1.0 / sigma.array() +
               diff.array().square() / sigma.array().cube())
                  .matrix();
  }
  const double S = static_cast<double>(cfg.samples_per_particle);

  GaussianParticle& out = next.mixture.particles.front();
  out.mu = p.mu - (cfg.eta / S) * gmu;
  Vec sigma1 = sigma - (cfg.eta / S) * gsigma;
  if (cfg.stabilize.kind == Stabilize::Kind::kNone) {
    for (Eigen::Index i = 0; i < d; ++i)
      if (!(sigma1[i] > 0.0))
        throw std::runtime_error("bbvi_step: scale went nonpositive at coordinate " +
                                 std::to_string(i) + "; stabilize or reduce eta");
  } else {
    for (Eigen::Index i = 0; i < d; ++i) sigma1[i] = std::max(sigma1[i], 1e-12);
  }
  out.s = detail::clamp_or_throw_s(sigma1.array().square().inverse().matrix(), cfg.stabilize, "bbvi_step");
  return next;
}

// Natural-gradient VI for a single Gaussian: precision is a convex combination
// with the sampled curvature, then the mean moves under the new precision.
//   s'  = (1 - eta) s + eta E[hess f(z)]
//   mu' = mu - eta (1 ./ s') .* E[grad f(z)]
inline FlowState ngvi_step(const FlowState& state, const TargetModel& target, const FlowConfig& cfg) {
  validate_flow_config(cfg);
  const GaussianParticle& p = detail::single_particle(state, "ngvi_step");
  FlowState next{state.mixture, state.iteration + 1, state.seed};
  if (cfg.eta == 0.0) return next;

  const Eigen::Index d = p.dim();
  Rng rng = derive_rng(state.seed, static_cast<std::uint64_t>(state.iteration), 0);

  Vec gbar = Vec::Zero(d);
  Vec hbar = Vec::Zero(d);
  for (int j = 0; j < cfg.samples_per_particle; ++j) {
    const Vec z = sample_component(p, rng);
    gbar += target.grad(z);
    hbar += target.hess_diag(z);
  }
  const double S = static_cast<double>(cfg.samples_per_particle);
  gbar /= S;
  hbar /= S;

  GaussianParticle& out = next.mixture.particles.front();
  out.s = detail::clamp_or_throw_s((1.0 - cfg.eta) * p.s + cfg.eta * hbar, cfg.stabilize, "ngvi_step");
  out.mu = p.mu - cfg.eta * (gbar.array() / out.s.array()).matrix();
  return next;
}

// Stein variational gradient descent with the RBF kernel
//   k(x, y) = exp(-||x - y||^2 / h),  h = med^2 / log(M + 1)
// where med^2 is the median pairwise squared distance. Deterministic given the
// particle set.
inline std::vector<Vec> svgd_step(const std::vector<Vec>& particles, const TargetModel& target,
                                  double eta) {
  const size_t M = particles.size();
  if (M == 0) throw std::invalid_argument("svgd_step: no particles");
  const Eigen::Index d = particles.front().size();
  for (const Vec& x : particles)
    if (x.size() != d) throw std::invalid_argument("svgd_step: particles differ in dimension");
  if (d != target.dim()) throw std::invalid_argument("svgd_step: particle and target dimensions differ");

  std::vector<Vec> grads(M);
  for (size_t i = 0; i < M; ++i) grads[i] = target.grad(particles[i]);

  double h = 1.0;
  Mat sq = Mat::Zero(static_cast<Eigen::Index>(M), static_cast<Eigen::Index>(M));
  if (M > 1) {
    std::vector<double> dists;
    dists.reserve(M * (M - 1) / 2);
    for (size_t i = 0; i < M; ++i)
      for (size_t j = i + 1; j < M; ++j) {
        const double d2 = (particles[i] - particles[j]).squaredNorm();
        sq(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = d2;
        sq(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = d2;
        dists.push_back(d2);
      }
    auto mid = dists.begin() + static_cast<std::ptrdiff_t>((dists.size() - 1) / 2);
    std::nth_element(dists.begin(), mid, dists.end());
    const double med2 = *mid;
    h = med2 / std::log(static_cast<double>(M) + 1.0);
    if (!(h > 0.0) || !std::isfinite(h)) h = 1.0;  // coincident particles
  }

  std::vector<Vec> out(M);
  for (size_t i = 0; i < M; ++i) {
    Vec phi = Vec::Zero(d);
    for (size_t j = 0; j < M; ++j) {
      const double kij = std::exp(-sq(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) / h);
      // attraction along -grad f plus the repulsive kernel gradient
      phi += kij * (-grads[j]) + (2.0 / h) * kij * (particles[i] - particles[j]);
    }
    out[i] = particles[i] + (eta / static_cast<double>(M)) * phi;
  }
  return out;
}

}  // namespace flowvi
