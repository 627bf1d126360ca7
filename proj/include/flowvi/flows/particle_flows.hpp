// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "flowvi/flows/config.hpp"
#include "flowvi/flows/first_variation.hpp"
#include "flowvi/flows/mirror_map.hpp"
#include "flowvi/mixture.hpp"
#include "flowvi/target.hpp"

namespace flowvi {

// Forward-Euler steps of the variational-parameter gradient flow. Each
// particle is one mixture component; a step reads the frozen iteration-n
// mixture, moves every particle from its own Monte Carlo draws, and (with
// md_weights) reweights the moved particles by mirror descent. All directions
// below are the per-particle gradients of the free energy
//   L(rho) = E_rho [ E_{q(.|lambda)} [ f + log q_n ] ],
// estimated by averaging over the supplied samples.

namespace detail {

inline void check_positive_s(const Vec& s, const char* step, Eigen::Index k) {
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (!(s[i] > 0.0))
      throw std::runtime_error(std::string(step) + ": precision went nonpositive at particle " +
                               std::to_string(k) + ", coordinate " + std::to_string(i) +
                               "; stabilize with a mirror map or reduce eta");
}

}  // namespace detail

// Identity-preconditioned update of component k from explicit samples:
//   mu'   = mu - eta * E[ grad f + grad_z log q_n + w_k grad_mu log q ]
//   s'    = s  - eta * E[ w_k grad_s log q - 1/(2 s^2) (hess f + hess log q_n) ]
// with w_k = q_k / q_n. The s step runs in the stabilizer's coordinates.
inline GaussianParticle gflowvi_update_particle(const ParticleMixture& mix, const TargetModel& target,
                                                Eigen::Index k, const std::vector<Vec>& samples,
                                                double eta, const Stabilize& stab) {
  if (samples.empty()) throw std::invalid_argument("gflowvi_update_particle: no samples");
  const GaussianParticle& p = mix.particles[static_cast<size_t>(k)];
  const Eigen::Index d = p.dim();
  const Vec half_inv_s_sq = (0.5 / p.s.array().square()).matrix();

  Vec dmu = Vec::Zero(d);
  Vec ds = Vec::Zero(d);
  for (const Vec& z : samples) {
    const MixturePointEval e = eval_mixture_point(mix, z);
    const ParamGrads pg = component_param_grads(p, z);
    const double w = e.w[k];
    dmu += target.grad(z) + e.score + w * pg.mu;
    ds += (w * pg.s.array() -
           half_inv_s_sq.array() * (target.hess_diag(z) + e.hess_diag).array())
              .matrix();
  }
  const double S = static_cast<double>(samples.size());
  dmu /= S;
  ds /= S;

  GaussianParticle out;
  out.mu = p.mu - eta * dmu;
  out.s = inverse_mirror_map(mirror_map(p.s, stab) - eta * ds, stab);
  if (stab.kind == Stabilize::Kind::kNone) detail::check_positive_s(out.s, "gflowvi_step", k);
  return out;
}

// Natural-gradient preconditioned update of component k. The precision moves
// first and the mean step is scaled by the fresh precision:
//   s'  = s + eta * E[ hess f + hess log q_n - 2 w_k s^2 grad_s log q ]
//   mu' = mu - eta * E[ grad f + grad_z log q_n + w_k grad_mu log q ] ./ s'
inline GaussianParticle ngflowvi_update_particle(const ParticleMixture& mix, const TargetModel& target,
                                                 Eigen::Index k, const std::vector<Vec>& samples,
                                                 double eta, const Stabilize& stab) {
  if (samples.empty()) throw std::invalid_argument("ngflowvi_update_particle: no samples");
  const GaussianParticle& p = mix.particles[static_cast<size_t>(k)];
  const Eigen::Index d = p.dim();
  const Vec s_sq = p.s.array().square();

  Vec dmu = Vec::Zero(d);
  Vec ds = Vec::Zero(d);
  for (const Vec& z : samples) {
    const MixturePointEval e = eval_mixture_point(mix, z);
    const ParamGrads pg = component_param_grads(p, z);
    const double w = e.w[k];
    dmu += target.grad(z) + e.score + w * pg.mu;
    ds += (target.hess_diag(z) + e.hess_diag).array().matrix() -
          (2.0 * w) * (s_sq.array() * pg.s.array()).matrix();
  }
  const double S = static_cast<double>(samples.size());
  dmu /= S;
  ds /= S;

  GaussianParticle out;
  out.s = inverse_mirror_map(mirror_map(p.s, stab) + eta * ds, stab);
  if (stab.kind == Stabilize::Kind::kNone) detail::check_positive_s(out.s, "ngflowvi_step", k);
  out.mu = p.mu - eta * (dmu.array() / out.s.array()).matrix();
  return out;
}

// Multiplicative-weights rule a_k <- a_k exp(-eta g_k), renormalized in log
// space with a max shift. Zero weights stay exactly zero.
inline Vec md_reweight(const Vec& weights, const Vec& g, double eta) {
  check_same_dim(weights, g, "md_reweight");
  Vec logw(weights.size());
  for (Eigen::Index k = 0; k < weights.size(); ++k)
    logw[k] = weights[k] > 0.0 ? std::log(weights[k]) - eta * g[k]
                               : -std::numeric_limits<double>::infinity();
  const double shift = logw.maxCoeff();
  if (!std::isfinite(shift)) throw std::runtime_error("md_reweight: all weights are zero");
  Vec w(weights.size());
  for (Eigen::Index k = 0; k < weights.size(); ++k)
    w[k] = weights[k] > 0.0 ? std::exp(logw[k] - shift) : 0.0;
  return w / w.sum();
}

// Mirror-descent step on the mixture weights. `moved` carries the already
// updated positions but still the iteration-n weights; each component is
// scored by the first variation at its new parameters and the weights follow
// the multiplicative rule above.
inline Vec md_weight_update(const ParticleMixture& moved, const TargetModel& target, double eta,
                            int n_samples, Rng& rng) {
  validate_mixture(moved, "md_weight_update");
  const Eigen::Index K = moved.size();
  Vec g = Vec::Zero(K);
  for (Eigen::Index k = 0; k < K; ++k)
    if (moved.weights[k] > 0.0)
      g[k] = first_variation(moved, target, moved.particles[static_cast<size_t>(k)], n_samples, rng);
  return md_reweight(moved.weights, g, eta);
}

namespace detail {

template <typename UpdateFn>
FlowState particle_flow_step(const FlowState& state, const TargetModel& target, const FlowConfig& cfg,
                             UpdateFn update) {
  validate_flow_config(cfg);
  validate_mixture(state.mixture, "particle flow step");
  if (state.mixture.dim() != target.dim())
    throw std::invalid_argument("particle flow step: mixture and target dimensions differ");

  FlowState next{state.mixture, state.iteration + 1, state.seed};
  if (cfg.eta == 0.0) return next;  // exact no-op, bypasses map round-off

  const Eigen::Index K = state.mixture.size();
  const auto iter = static_cast<std::uint64_t>(state.iteration);
  for (Eigen::Index k = 0; k < K; ++k) {
    // Independent stream per (seed, iteration, particle): the loop body can be
    // distributed across particles without changing any draw.
    Rng rng = derive_rng(state.seed, iter, static_cast<std::uint64_t>(k));
    std::vector<Vec> samples;
    samples.reserve(static_cast<size_t>(cfg.samples_per_particle));
    for (int j = 0; j < cfg.samples_per_particle; ++j)
      samples.push_back(sample_component(state.mixture.particles[static_cast<size_t>(k)], rng));
    next.mixture.particles[static_cast<size_t>(k)] =
        update(state.mixture, target, k, samples, cfg.eta, cfg.stabilize);
  }

  if (cfg.md_weights) {
    // Weight stream sits after the K particle streams. At this point
    // next.mixture holds the moved positions with the old weights.
    Rng rng = derive_rng(state.seed, iter, static_cast<std::uint64_t>(K));
    next.mixture.weights = md_weight_update(next.mixture, target, cfg.eta, cfg.fv_samples, rng);
  }
  return next;
}

}  // namespace detail

inline FlowState gflowvi_step(const FlowState& state, const TargetModel& target, const FlowConfig& cfg) {
  return detail::particle_flow_step(state, target, cfg, gflowvi_update_particle);
}

inline FlowState ngflowvi_step(const FlowState& state, const TargetModel& target, const FlowConfig& cfg) {
  return detail::particle_flow_step(state, target, cfg, ngflowvi_update_particle);
}

}  // namespace flowvi
