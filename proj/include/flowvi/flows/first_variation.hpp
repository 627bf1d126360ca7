// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>

#include "flowvi/common.hpp"
#include "flowvi/gaussian.hpp"
#include "flowvi/mixture.hpp"
#include "flowvi/target.hpp"

namespace flowvi {

// Monte Carlo estimate of the first variation of the free energy
//   L(rho) = E_rho[ E_q [f + log q_n] ]
// at component parameters p, under the current mixture m:
//   (1/S) sum_i [ f(z_i) + log q_n(z_i) ] + 1,   z_i ~ q(. | p).
// This is the per-component quantity the weight update descends on.
inline double first_variation(const ParticleMixture& m, const TargetModel& target,
                              const GaussianParticle& p, int n_samples, Rng& rng) {
  if (n_samples < 1) throw std::invalid_argument("first_variation: need at least one sample");
  double acc = 0.0;
  for (int i = 0; i < n_samples; ++i) {
    const Vec z = sample_component(p, rng);
    acc += target.value(z) + mixture_log_density(m, z);
  }
  return acc / static_cast<double>(n_samples) + 1.0;
}

}  // namespace flowvi
