// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <utility>

#include "flowvi/mixture.hpp"
#include "flowvi/target.hpp"

namespace flowvi {

// Synthetic benchmark: f(z) = -log of a known Gaussian mixture. Fully
// normalized, so KL against it can be estimated directly.
class GmmTarget final : public TargetModel {
 public:
  explicit GmmTarget(ParticleMixture mixture) : mix_(std::move(mixture)) {
    validate_mixture(mix_, "GmmTarget");
  }

  Eigen::Index dim() const override { return mix_.dim(); }
  double value(const Vec& z) const override { return -mixture_log_density(mix_, z); }
  Vec grad(const Vec& z) const override { return -mixture_score(mix_, z); }
  Vec hess_diag(const Vec& z) const override { return -mixture_hess_diag(mix_, z); }

  bool has_log_density() const override { return true; }
  double log_density(const Vec& z) const override { return mixture_log_density(mix_, z); }

  const ParticleMixture& mixture() const { return mix_; }

 private:
  ParticleMixture mix_;
};

inline std::unique_ptr<TargetModel> make_gmm_target(ParticleMixture mixture) {
  return std::make_unique<GmmTarget>(std::move(mixture));
}

}  // namespace flowvi
