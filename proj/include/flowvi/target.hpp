// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <vector>

#include "flowvi/common.hpp"

namespace flowvi {

// Negated log target f(z) = -log pi(z) up to an additive constant, with the
// derivatives the particle updates consume. Implementations must be pure:
// same z (and same active batch) always gives the same numbers.
class TargetModel {
 public:
  virtual ~TargetModel() = default;

  virtual Eigen::Index dim() const = 0;
  virtual double value(const Vec& z) const = 0;
  virtual Vec grad(const Vec& z) const = 0;
  virtual Vec hess_diag(const Vec& z) const = 0;

  // Normalized log pi, available only when the normalizer is known.
  virtual bool has_log_density() const { return false; }
  virtual double log_density(const Vec& /*z*/) const {
    throw std::logic_error("TargetModel: normalized density not available for this target");
  }

  // Minibatch control for data-driven targets; a set batch rescales the data
  // term by N / |batch| so gradients stay unbiased.
  virtual bool supports_minibatch() const { return false; }
  virtual void set_batch(const std::vector<int>& /*indices*/) {
    throw std::logic_error("TargetModel: this target has no minibatch support");
  }
};

}  // namespace flowvi
