// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "flowvi/target.hpp"

namespace flowvi {

// Bayesian logistic regression with labels in {-1, +1}:
//   f(w) = reg/2 ||w||^2 + (N/|batch|) sum_{i in batch} log(1 + exp(-y_i x_i' w))
// The ridge term is the Gaussian prior precision; the N/|batch| factor keeps
// minibatch gradients unbiased for the full-data objective.
class LogisticRegressionTarget final : public TargetModel {
 public:
  LogisticRegressionTarget(Mat X, Vec y, double reg) : X_(std::move(X)), y_(std::move(y)), reg_(reg) {
    if (X_.rows() == 0 || X_.cols() == 0)
      throw std::invalid_argument("LogisticRegressionTarget: empty design matrix");
    if (y_.size() != X_.rows())
      throw std::invalid_argument("LogisticRegressionTarget: label count does not match row count");
    if (!(reg_ >= 0.0)) throw std::invalid_argument("LogisticRegressionTarget: negative regularizer");
    for (Eigen::Index i = 0; i < y_.size(); ++i)
      if (y_[i] != 1.0 && y_[i] != -1.0)
        throw std::invalid_argument("LogisticRegressionTarget: label at row " + std::to_string(i) +
                                    " is not +1/-1");
    batch_.resize(static_cast<size_t>(X_.rows()));
    for (size_t i = 0; i < batch_.size(); ++i) batch_[i] = static_cast<int>(i);
  }

  Eigen::Index dim() const override { return X_.cols(); }

  double value(const Vec& w) const override {
    check_dim(w);
    double loss = 0.0;
    for (int i : batch_) {
      const double t = y_[i] * X_.row(i).dot(w);
      // log(1 + e^{-t}) without overflow for very negative t
      loss += t >= 0.0 ? std::log1p(std::exp(-t)) : -t + std::log1p(std::exp(t));
    }
    return 0.5 * reg_ * w.squaredNorm() + scale() * loss;
  }

  Vec grad(const Vec& w) const override {
    check_dim(w);
    Vec g = reg_ * w;
    for (int i : batch_) {
      const double t = y_[i] * X_.row(i).dot(w);
      g -= scale() * sigmoid(-t) * y_[i] * X_.row(i).transpose();
    }
    return g;
  }

  Vec hess_diag(const Vec& w) const override {
    check_dim(w);
    Vec h = Vec::Constant(w.size(), reg_);
    for (int i : batch_) {
      const double t = y_[i] * X_.row(i).dot(w);
      const double p = sigmoid(t);
      h += scale() * p * (1.0 - p) * X_.row(i).array().square().matrix();
    }
    return h;
  }

  bool supports_minibatch() const override { return true; }

  void set_batch(const std::vector<int>& indices) override {
    if (indices.empty()) throw std::invalid_argument("set_batch: empty batch");
    for (int i : indices)
      if (i < 0 || i >= X_.rows())
        throw std::invalid_argument("set_batch: index " + std::to_string(i) + " out of range");
    batch_ = indices;
  }

 private:
  static double sigmoid(double t) {
    return t >= 0.0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
  }

  double scale() const { return static_cast<double>(X_.rows()) / static_cast<double>(batch_.size()); }

  void check_dim(const Vec& w) const {
    if (w.size() != X_.cols())
      throw std::invalid_argument("LogisticRegressionTarget: weight dimension " +
                                  std::to_string(w.size()) + " does not match feature count " +
                                  std::to_string(X_.cols()));
  }

  Mat X_;
  Vec y_;
  double reg_;
  std::vector<int> batch_;
};

inline std::unique_ptr<TargetModel> make_logistic_regression_target(Mat X, Vec y, double reg) {
  return std::make_unique<LogisticRegressionTarget>(std::move(X), std::move(y), reg);
}

}  // namespace flowvi
