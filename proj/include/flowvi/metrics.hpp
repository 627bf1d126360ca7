// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "flowvi/common.hpp"
#include "flowvi/mixture.hpp"
#include "flowvi/target.hpp"
#include "flowvi/targets/bnn.hpp"

namespace flowvi {

// One report type for all estimators; fields an estimator does not produce
// stay NaN. std_error is the standard error of the reported mean.
struct MetricReport {
  double kl_estimate = std::numeric_limits<double>::quiet_NaN();
  double elbo_neg_estimate = std::numeric_limits<double>::quiet_NaN();
  double predictive_loss = std::numeric_limits<double>::quiet_NaN();
  int n_samples = 0;
  double std_error = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

inline MeanSe mean_and_se(const std::vector<double>& xs) {
  const double n = static_cast<double>(xs.size());
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= n;
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var = xs.size() > 1 ? var / (n - 1.0) : 0.0;
  return {mean, std::sqrt(var / n)};
}

}  // namespace detail

// Plug-in KL(q || pi) = E_q[log q - log pi], valid only when the target's
// normalizer is known.
inline MetricReport estimate_kl(const ParticleMixture& q, const TargetModel& target, int n_samples,
                                Rng& rng) {
  if (n_samples < 1) throw std::invalid_argument("estimate_kl: need at least one sample");
  if (!target.has_log_density())
    throw std::invalid_argument("estimate_kl: target has no normalized density");
  std::vector<double> vals(static_cast<size_t>(n_samples));
  for (auto& v : vals) {
    const Vec z = sample_mixture(q, rng);
    v = mixture_log_density(q, z) - target.log_density(z);
  }
  const auto ms = detail::mean_and_se(vals);
  MetricReport r;
  r.kl_estimate = ms.mean;
  r.n_samples = n_samples;
  r.std_error = ms.se;
  return r;
}

// E_q[f + log q]; equals KL(q || pi) when f = -log pi is normalized, and the
// negated evidence bound up to a constant otherwise.
inline MetricReport estimate_negated_elbo(const ParticleMixture& q, const TargetModel& target,
                                          int n_samples, Rng& rng) {
  if (n_samples < 1) throw std::invalid_argument("estimate_negated_elbo: need at least one sample");
  std::vector<double> vals(static_cast<size_t>(n_samples));
  for (auto& v : vals) {
    const Vec z = sample_mixture(q, rng);
    v = target.value(z) + mixture_log_density(q, z);
  }
  const auto ms = detail::mean_and_se(vals);
  MetricReport r;
  r.elbo_neg_estimate = ms.mean;
  r.n_samples = n_samples;
  r.std_error = ms.se;
  return r;
}

// Posterior predictive loss on held-out data. Predictions are averaged across
// the given weight vectors first (in probability space for classification),
// then scored per test point:
//   classification: mean negative log-likelihood of the averaged probability
//   regression:     mean squared error of the averaged output
inline MetricReport predictive_loss_from_draws(const std::vector<Vec>& weight_draws,
                                               const MlpArchitecture& arch, const Mat& X_test,
                                               const Vec& y_test, BnnTarget::Task task) {
  if (weight_draws.empty()) throw std::invalid_argument("predictive_loss: need at least one sample");
  if (X_test.rows() == 0) throw std::invalid_argument("predictive_loss: empty test set");
  if (y_test.size() != X_test.rows())
    throw std::invalid_argument("predictive_loss: label count does not match row count");
  if (arch.out_dim != 1) throw std::invalid_argument("predictive_loss: needs out_dim == 1");

  Vec avg = Vec::Zero(X_test.rows());
  for (const Vec& w : weight_draws) {
    const Vec out = mlp_forward(arch, w, X_test).col(0);
    if (task == BnnTarget::Task::kClassification) {
      for (Eigen::Index i = 0; i < out.size(); ++i)
        avg[i] += out[i] >= 0.0 ? 1.0 / (1.0 + std::exp(-out[i]))
                                : std::exp(out[i]) / (1.0 + std::exp(out[i]));
    } else {
      avg += out;
    }
  }
  avg /= static_cast<double>(weight_draws.size());

  std::vector<double> losses(static_cast<size_t>(X_test.rows()));
  if (task == BnnTarget::Task::kClassification) {
    for (Eigen::Index i = 0; i < X_test.rows(); ++i) {
      if (y_test[i] != 1.0 && y_test[i] != -1.0)
        throw std::invalid_argument("predictive_loss: label at row " + std::to_string(i) +
                                    " is not +1/-1");
      const double p = y_test[i] > 0.0 ? avg[i] : 1.0 - avg[i];
      losses[static_cast<size_t>(i)] = -std::log(std::min(1.0 - 1e-12, std::max(1e-12, p)));
    }
  } else {
    for (Eigen::Index i = 0; i < X_test.rows(); ++i) {
      const double e = avg[i] - y_test[i];
      losses[static_cast<size_t>(i)] = e * e;
    }
  }
  const auto ms = detail::mean_and_se(losses);
  MetricReport r;
  r.predictive_loss = ms.mean;
  r.n_samples = static_cast<int>(weight_draws.size());
  r.std_error = ms.se;
  return r;
}

inline MetricReport predictive_loss(const ParticleMixture& q, const MlpArchitecture& arch,
                                    const Mat& X_test, const Vec& y_test, BnnTarget::Task task,
                                    int n_weight_samples, Rng& rng) {
  if (n_weight_samples < 1) throw std::invalid_argument("predictive_loss: need at least one sample");
  if (q.dim() != arch.weight_dim())
    throw std::invalid_argument("predictive_loss: mixture dimension does not match weight count");
  std::vector<Vec> draws;
  draws.reserve(static_cast<size_t>(n_weight_samples));
  for (int s = 0; s < n_weight_samples; ++s) draws.push_back(sample_mixture(q, rng));
  return predictive_loss_from_draws(draws, arch, X_test, y_test, task);
}

}  // namespace flowvi
