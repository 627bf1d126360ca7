// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <limits>
#include <stdexcept>

#include <gtest/gtest.h>

#include "flowvi/common.hpp"
#include "flowvi/gaussian.hpp"
#include "flowvi/numdiff.hpp"
#include "test_util.hpp"

namespace flowvi {
namespace {

TEST(Gaussian, StandardNormalLogDensityAtMode) {
  GaussianParticle p;
  p.mu = Vec::Zero(1);
  p.s = Vec::Ones(1);
  EXPECT_NEAR(component_log_density(p, Vec::Zero(1)), -0.9189385332046727, 1e-12);
}

TEST(Gaussian, LogDensityMatchesClosedFormInSeveralDims) {
  Rng rng = derive_rng(11, 0, 0);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index d = 1 + trial % 5;
    GaussianParticle p;
    p.mu = standard_normal(rng, d);
    p.s = standard_normal(rng, d).array().exp();
    const Vec z = standard_normal(rng, d);
    double want = 0.0;
    for (Eigen::Index i = 0; i < d; ++i) {
      const double diff = z[i] - p.mu[i];
      want += 0.5 * std::log(p.s[i]) - 0.5 * p.s[i] * diff * diff - 0.5 * std::log(2.0 * M_PI);
    }
    EXPECT_NEAR(component_log_density(p, z), want, 1e-12);
  }
}

TEST(Gaussian, LogDensityGradientInZMatchesCentralDifferences) {
  Rng rng = derive_rng(12, 0, 0);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::Index d = 1 + trial % 4;
    GaussianParticle p;
    p.mu = standard_normal(rng, d);
    p.s = standard_normal(rng, d).array().exp();
    const Vec z = standard_normal(rng, d);
    const Vec analytic = p.s.cwiseProduct(p.mu - z);
    const Vec fd = central_diff_grad(
        [&](const Vec& x) { return component_log_density(p, x); }, z, 1e-5);
    EXPECT_LT(testutil::rel_err(analytic, fd), 1e-6);
  }
}

TEST(Gaussian, ParameterGradientsMatchCentralDifferences) {
  Rng rng = derive_rng(13, 0, 0);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::Index d = 1 + trial % 4;
    GaussianParticle p;
    p.mu = standard_normal(rng, d);
    p.s = standard_normal(rng, d).array().exp();
    const Vec z = standard_normal(rng, d);
    const ParamGrads g = component_param_grads(p, z);

    const Vec fd_mu = central_diff_grad(
        [&](const Vec& mu) {
          GaussianParticle q{mu, p.s};
          return component_log_density(q, z);
        },
        p.mu, 1e-5);
    const Vec fd_s = central_diff_grad(
        [&](const Vec& s) {
          GaussianParticle q{p.mu, s};
          return component_log_density(q, z);
        },
        p.s, 1e-5);
    EXPECT_LT(testutil::rel_err(g.mu, fd_mu), 1e-6);
    EXPECT_LT(testutil::rel_err(g.s, fd_s), 1e-6);
  }
}

TEST(Gaussian, SampleMomentsMatchParameters) {
  GaussianParticle p;
  p.mu = (Vec(2) << 1.5, -0.5).finished();
  p.s = (Vec(2) << 4.0, 0.25).finished();
  Rng rng = derive_rng(14, 0, 0);
  const int n = 100000;
  Vec mean = Vec::Zero(2);
  Vec m2 = Vec::Zero(2);
  for (int i = 0; i < n; ++i) {
    const Vec z = sample_component(p, rng);
    mean += z;
    m2 += (z - p.mu).cwiseAbs2();
  }
  mean /= n;
  m2 /= n;
  for (Eigen::Index i = 0; i < 2; ++i) {
    const double sigma = 1.0 / std::sqrt(p.s[i]);
    EXPECT_NEAR(mean[i], p.mu[i], 4.0 * sigma / std::sqrt(double(n)));
    EXPECT_NEAR(m2[i], sigma * sigma, 5.0 * sigma * sigma / std::sqrt(double(n)));
  }
}

TEST(Gaussian, HugePrecisionCollapsesSamplesOntoMean) {
  GaussianParticle p;
  p.mu = (Vec(3) << 0.25, -1.0, 2.0).finished();
  p.s = Vec::Constant(3, 1e12);
  Rng rng = derive_rng(15, 0, 0);
  for (int i = 0; i < 1000; ++i) {
    const Vec z = sample_component(p, rng);
    EXPECT_LT((z - p.mu).cwiseAbs().maxCoeff(), 1e-5);
  }
}

TEST(Gaussian, ValidationRejectsBadParticles) {
  GaussianParticle p;
  p.mu = Vec::Zero(2);
  p.s = Vec::Ones(3);
  EXPECT_THROW(validate_particle(p), std::invalid_argument);

  p.s = (Vec(2) << 1.0, 0.0).finished();
  EXPECT_THROW(validate_particle(p), std::invalid_argument);

  p.s = (Vec(2) << 1.0, -2.0).finished();
  EXPECT_THROW(validate_particle(p), std::invalid_argument);

  p.s = (Vec(2) << 1.0, std::numeric_limits<double>::quiet_NaN()).finished();
  EXPECT_THROW(validate_particle(p), std::invalid_argument);

  p.s = Vec::Ones(2);
  EXPECT_NO_THROW(validate_particle(p));
}

TEST(Gaussian, DensityEvaluationRejectsDimensionMismatch) {
  GaussianParticle p;
  p.mu = Vec::Zero(2);
  p.s = Vec::Ones(2);
  EXPECT_THROW(component_log_density(p, Vec::Zero(3)), std::invalid_argument);
}

}  // namespace
}  // namespace flowvi
