// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <stdexcept>
#include <vector>

#include <gtest/gtest.h>

#include "flowvi/common.hpp"
#include "flowvi/metrics.hpp"
#include "flowvi/targets/gmm.hpp"
#include "flowvi/targets/logistic_regression.hpp"
#include "test_util.hpp"

namespace flowvi {
namespace {

TEST(Metrics, KlOfTheTargetAgainstItselfIsExactlyZero) {
  const ParticleMixture m = testutil::four_cluster_gmm_unequal();
  auto target = make_gmm_target(m);
  Rng rng = derive_rng(121, 0, 0);
  const MetricReport r = estimate_kl(m, *target, 500, rng);
  EXPECT_EQ(r.kl_estimate, 0.0);
  EXPECT_EQ(r.std_error, 0.0);
  EXPECT_EQ(r.n_samples, 500);
}

TEST(Metrics, KlMatchesClosedFormBetweenGaussians) {
  ParticleMixture q;
  q.particles.push_back({Vec::Constant(1, 0.4), Vec::Constant(1, 2.0)});
  q.weights = Vec::Ones(1);
  ParticleMixture pi_mix;
  pi_mix.particles.push_back({Vec::Constant(1, -0.6), Vec::Constant(1, 0.5)});
  pi_mix.weights = Vec::Ones(1);
  auto target = make_gmm_target(pi_mix);

  const double s = 2.0, p = 0.5, dm = 0.4 - (-0.6);
  const double want = 0.5 * (p * dm * dm + p / s - 1.0 - std::log(p / s));

  Rng rng = derive_rng(122, 0, 0);
  const MetricReport r = estimate_kl(q, *target, 200000, rng);
  EXPECT_NEAR(r.kl_estimate, want, 4.0 * r.std_error + 1e-8);
}

// For a normalized target the negated evidence bound and the divergence are the
// same expectation; with common random numbers they agree bitwise, and with
// independent draws within combined error bars.
TEST(Metrics, NegatedElboAgreesWithKlForNormalizedTargets) {
  Rng rng_mix = derive_rng(123, 0, 0);
  const ParticleMixture q = testutil::random_mixture(rng_mix, 3, 2);
  auto target = make_gmm_target(testutil::four_cluster_gmm_equal());

  Rng rng_a = derive_rng(124, 0, 0);
  Rng rng_b = derive_rng(124, 0, 0);
  const MetricReport kl = estimate_kl(q, *target, 2000, rng_a);
  const MetricReport elbo = estimate_negated_elbo(q, *target, 2000, rng_b);
  EXPECT_EQ(elbo.elbo_neg_estimate, kl.kl_estimate);

  Rng rng_c = derive_rng(125, 0, 0);
  Rng rng_d = derive_rng(126, 0, 0);
  const MetricReport kl2 = estimate_kl(q, *target, 50000, rng_c);
  const MetricReport elbo2 = estimate_negated_elbo(q, *target, 50000, rng_d);
  const double combined = std::sqrt(kl2.std_error * kl2.std_error + elbo2.std_error * elbo2.std_error);
  EXPECT_NEAR(elbo2.elbo_neg_estimate, kl2.kl_estimate, 3.0 * combined);
}

TEST(Metrics, StandardErrorShrinksAsRootN) {
  Rng rng_mix = derive_rng(127, 0, 0);
  const ParticleMixture q = testutil::random_mixture(rng_mix, 2, 2);
  auto target = make_gmm_target(testutil::four_cluster_gmm_equal());
  const int n = 20000;
  Rng rng_a = derive_rng(128, 0, 0);
  Rng rng_b = derive_rng(129, 0, 0);
  const MetricReport small = estimate_kl(q, *target, n, rng_a);
  const MetricReport large = estimate_kl(q, *target, 4 * n, rng_b);
  ASSERT_GT(large.std_error, 0.0);
  const double ratio = small.std_error / large.std_error;
  EXPECT_GT(ratio, 1.6);
  EXPECT_LT(ratio, 2.4);
}

TEST(Metrics, ClassificationLossAveragesProbabilitiesNotLogits) {
  MlpArchitecture arch;
  arch.in_dim = 1;
  arch.hidden = 0;
  Mat X_test(1, 1);
  X_test << 0.0;
  const Vec y_test = Vec::Ones(1);

  // weights (w, b): with x = 0 the logit is just b
  Vec draw_a(2), draw_b(2);
  draw_a << 0.0, 0.0;  // logit 0, probability 1/2
  draw_b << 0.0, 4.0;  // logit 4
  const std::vector<Vec> draws = {draw_a, draw_b};
  const MetricReport r =
      predictive_loss_from_draws(draws, arch, X_test, y_test, BnnTarget::Task::kClassification);
  const double p_avg = 0.5 * (0.5 + 1.0 / (1.0 + std::exp(-4.0)));
  EXPECT_NEAR(r.predictive_loss, -std::log(p_avg), 1e-12);
}

TEST(Metrics, RegressionLossIsMeanSquaredErrorOfTheAveragedPrediction) {
  MlpArchitecture arch;
  arch.in_dim = 1;
  arch.hidden = 0;
  Mat X_test(3, 1);
  X_test << 1.0, 2.0, 3.0;
  const Vec y_test = (Vec(3) << 1.0, 0.0, 2.0).finished();

  Vec draw(2);
  draw << 0.0, 1.5;  // constant predictor 1.5
  const MetricReport r =
      predictive_loss_from_draws({draw}, arch, X_test, y_test, BnnTarget::Task::kRegression);
  const double want = (0.25 + 2.25 + 0.25) / 3.0;
  EXPECT_NEAR(r.predictive_loss, want, 1e-15);
  EXPECT_GT(r.std_error, 0.0);
}

TEST(Metrics, SamplingWrapperMatchesExplicitDraws) {
  MlpArchitecture arch;
  arch.in_dim = 1;
  arch.hidden = 0;
  ParticleMixture q;
  q.particles.push_back({(Vec(2) << 0.5, -0.5).finished(), Vec::Constant(2, 4.0)});
  q.weights = Vec::Ones(1);
  Mat X_test(2, 1);
  X_test << -1.0, 1.0;
  const Vec y_test = (Vec(2) << 0.0, 1.0).finished();

  Rng rng_a = derive_rng(130, 0, 0);
  const MetricReport wrapped =
      predictive_loss(q, arch, X_test, y_test, BnnTarget::Task::kRegression, 25, rng_a);

  Rng rng_b = derive_rng(130, 0, 0);
  std::vector<Vec> draws;
  for (int i = 0; i < 25; ++i) draws.push_back(sample_mixture(q, rng_b));
  const MetricReport manual =
      predictive_loss_from_draws(draws, arch, X_test, y_test, BnnTarget::Task::kRegression);
  EXPECT_EQ(wrapped.predictive_loss, manual.predictive_loss);
}

TEST(Metrics, InputValidation) {
  const ParticleMixture q = testutil::four_cluster_gmm_equal();
  auto gmm = make_gmm_target(q);
  Rng rng = derive_rng(131, 0, 0);
  EXPECT_THROW(estimate_kl(q, *gmm, 0, rng), std::invalid_argument);
  EXPECT_THROW(estimate_negated_elbo(q, *gmm, 0, rng), std::invalid_argument);

  Mat X(2, 2);
  X << 1.0, 0.0, 0.0, 1.0;
  auto logreg = make_logistic_regression_target(X, (Vec(2) << 1.0, -1.0).finished(), 1.0);
  EXPECT_THROW(estimate_kl(q, *logreg, 10, rng), std::invalid_argument);

  MlpArchitecture arch;
  arch.in_dim = 1;
  arch.hidden = 0;
  Mat X_test(1, 1);
  X_test << 0.0;
  EXPECT_THROW(
      predictive_loss_from_draws({}, arch, X_test, Vec::Ones(1), BnnTarget::Task::kRegression),
      std::invalid_argument);
  EXPECT_THROW(predictive_loss_from_draws({Vec::Zero(2)}, arch, Mat(0, 1), Vec::Zero(0),
                                          BnnTarget::Task::kRegression),
               std::invalid_argument);
  EXPECT_THROW(predictive_loss_from_draws({Vec::Zero(2)}, arch, X_test,
                                          (Vec(1) << 0.5).finished(),
                                          BnnTarget::Task::kClassification),
               std::invalid_argument);
}

}  // namespace
}  // namespace flowvi
