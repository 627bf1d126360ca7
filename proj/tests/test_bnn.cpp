// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "flowvi/common.hpp"
#include "flowvi/numdiff.hpp"
#include "flowvi/targets/bnn.hpp"
#include "test_util.hpp"

namespace flowvi {
namespace {

MlpArchitecture small_relu(Eigen::Index in, Eigen::Index hidden) {
  MlpArchitecture a;
  a.in_dim = in;
  a.hidden = hidden;
  a.out_dim = 1;
  a.activation = MlpArchitecture::Activation::kRelu;
  return a;
}

// Synthetic regression batch with inputs in [-2, 2].
void make_regression_data(Rng& rng, int n, Eigen::Index in, Mat& X, Vec& y) {
  std::uniform_real_distribution<double> unif(-2.0, 2.0);
  X.resize(n, in);
  y.resize(n);
  for (int i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < in; ++j) X(i, j) = unif(rng);
    y[i] = std::sin(2.0 * X(i, 0)) + 0.1 * unif(rng);
  }
}

// Weight vector at a safe distance from every ReLU kink.
Vec kink_free_point(const BnnTarget& target, Rng& rng, double min_gap = 1e-2) {
  for (int tries = 0; tries < 200; ++tries) {
    const Vec z = 0.7 * standard_normal(rng, target.dim());
    if (target.min_hidden_gap(z) > min_gap) return z;
  }
  throw std::runtime_error("kink_free_point: could not find a point clear of the kinks");
}

TEST(Mlp, WeightDimCountsAllLayers) {
  EXPECT_EQ(small_relu(3, 8).weight_dim(), 8 * 3 + 8 + 1 * 8 + 1);
  MlpArchitecture lin = small_relu(4, 0);
  EXPECT_EQ(lin.weight_dim(), 4 + 1);
}

TEST(Mlp, ForwardPassMatchesHandComputation) {
  MlpArchitecture a = small_relu(2, 2);
  // W1 = [[1, -1], [0, 2]], b1 = (0.5, -3), W2 = [[1, 1]], b2 = (0.25)
  Vec z(a.weight_dim());
  z << 1.0, -1.0, 0.0, 2.0, 0.5, -3.0, 1.0, 1.0, 0.25;
  Mat X(1, 2);
  X << 1.0, 1.0;
  // pre = (1 - 1 + 0.5, 2 - 3) = (0.5, -1); relu -> (0.5, 0); out = 0.75
  const Mat out = mlp_forward(a, z, X);
  ASSERT_EQ(out.rows(), 1);
  ASSERT_EQ(out.cols(), 1);
  EXPECT_NEAR(out(0, 0), 0.75, 1e-15);
}

TEST(Mlp, LinearModeMatchesAffineMap) {
  MlpArchitecture a = small_relu(3, 0);
  Vec z(a.weight_dim());
  z << 1.0, 2.0, -1.0, 0.5;
  Mat X(2, 3);
  X << 1.0, 0.0, 0.0, 0.0, 1.0, 1.0;
  const Mat out = mlp_forward(a, z, X);
  EXPECT_NEAR(out(0, 0), 1.0 + 0.5, 1e-15);
  EXPECT_NEAR(out(1, 0), 2.0 - 1.0 + 0.5, 1e-15);
}

TEST(Bnn, LinearModeHasConstantHessianDiagonal) {
  Rng rng = derive_rng(51, 0, 0);
  Mat X;
  Vec y;
  make_regression_data(rng, 30, 4, X, y);
  MlpArchitecture a = small_relu(4, 0);
  auto target = make_bnn_target(a, X, y, BnnTarget::Task::kRegression, 0.2);
  const Vec h1 = target->hess_diag(standard_normal(rng, a.weight_dim()));
  const Vec h2 = target->hess_diag(standard_normal(rng, a.weight_dim()));
  EXPECT_LT(testutil::max_abs_err(h1, h2), 1e-12);
  // diag entry for weight j is reg + sum_i x_ij^2, for the bias reg + n
  for (Eigen::Index j = 0; j < 4; ++j)
    EXPECT_NEAR(h1[j], 0.2 + X.col(j).squaredNorm(), 1e-9);
  EXPECT_NEAR(h1[4], 0.2 + X.rows(), 1e-9);
}

TEST(Bnn, GradientMatchesFiniteDifferencesAwayFromKinks) {
  Rng rng = derive_rng(52, 0, 0);
  Mat X;
  Vec y;
  make_regression_data(rng, 25, 3, X, y);
  BnnTarget target(small_relu(3, 6), X, y, BnnTarget::Task::kRegression, 0.1, {});
  for (int trial = 0; trial < 20; ++trial) {
    const Vec z = kink_free_point(target, rng);
    EXPECT_LT(testutil::rel_err(target.grad(z), finite_diff_grad(target, z)), 1e-6);
  }
}

TEST(Bnn, TanhGradientMatchesFiniteDifferences) {
  Rng rng = derive_rng(57, 0, 0);
  Mat X;
  Vec y;
  make_regression_data(rng, 25, 3, X, y);
  MlpArchitecture a = small_relu(3, 6);
  a.activation = MlpArchitecture::Activation::kTanh;
  BnnTarget target(a, X, y, BnnTarget::Task::kRegression, 0.1, {});
  for (int trial = 0; trial < 20; ++trial) {
    const Vec z = standard_normal(rng, a.weight_dim());
    EXPECT_LT(testutil::rel_err(target.grad(z), finite_diff_grad(target, z)), 1e-6);
  }
}

TEST(Bnn, ClassificationGradientMatchesFiniteDifferences) {
  Rng rng = derive_rng(53, 0, 0);
  Mat X;
  Vec y;
  make_regression_data(rng, 25, 3, X, y);
  for (Eigen::Index i = 0; i < y.size(); ++i) y[i] = y[i] > 0 ? 1.0 : -1.0;
  BnnTarget target(small_relu(3, 6), X, y, BnnTarget::Task::kClassification, 0.1, {});
  for (int trial = 0; trial < 20; ++trial) {
    const Vec z = kink_free_point(target, rng);
    EXPECT_LT(testutil::rel_err(target.grad(z), finite_diff_grad(target, z)), 1e-6);
  }
}

// With one hidden layer the network output is linear in each individual weight,
// so away from the kinks the Gauss-Newton diagonal is the true diagonal, not an
// approximation.
TEST(Bnn, GaussNewtonDiagonalIsExactAwayFromKinks) {
  Rng rng = derive_rng(54, 0, 0);
  Mat X;
  Vec y;
  make_regression_data(rng, 25, 3, X, y);

  BnnTarget reg_target(small_relu(3, 6), X, y, BnnTarget::Task::kRegression, 0.1, {});
  for (int trial = 0; trial < 10; ++trial) {
    const Vec z = kink_free_point(reg_target, rng);
    EXPECT_LT(testutil::rel_err(reg_target.hess_diag_gauss_newton(z),
                                finite_diff_hess_diag(reg_target, z)),
              1e-3);
  }

  Vec labels = y;
  for (Eigen::Index i = 0; i < labels.size(); ++i) labels[i] = labels[i] > 0 ? 1.0 : -1.0;
  BnnTarget cls_target(small_relu(3, 6), X, labels, BnnTarget::Task::kClassification, 0.1, {});
  for (int trial = 0; trial < 10; ++trial) {
    const Vec z = kink_free_point(cls_target, rng);
    EXPECT_LT(testutil::rel_err(cls_target.hess_diag_gauss_newton(z),
                                finite_diff_hess_diag(cls_target, z)),
              1e-3);
  }
}

TEST(Bnn, HutchinsonTracksExactDiagonalOnQuadratic) {
  Rng rng = derive_rng(55, 0, 0);
  Mat X;
  Vec y;
  make_regression_data(rng, 40, 5, X, y);
  MlpArchitecture a = small_relu(5, 0);
  BnnTarget::Options opts;
  opts.hess_mode = BnnTarget::HessMode::kHutchinson;
  opts.hutchinson_probes = 64;
  BnnTarget target(a, X, y, BnnTarget::Task::kRegression, 0.5, opts);
  BnnTarget exact(a, X, y, BnnTarget::Task::kRegression, 0.5, {});
  const Vec z = standard_normal(rng, a.weight_dim());
  EXPECT_LT(testutil::rel_err(target.hess_diag(z), exact.hess_diag(z)), 0.10);
}

TEST(Bnn, HutchinsonIsDeterministicGivenTheSeed) {
  Rng rng = derive_rng(56, 0, 0);
  Mat X;
  Vec y;
  make_regression_data(rng, 20, 3, X, y);
  BnnTarget::Options opts;
  opts.hess_mode = BnnTarget::HessMode::kHutchinson;
  BnnTarget t1(small_relu(3, 4), X, y, BnnTarget::Task::kRegression, 0.1, opts);
  BnnTarget t2(small_relu(3, 4), X, y, BnnTarget::Task::kRegression, 0.1, opts);
  const Vec z = standard_normal(rng, t1.dim());
  const Vec h1 = t1.hess_diag(z);
  const Vec h2 = t2.hess_diag(z);
  EXPECT_EQ((h1 - h2).cwiseAbs().maxCoeff(), 0.0);
  const Vec again = t1.hess_diag(z);
  EXPECT_EQ((h1 - again).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Bnn, MinHiddenGapFlagsKinks) {
  Mat X(1, 1);
  X << 1.0;
  Vec y = Vec::Zero(1);
  MlpArchitecture a = small_relu(1, 1);
  BnnTarget target(a, X, y, BnnTarget::Task::kRegression, 0.0, {});
  // pre-activation = w*x + b = w + b
  Vec z(a.weight_dim());
  z << 1.0, -1.0, 1.0, 0.0;  // pre = 0: sitting exactly on the kink
  EXPECT_EQ(target.min_hidden_gap(z), 0.0);
  z << 1.0, -0.75, 1.0, 0.0;
  EXPECT_NEAR(target.min_hidden_gap(z), 0.25, 1e-15);

  MlpArchitecture lin = small_relu(1, 0);
  BnnTarget linear(lin, X, y, BnnTarget::Task::kRegression, 0.0, {});
  EXPECT_TRUE(std::isinf(linear.min_hidden_gap(Vec::Zero(lin.weight_dim()))));
}

TEST(Bnn, NonFiniteActivationsRaiseNamedErrors) {
  Mat X(1, 1);
  X << 1.0;
  Vec y = Vec::Zero(1);
  MlpArchitecture a = small_relu(1, 1);
  BnnTarget target(a, X, y, BnnTarget::Task::kRegression, 0.0, {});
  Vec z = Vec::Zero(a.weight_dim());
  z[0] = 1e308;
  z[1] = 1e308;
  try {
    target.value(z);
    FAIL() << "expected an overflow error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("hidden layer"), std::string::npos);
  }
}

TEST(Bnn, MinibatchAverageEqualsFullBatch) {
  Rng rng = derive_rng(57, 0, 0);
  Mat X;
  Vec y;
  make_regression_data(rng, 12, 2, X, y);
  BnnTarget target(small_relu(2, 4), X, y, BnnTarget::Task::kRegression, 0.3, {});
  const Vec z = kink_free_point(target, rng);
  const Vec full_grad = target.grad(z);
  const double full_value = target.value(z);

  Vec grad_acc = Vec::Zero(target.dim());
  double value_acc = 0.0;
  for (int b = 0; b < 4; ++b) {
    std::vector<int> idx;
    for (int i = 3 * b; i < 3 * (b + 1); ++i) idx.push_back(i);
    target.set_batch(idx);
    grad_acc += target.grad(z);
    value_acc += target.value(z);
  }
  EXPECT_LT(testutil::rel_err(grad_acc / 4.0, full_grad), 1e-12);
  EXPECT_NEAR(value_acc / 4.0, full_value, 1e-10);
}

TEST(Bnn, ConstructorValidatesShapesAndLabels) {
  Mat X(2, 2);
  X << 1.0, 0.0, 0.0, 1.0;
  Vec y = (Vec(2) << 1.0, -1.0).finished();
  MlpArchitecture a = small_relu(2, 3);

  EXPECT_NO_THROW(make_bnn_target(a, X, y, BnnTarget::Task::kClassification, 0.1));
  EXPECT_THROW(make_bnn_target(a, X, (Vec(2) << 1.0, 0.0).finished(),
                               BnnTarget::Task::kClassification, 0.1),
               std::invalid_argument);
  EXPECT_THROW(make_bnn_target(a, X, Vec::Ones(3), BnnTarget::Task::kRegression, 0.1),
               std::invalid_argument);
  MlpArchitecture wrong = small_relu(5, 3);
  EXPECT_THROW(make_bnn_target(wrong, X, y, BnnTarget::Task::kRegression, 0.1),
               std::invalid_argument);
  EXPECT_THROW(make_bnn_target(a, X, y, BnnTarget::Task::kRegression, -0.5),
               std::invalid_argument);
}

}  // namespace
}  // namespace flowvi
