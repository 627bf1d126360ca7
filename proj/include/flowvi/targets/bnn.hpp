// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "flowvi/common.hpp"
#include "flowvi/target.hpp"

namespace flowvi {

// One-hidden-layer perceptron whose flattened weight vector is the latent z.
// hidden == 0 degenerates to a plain linear model, which makes the ridge
// regression objective exactly quadratic; the Hessian oracles are checked
// against that case.
struct MlpArchitecture {
  enum class Activation { kRelu, kTanh, kIdentity };

  Eigen::Index in_dim = 0;
  Eigen::Index hidden = 50;
  Eigen::Index out_dim = 1;
  Activation activation = Activation::kRelu;

  Eigen::Index weight_dim() const {
    if (hidden == 0) return out_dim * in_dim + out_dim;
    return hidden * in_dim + hidden + out_dim * hidden + out_dim;
  }
};

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Read-only views into the flattened weight vector, in layout
// [W1 (hidden x in), b1, W2 (out x hidden), b2]; [W, b] for hidden == 0.
struct MlpViews {
  Eigen::Map<const RowMat> W1;
  Eigen::Map<const Vec> b1;
  Eigen::Map<const RowMat> W2;
  Eigen::Map<const Vec> b2;
};

inline MlpViews map_weights(const MlpArchitecture& a, const Vec& z) {
  if (z.size() != a.weight_dim())
    throw std::invalid_argument("mlp: weight vector has size " + std::to_string(z.size()) +
                                ", architecture needs " + std::to_string(a.weight_dim()));
  const double* p = z.data();
  if (a.hidden == 0) {
    // hidden maps are empty; both layers alias the single linear layer
    return MlpViews{Eigen::Map<const RowMat>(p, 0, a.in_dim), Eigen::Map<const Vec>(p, 0),
                    Eigen::Map<const RowMat>(p, a.out_dim, a.in_dim),
                    Eigen::Map<const Vec>(p + a.out_dim * a.in_dim, a.out_dim)};
  }
  const double* w1 = p;
  const double* b1 = w1 + a.hidden * a.in_dim;
  const double* w2 = b1 + a.hidden;
  const double* b2 = w2 + a.out_dim * a.hidden;
  return MlpViews{Eigen::Map<const RowMat>(w1, a.hidden, a.in_dim), Eigen::Map<const Vec>(b1, a.hidden),
                  Eigen::Map<const RowMat>(w2, a.out_dim, a.hidden), Eigen::Map<const Vec>(b2, a.out_dim)};
}

inline Mat activate(const MlpArchitecture& a, const Mat& pre) {
  if (a.activation == MlpArchitecture::Activation::kRelu) return pre.cwiseMax(0.0);
  if (a.activation == MlpArchitecture::Activation::kTanh) return pre.array().tanh().matrix();
  return pre;
}

// Derivative of the activation at the pre-activation; the ReLU subgradient at
// exactly 0 is taken as 0.
inline Mat activate_deriv(const MlpArchitecture& a, const Mat& pre) {
  if (a.activation == MlpArchitecture::Activation::kRelu)
    return (pre.array() > 0.0).cast<double>().matrix();
  if (a.activation == MlpArchitecture::Activation::kTanh)
    return (1.0 - pre.array().tanh().square()).matrix();
  return Mat::Ones(pre.rows(), pre.cols());
}

}  // namespace detail

// Forward pass for a batch of inputs, rows of X. Returns an N x out matrix.
inline Mat mlp_forward(const MlpArchitecture& arch, const Vec& z, const Mat& X) {
  if (X.cols() != arch.in_dim)
    throw std::invalid_argument("mlp_forward: input has " + std::to_string(X.cols()) +
                                " features, architecture expects " + std::to_string(arch.in_dim));
  const auto v = detail::map_weights(arch, z);
  if (arch.hidden == 0) {
    Mat out = (X * v.W2.transpose()).rowwise() + v.b2.transpose();
    if (!out.allFinite()) throw std::runtime_error("mlp_forward: non-finite values in the output layer");
    return out;
  }
  Mat pre = (X * v.W1.transpose()).rowwise() + v.b1.transpose();
  if (!pre.allFinite()) throw std::runtime_error("mlp_forward: non-finite values in the hidden layer");
  Mat h = detail::activate(arch, pre);
  Mat out = (h * v.W2.transpose()).rowwise() + v.b2.transpose();
  if (!out.allFinite()) throw std::runtime_error("mlp_forward: non-finite values in the output layer");
  return out;
}

enum class BnnHessMode { kGaussNewton, kHutchinson };

struct BnnOptions {
  BnnHessMode hess_mode = BnnHessMode::kGaussNewton;
  int hutchinson_probes = 64;
  double hutchinson_step = 1e-5;  // relative step, scaled by 1 + max|z_i|
  std::uint64_t probe_seed = 0x9d2c5680u;
};

inline Mat column_matrix(const Vec& y) {
  Mat Y(y.size(), 1);
  Y.col(0) = y;
  return Y;
}

// Negated log joint of the network under a Gaussian prior:
//   f(z) = reg/2 ||z||^2 + (N/|batch|) sum_{i in batch} loss_i(z)
// with unit-variance Gaussian likelihood for regression (loss = squared error
// over 2) and logistic loss on the single logit for classification.
class BnnTarget final : public TargetModel {
 public:
  enum class Task { kRegression, kClassification };
  using HessMode = BnnHessMode;
  using Options = BnnOptions;

  BnnTarget(MlpArchitecture arch, Mat X, Vec y, Task task, double reg, Options opts = {})
      : BnnTarget(std::move(arch), std::move(X), column_matrix(y), task, reg, opts) {}

  BnnTarget(MlpArchitecture arch, Mat X, Mat Y, Task task, double reg, Options opts = {})
      : arch_(arch), X_(std::move(X)), Y_(std::move(Y)), task_(task), reg_(reg), opts_(opts) {
    if (X_.rows() == 0) throw std::invalid_argument("BnnTarget: empty data");
    if (X_.cols() != arch_.in_dim)
      throw std::invalid_argument("BnnTarget: feature count does not match architecture");
    if (Y_.rows() != X_.rows() || Y_.cols() != arch_.out_dim)
      throw std::invalid_argument("BnnTarget: response shape does not match data/architecture");
    if (!(reg_ >= 0.0)) throw std::invalid_argument("BnnTarget: negative regularizer");
    if (task_ == Task::kClassification) {
      if (arch_.out_dim != 1)
        throw std::invalid_argument("BnnTarget: classification needs a single logit output");
      for (Eigen::Index i = 0; i < Y_.rows(); ++i)
        if (Y_(i, 0) != 1.0 && Y_(i, 0) != -1.0)
          throw std::invalid_argument("BnnTarget: label at row " + std::to_string(i) + " is not +1/-1");
    }
    if (opts_.hutchinson_probes < 1) throw std::invalid_argument("BnnTarget: need at least one probe");
    batch_.resize(static_cast<size_t>(X_.rows()));
    for (size_t i = 0; i < batch_.size(); ++i) batch_[i] = static_cast<int>(i);
    // Fixed Rademacher probes keep hess_diag a pure function of z.
    Rng rng(mix64(opts_.probe_seed));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    probes_.resize(opts_.hutchinson_probes, arch_.weight_dim());
    for (Eigen::Index r = 0; r < probes_.rows(); ++r)
      for (Eigen::Index c = 0; c < probes_.cols(); ++c) probes_(r, c) = unif(rng) < 0.5 ? -1.0 : 1.0;
  }

  Eigen::Index dim() const override { return arch_.weight_dim(); }

  double value(const Vec& z) const override {
    Mat Xb, Yb;
    gather(Xb, Yb);
    const Mat out = mlp_forward(arch_, z, Xb);
    double loss = 0.0;
    if (task_ == Task::kRegression) {
      loss = 0.5 * (out - Yb).squaredNorm();
    } else {
      for (Eigen::Index i = 0; i < out.rows(); ++i) {
        const double t = Yb(i, 0) * out(i, 0);
        loss += t >= 0.0 ? std::log1p(std::exp(-t)) : -t + std::log1p(std::exp(t));
      }
    }
    return 0.5 * reg_ * z.squaredNorm() + scale() * loss;
  }

  Vec grad(const Vec& z) const override {
    Mat Xb, Yb;
    gather(Xb, Yb);
    const auto v = detail::map_weights(arch_, z);

    Vec g = reg_ * z;

    if (arch_.hidden == 0) {
      const Mat out = mlp_forward(arch_, z, Xb);
      const Mat dout = loss_grad(out, Yb);
      Eigen::Map<detail::RowMat>(g.data(), arch_.out_dim, arch_.in_dim) +=
          scale() * (dout.transpose() * Xb);
      Eigen::Map<Vec>(g.data() + arch_.out_dim * arch_.in_dim, arch_.out_dim) +=
          scale() * dout.colwise().sum().transpose();
      return g;
    }

    const Mat pre = (Xb * v.W1.transpose()).rowwise() + v.b1.transpose();
    if (!pre.allFinite()) throw std::runtime_error("BnnTarget: non-finite values in the hidden layer");
    const Mat h = detail::activate(arch_, pre);
    const Mat out = (h * v.W2.transpose()).rowwise() + v.b2.transpose();
    if (!out.allFinite()) throw std::runtime_error("BnnTarget: non-finite values in the output layer");

    const Mat dout = loss_grad(out, Yb);            // N x out
    const Mat dh = dout * v.W2;                     // N x hidden
    const Mat dpre = dh.cwiseProduct(detail::activate_deriv(arch_, pre));

    double* p = g.data();
    Eigen::Map<detail::RowMat>(p, arch_.hidden, arch_.in_dim) += scale() * (dpre.transpose() * Xb);
    p += arch_.hidden * arch_.in_dim;
    Eigen::Map<Vec>(p, arch_.hidden) += scale() * dpre.colwise().sum().transpose();
    p += arch_.hidden;
    Eigen::Map<detail::RowMat>(p, arch_.out_dim, arch_.hidden) += scale() * (dout.transpose() * h);
    p += arch_.out_dim * arch_.hidden;
    Eigen::Map<Vec>(p, arch_.out_dim) += scale() * dout.colwise().sum().transpose();
    return g;
  }

  Vec hess_diag(const Vec& z) const override {
    return opts_.hess_mode == HessMode::kGaussNewton ? hess_diag_gauss_newton(z)
                                                     : hess_diag_hutchinson(z);
  }

  // Generalized Gauss-Newton diagonal. For one hidden layer every output is
  // multilinear in the weights, so per-coordinate second derivatives of the
  // network vanish and this equals the exact diagonal almost everywhere.
  Vec hess_diag_gauss_newton(const Vec& z) const {
    Mat Xb, Yb;
    gather(Xb, Yb);
    const auto v = detail::map_weights(arch_, z);
    Vec hd = Vec::Constant(dim(), reg_);

    if (arch_.hidden == 0) {
      const Mat out = mlp_forward(arch_, z, Xb);
      const Mat curv = loss_curvature(out, Yb);  // N x out
      double* p = hd.data();
      Eigen::Map<detail::RowMat> hW(p, arch_.out_dim, arch_.in_dim);
      hW += scale() * (curv.transpose() * Xb.array().square().matrix());
      Eigen::Map<Vec>(p + arch_.out_dim * arch_.in_dim, arch_.out_dim) +=
          scale() * curv.colwise().sum().transpose();
      return hd;
    }

    const Mat pre = (Xb * v.W1.transpose()).rowwise() + v.b1.transpose();
    const Mat h = detail::activate(arch_, pre);
    const Mat out = (h * v.W2.transpose()).rowwise() + v.b2.transpose();
    const Mat curv = loss_curvature(out, Yb);                          // N x out
    const Mat dact2 = detail::activate_deriv(arch_, pre).array().square().matrix();

    // u_{ij} = act'(pre_ij)^2 * sum_o curv_io W2_oj^2: curvature reaching unit j
    const Mat u = dact2.cwiseProduct(curv * v.W2.array().square().matrix());  // N x hidden

    double* p = hd.data();
    Eigen::Map<detail::RowMat>(p, arch_.hidden, arch_.in_dim) +=
        scale() * (u.transpose() * Xb.array().square().matrix());
    p += arch_.hidden * arch_.in_dim;
    Eigen::Map<Vec>(p, arch_.hidden) += scale() * u.colwise().sum().transpose();
    p += arch_.hidden;
    Eigen::Map<detail::RowMat>(p, arch_.out_dim, arch_.hidden) +=
        scale() * (curv.transpose() * h.array().square().matrix());
    p += arch_.out_dim * arch_.hidden;
    Eigen::Map<Vec>(p, arch_.out_dim) += scale() * curv.colwise().sum().transpose();
    return hd;
  }

  // Hutchinson estimate mean_p v_p .* (H v_p) with fixed Rademacher probes and
  // Hessian-vector products from central differences of the gradient.
  Vec hess_diag_hutchinson(const Vec& z) const {
    const double eps = opts_.hutchinson_step * (1.0 + z.cwiseAbs().maxCoeff());
    Vec est = Vec::Zero(dim());
    for (Eigen::Index r = 0; r < probes_.rows(); ++r) {
      const Vec v = probes_.row(r).transpose();
      const Vec hv = (grad(z + eps * v) - grad(z - eps * v)) / (2.0 * eps);
      est += v.cwiseProduct(hv);
    }
    return est / static_cast<double>(probes_.rows());
  }

  // Smallest |pre-activation| over the full data at z. Derivative checks use
  // this to stay away from the measure-zero ReLU kinks, where one-sided
  // derivatives disagree and finite differences are meaningless.
  double min_hidden_gap(const Vec& z) const {
    if (arch_.hidden == 0 || arch_.activation == MlpArchitecture::Activation::kIdentity)
      return std::numeric_limits<double>::infinity();
    const auto v = detail::map_weights(arch_, z);
    const Mat pre = (X_ * v.W1.transpose()).rowwise() + v.b1.transpose();
    return pre.cwiseAbs().minCoeff();
  }

  bool supports_minibatch() const override { return true; }

  void set_batch(const std::vector<int>& indices) override {
    if (indices.empty()) throw std::invalid_argument("set_batch: empty batch");
    for (int i : indices)
      if (i < 0 || i >= X_.rows())
        throw std::invalid_argument("set_batch: index " + std::to_string(i) + " out of range");
    batch_ = indices;
  }

  const MlpArchitecture& architecture() const { return arch_; }
  Task task() const { return task_; }
  bool uses_hutchinson() const { return opts_.hess_mode == HessMode::kHutchinson; }

 private:
  // d loss / d output for the active batch
  Mat loss_grad(const Mat& out, const Mat& Yb) const {
    if (task_ == Task::kRegression) return out - Yb;
    Mat d(out.rows(), 1);
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
      const double t = Yb(i, 0) * out(i, 0);
      d(i, 0) = -Yb(i, 0) * sigmoid(-t);
    }
    return d;
  }

  // d^2 loss / d output^2; constant 1 for squared error, p(1-p) for the logit
  Mat loss_curvature(const Mat& out, const Mat& Yb) const {
    if (task_ == Task::kRegression) return Mat::Ones(out.rows(), out.cols());
    Mat c(out.rows(), 1);
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
      const double p = sigmoid(out(i, 0));
      c(i, 0) = p * (1.0 - p);
    }
    return c;
  }

  static double sigmoid(double t) {
    return t >= 0.0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
  }

  double scale() const { return static_cast<double>(X_.rows()) / static_cast<double>(batch_.size()); }

  void gather(Mat& Xb, Mat& Yb) const {
    Xb.resize(static_cast<Eigen::Index>(batch_.size()), X_.cols());
    Yb.resize(static_cast<Eigen::Index>(batch_.size()), Y_.cols());
    for (size_t r = 0; r < batch_.size(); ++r) {
      Xb.row(static_cast<Eigen::Index>(r)) = X_.row(batch_[r]);
      Yb.row(static_cast<Eigen::Index>(r)) = Y_.row(batch_[r]);
    }
  }

  MlpArchitecture arch_;
  Mat X_;
  Mat Y_;
  Task task_;
  double reg_;
  Options opts_;
  std::vector<int> batch_;
  Mat probes_;
};

inline std::unique_ptr<TargetModel> make_bnn_target(MlpArchitecture arch, Mat X, Vec y,
                                                    BnnTarget::Task task, double reg,
                                                    BnnOptions opts = {}) {
  if (arch.out_dim != 1)
    throw std::invalid_argument("make_bnn_target: vector response needs out_dim == 1");
  return std::make_unique<BnnTarget>(arch, std::move(X), std::move(y), task, reg, opts);
}

}  // namespace flowvi
