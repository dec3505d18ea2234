#pragma once

// Differentiable per-device losses f_{i,j}: an isotropic quadratic (the
// closed-form oracle problem), multi-class logistic regression and a
// two-hidden-layer ReLU network. All models are stateless after construction
// and safe to evaluate from many threads at once.

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

namespace permfl {

/// Flat parameter vector shared by x, w_i and theta_{i,j}.
using ParamVector = Eigen::VectorXd;
using FeatureMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using SparseFeatures = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// Throws NumericError naming `what` if any entry of v is NaN/Inf.
void require_finite(const ParamVector& v, std::string_view what);

/// Local data of one device. Immutable once built; a sparse copy of the
/// features is kept when most entries are zero (MNIST pixels) to speed up
/// linear models.
class Batch {
 public:
  Batch() = default;
  Batch(FeatureMatrix features, std::vector<int> labels, int n_classes);

  const FeatureMatrix& features() const noexcept { return features_; }
  std::span<const int> labels() const noexcept { return labels_; }
  int n_classes() const noexcept { return n_classes_; }
  Eigen::Index size() const noexcept { return features_.rows(); }
  Eigen::Index n_features() const noexcept { return features_.cols(); }
  bool empty() const noexcept { return features_.rows() == 0; }
  const SparseFeatures* sparse() const noexcept { return sparse_ ? sparse_.get() : nullptr; }

 private:
  FeatureMatrix features_;
  std::vector<int> labels_;
  int n_classes_ = 0;
  std::shared_ptr<const SparseFeatures> sparse_;
};

class LossModel {
 public:
  virtual ~LossModel() = default;

  virtual std::string_view kind() const noexcept = 0;
  virtual Eigen::Index dim() const noexcept = 0;

  /// Mean per-sample loss plus any l2 term.
  virtual double loss(const ParamVector& theta, const Batch& data) const = 0;

  /// Writes the analytic gradient into `out` (resized if needed).
  virtual void grad_into(const ParamVector& theta, const Batch& data, ParamVector& out) const = 0;

  ParamVector grad(const ParamVector& theta, const Batch& data) const {
    ParamVector out(dim());
    grad_into(theta, data, out);
    return out;
  }

  /// Class ids by argmax of scores, ties to the lowest index.
  virtual std::vector<int> predict(const ParamVector& theta, const FeatureMatrix& features) const;

  virtual bool has_classifier() const noexcept { return false; }

 protected:
  void check_dim(const ParamVector& theta) const;
  void check_batch(const Batch& data, Eigen::Index n_features, int n_classes) const;
};

// -- quadratic ---------------------------------------------------------------

/// f(theta) = (a/2) * ||theta - c||^2. Ignores device data.
struct QuadraticSpec {
  ParamVector center;
  double curvature = 1.0;
};

class QuadraticModel final : public LossModel {
 public:
  explicit QuadraticModel(QuadraticSpec spec);

  std::string_view kind() const noexcept override { return "quadratic"; }
  Eigen::Index dim() const noexcept override { return spec_.center.size(); }
  double loss(const ParamVector& theta, const Batch& data) const override;
  void grad_into(const ParamVector& theta, const Batch& data, ParamVector& out) const override;

  const QuadraticSpec& spec() const noexcept { return spec_; }

 private:
  QuadraticSpec spec_;
};

// -- multi-class logistic regression -----------------------------------------

struct MclrSpec {
  int n_features = 0;
  int n_classes = 0;
  double l2_strength = 1e-4;

  Eigen::Index dim() const noexcept {
    return static_cast<Eigen::Index>(n_classes) * (n_features + 1);
  }
};

/// Softmax regression. Parameters are class-major: for class k the slice
/// [k*(F+1), k*(F+1)+F) holds its weights and index k*(F+1)+F its bias.
class MclrModel final : public LossModel {
 public:
  explicit MclrModel(MclrSpec spec);

  std::string_view kind() const noexcept override { return "mclr"; }
  Eigen::Index dim() const noexcept override { return spec_.dim(); }
  double loss(const ParamVector& theta, const Batch& data) const override;
  void grad_into(const ParamVector& theta, const Batch& data, ParamVector& out) const override;
  std::vector<int> predict(const ParamVector& theta, const FeatureMatrix& features) const override;
  bool has_classifier() const noexcept override { return true; }

  const MclrSpec& spec() const noexcept { return spec_; }

 private:
  Eigen::MatrixXd scores(const ParamVector& theta, const FeatureMatrix& x,
                         const SparseFeatures* sparse) const;
  MclrSpec spec_;
};

// -- two-hidden-layer perceptron ---------------------------------------------

struct MlpSpec {
  /// {n_features, h1, h2, n_classes}
  std::array<int, 4> widths{60, 64, 32, 10};
  double l2_strength = 0.0;

  Eigen::Index dim() const noexcept;
};

/// ReLU hidden layers, softmax output. Layout: W1 (h1 x F, row-major), b1,
/// W2 (h2 x h1), b2, W3 (C x h2), b3.
class MlpModel final : public LossModel {
 public:
  explicit MlpModel(MlpSpec spec);

  std::string_view kind() const noexcept override { return "mlp"; }
  Eigen::Index dim() const noexcept override { return spec_.dim(); }
  double loss(const ParamVector& theta, const Batch& data) const override;
  void grad_into(const ParamVector& theta, const Batch& data, ParamVector& out) const override;
  std::vector<int> predict(const ParamVector& theta, const FeatureMatrix& features) const override;
  bool has_classifier() const noexcept override { return true; }

  const MlpSpec& spec() const noexcept { return spec_; }

  /// Glorot-uniform weights with zero biases.
  ParamVector initial_params(std::uint64_t seed) const;

 private:
  MlpSpec spec_;
};

/// Central differences (loss(theta + h e_k) - loss(theta - h e_k)) / 2h.
ParamVector finite_diff_grad(const LossModel& model, const ParamVector& theta, const Batch& data,
                             double h);


}  // namespace permfl
