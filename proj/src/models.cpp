#include "permfl/models.hpp"

#include <cmath>
#include <string>

#include "permfl/error.hpp"
#include "permfl/rng.hpp"

namespace permfl {
namespace {

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Row-wise softmax in place; returns per-row log-sum-exp.
Eigen::VectorXd softmax_rows(Eigen::MatrixXd& z) {
  Eigen::VectorXd lse(z.rows());
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const double m = z.row(r).maxCoeff();
    z.row(r).array() = (z.row(r).array() - m).exp();
    const double s = z.row(r).sum();
    z.row(r) /= s;
    lse(r) = m + std::log(s);
  }
  return lse;
}

// Mean cross-entropy given raw scores; reports the first non-finite sample.
double cross_entropy(const Eigen::MatrixXd& scores, std::span<const int> labels) {
  double total = 0.0;
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    const double m = scores.row(r).maxCoeff();
    const double lse = m + std::log((scores.row(r).array() - m).exp().sum());
    const double li = lse - scores(r, labels[static_cast<std::size_t>(r)]);
    if (!std::isfinite(li))
      throw NumericError("non-finite loss at sample index " + std::to_string(r));
    total += li;
  }
  return total / static_cast<double>(scores.rows());
}

std::vector<int> argmax_rows(const Eigen::MatrixXd& scores) {
  std::vector<int> out(static_cast<std::size_t>(scores.rows()));
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < scores.cols(); ++k)
      if (scores(r, k) > scores(r, best)) best = k;
    out[static_cast<std::size_t>(r)] = static_cast<int>(best);
  }
  return out;
}

// (softmax(scores) - onehot(labels)) / n, overwriting scores.
void softmax_residual(Eigen::MatrixXd& scores, std::span<const int> labels) {
  softmax_rows(scores);
  for (Eigen::Index r = 0; r < scores.rows(); ++r) scores(r, labels[static_cast<std::size_t>(r)]) -= 1.0;
  scores /= static_cast<double>(scores.rows());
}

template <int C>
void sparse_scores(const SparseFeatures& x, const RowMajorMatrix& wt, const Eigen::RowVectorXd& bias,
                   Eigen::MatrixXd& z) {
  using Row = Eigen::Matrix<double, 1, C>;
  const auto c = wt.cols();
  Row acc(c);
  for (Eigen::Index r = 0; r < x.outerSize(); ++r) {
    acc = bias;
    for (SparseFeatures::InnerIterator it(x, r); it; ++it)
      acc += it.value() * Eigen::Map<const Row>(wt.data() + it.index() * c, c);
    z.row(r) = acc;
  }
}

template <int C>
void sparse_grad(const SparseFeatures& x, const Eigen::MatrixXd& residual, RowMajorMatrix& gt) {
  using Row = Eigen::Matrix<double, 1, C>;
  const auto c = gt.cols();
  Row res(c);
  for (Eigen::Index r = 0; r < x.outerSize(); ++r) {
    res = residual.row(r);
    for (SparseFeatures::InnerIterator it(x, r); it; ++it)
      Eigen::Map<Row>(gt.data() + it.index() * c, c) += it.value() * res;
  }
}

}  // namespace

void require_finite(const ParamVector& v, std::string_view what) {
  if (!v.allFinite()) throw NumericError("non-finite values in " + std::string(what));
}

// -- Batch -------------------------------------------------------------------

Batch::Batch(FeatureMatrix features, std::vector<int> labels, int n_classes)
    : features_(std::move(features)), labels_(std::move(labels)), n_classes_(n_classes) {
  if (static_cast<std::size_t>(features_.rows()) != labels_.size())
    throw ConfigError("batch has " + std::to_string(features_.rows()) + " rows but " +
                      std::to_string(labels_.size()) + " labels");
  if (n_classes_ < 1) throw ConfigError("batch needs at least one class");
  for (std::size_t i = 0; i < labels_.size(); ++i)
    if (labels_[i] < 0 || labels_[i] >= n_classes_)
      throw ConfigError("label " + std::to_string(labels_[i]) + " at sample " + std::to_string(i) +
                        " outside [0, " + std::to_string(n_classes_) + ")");
  if (features_.size() > 0) {
    const auto nnz = (features_.array() != 0.0).count();
    if (nnz * 3 < features_.size()) {
      auto sp = std::make_shared<SparseFeatures>(features_.sparseView());
      sp->makeCompressed();
      sparse_ = std::move(sp);
    }
  }
}

// -- LossModel ---------------------------------------------------------------

std::vector<int> LossModel::predict(const ParamVector&, const FeatureMatrix&) const {
  throw UnsupportedError(std::string(kind()) + " model has no classifier head");
}

void LossModel::check_dim(const ParamVector& theta) const {
  if (theta.size() != dim())
    throw ConfigError(std::string(kind()) + ": parameter dim " + std::to_string(theta.size()) +
                      " does not match model dim " + std::to_string(dim()));
}

void LossModel::check_batch(const Batch& data, Eigen::Index n_features, int n_classes) const {
  if (data.empty()) throw ConfigError(std::string(kind()) + ": empty batch");
  if (data.n_features() != n_features)
    throw ConfigError(std::string(kind()) + ": batch has " + std::to_string(data.n_features()) +
                      " features, model expects " + std::to_string(n_features));
  if (data.n_classes() > n_classes)
    throw ConfigError(std::string(kind()) + ": batch has " + std::to_string(data.n_classes()) +
                      " classes, model expects " + std::to_string(n_classes));
}

// -- QuadraticModel ----------------------------------------------------------

QuadraticModel::QuadraticModel(QuadraticSpec spec) : spec_(std::move(spec)) {
  if (!(spec_.curvature > 0.0)) throw ConfigError("quadratic curvature must be positive");
  if (spec_.center.size() == 0) throw ConfigError("quadratic center must be non-empty");
  require_finite(spec_.center, "quadratic center");
}

double QuadraticModel::loss(const ParamVector& theta, const Batch&) const {
  check_dim(theta);
  const double v = 0.5 * spec_.curvature * (theta - spec_.center).squaredNorm();
  if (!std::isfinite(v)) throw NumericError("non-finite quadratic loss");
  return v;
}

void QuadraticModel::grad_into(const ParamVector& theta, const Batch&, ParamVector& out) const {
  check_dim(theta);
  out.resize(dim());
  out.noalias() = spec_.curvature * (theta - spec_.center);
}

// -- MclrModel ---------------------------------------------------------------

MclrModel::MclrModel(MclrSpec spec) : spec_(spec) {
  if (spec_.n_features < 1 || spec_.n_classes < 2)
    throw ConfigError("mclr needs n_features >= 1 and n_classes >= 2");
  if (spec_.l2_strength < 0.0) throw ConfigError("mclr l2 strength must be non-negative");
}

Eigen::MatrixXd MclrModel::scores(const ParamVector& theta, const FeatureMatrix& x,
                                  const SparseFeatures* sparse) const {
  const Eigen::Index f = spec_.n_features;
  Eigen::Map<const RowMajorMatrix> wb(theta.data(), spec_.n_classes, f + 1);
  Eigen::MatrixXd z(x.rows(), spec_.n_classes);
  if (sparse) {
    // Feature-major copy of the weights so each nonzero touches one contiguous run of classes.
    thread_local RowMajorMatrix wt;
    wt = wb.leftCols(f).transpose();
    const Eigen::RowVectorXd bias = wb.col(f).transpose();
    if (spec_.n_classes == 10)
      sparse_scores<10>(*sparse, wt, bias, z);
    else
      sparse_scores<Eigen::Dynamic>(*sparse, wt, bias, z);
    return z;
  }
  z.noalias() = x * wb.leftCols(f).transpose();
  z.rowwise() += wb.col(f).transpose();
  return z;
}

double MclrModel::loss(const ParamVector& theta, const Batch& data) const {
  check_dim(theta);
  check_batch(data, spec_.n_features, spec_.n_classes);
  const auto z = scores(theta, data.features(), data.sparse());
  return cross_entropy(z, data.labels()) + 0.5 * spec_.l2_strength * theta.squaredNorm();
}

void MclrModel::grad_into(const ParamVector& theta, const Batch& data, ParamVector& out) const {
  check_dim(theta);
  check_batch(data, spec_.n_features, spec_.n_classes);
  const Eigen::Index f = spec_.n_features;
  auto z = scores(theta, data.features(), data.sparse());
  softmax_residual(z, data.labels());

  out.resize(dim());
  Eigen::Map<RowMajorMatrix> g(out.data(), spec_.n_classes, f + 1);
  if (const auto* sp = data.sparse()) {
    thread_local RowMajorMatrix gt;
    gt.setZero(f, spec_.n_classes);
    if (spec_.n_classes == 10)
      sparse_grad<10>(*sp, z, gt);
    else
      sparse_grad<Eigen::Dynamic>(*sp, z, gt);
    g.leftCols(f) = gt.transpose();
  } else
    g.leftCols(f).noalias() = z.transpose() * data.features();
  g.col(f) = z.colwise().sum().transpose();
  if (spec_.l2_strength != 0.0) out += spec_.l2_strength * theta;
}

std::vector<int> MclrModel::predict(const ParamVector& theta, const FeatureMatrix& features) const {
  check_dim(theta);
  if (features.cols() != spec_.n_features) throw ConfigError("mclr: feature count mismatch");
  return argmax_rows(scores(theta, features, nullptr));
}

// -- MlpModel ----------------------------------------------------------------

Eigen::Index MlpSpec::dim() const noexcept {
  Eigen::Index d = 0;
  for (std::size_t l = 1; l < widths.size(); ++l)
    d += static_cast<Eigen::Index>(widths[l]) * (widths[l - 1] + 1);
  return d;
}

namespace {

struct MlpLayer {
  Eigen::Map<const RowMajorMatrix> w;
  Eigen::Map<const Eigen::VectorXd> b;
};

// Views of the three (W, b) pairs inside a flat parameter vector.
template <class Scalar, class MapMatrix, class MapVector>
std::array<std::pair<MapMatrix, MapVector>, 3> layers_of(Scalar* base, const std::array<int, 4>& w) {
  Eigen::Index off = 0;
  auto take = [&](int rows, int cols) {
    MapMatrix m(base + off, rows, cols);
    off += static_cast<Eigen::Index>(rows) * cols;
    MapVector v(base + off, rows);
    off += rows;
    return std::pair<MapMatrix, MapVector>(m, v);
  };
  auto l1 = take(w[1], w[0]);
  auto l2 = take(w[2], w[1]);
  auto l3 = take(w[3], w[2]);
  return {l1, l2, l3};
}

using ConstLayers = std::array<std::pair<Eigen::Map<const RowMajorMatrix>, Eigen::Map<const Eigen::VectorXd>>, 3>;
using MutLayers = std::array<std::pair<Eigen::Map<RowMajorMatrix>, Eigen::Map<Eigen::VectorXd>>, 3>;

ConstLayers const_layers(const ParamVector& theta, const std::array<int, 4>& w) {
  return layers_of<const double, Eigen::Map<const RowMajorMatrix>, Eigen::Map<const Eigen::VectorXd>>(
      theta.data(), w);
}

MutLayers mut_layers(ParamVector& theta, const std::array<int, 4>& w) {
  return layers_of<double, Eigen::Map<RowMajorMatrix>, Eigen::Map<Eigen::VectorXd>>(theta.data(), w);
}

struct MlpForward {
  Eigen::MatrixXd z1, a1, z2, a2, z3;
};

MlpForward mlp_forward(const ConstLayers& layers, const FeatureMatrix& x) {
  MlpForward fw;
  fw.z1.noalias() = x * layers[0].first.transpose();
  fw.z1.rowwise() += layers[0].second.transpose();
  fw.a1 = fw.z1.cwiseMax(0.0);
  fw.z2.noalias() = fw.a1 * layers[1].first.transpose();
  fw.z2.rowwise() += layers[1].second.transpose();
  fw.a2 = fw.z2.cwiseMax(0.0);
  fw.z3.noalias() = fw.a2 * layers[2].first.transpose();
  fw.z3.rowwise() += layers[2].second.transpose();
  return fw;
}

}  // namespace

MlpModel::MlpModel(MlpSpec spec) : spec_(spec) {
  for (int w : spec_.widths)
    if (w < 1) throw ConfigError("mlp layer widths must be positive");
  if (spec_.widths[3] < 2) throw ConfigError("mlp needs at least two classes");
  if (spec_.l2_strength < 0.0) throw ConfigError("mlp l2 strength must be non-negative");
}

double MlpModel::loss(const ParamVector& theta, const Batch& data) const {
  check_dim(theta);
  check_batch(data, spec_.widths[0], spec_.widths[3]);
  const auto fw = mlp_forward(const_layers(theta, spec_.widths), data.features());
  return cross_entropy(fw.z3, data.labels()) + 0.5 * spec_.l2_strength * theta.squaredNorm();
}

void MlpModel::grad_into(const ParamVector& theta, const Batch& data, ParamVector& out) const {
  check_dim(theta);
  check_batch(data, spec_.widths[0], spec_.widths[3]);
  const auto layers = const_layers(theta, spec_.widths);
  auto fw = mlp_forward(layers, data.features());

  out.resize(dim());
  auto grads = mut_layers(out, spec_.widths);

  Eigen::MatrixXd d3 = std::move(fw.z3);
  softmax_residual(d3, data.labels());
  grads[2].first.noalias() = d3.transpose() * fw.a2;
  grads[2].second = d3.colwise().sum().transpose();

  Eigen::MatrixXd d2 = (d3 * layers[2].first).cwiseProduct((fw.z2.array() > 0.0).cast<double>().matrix());
  grads[1].first.noalias() = d2.transpose() * fw.a1;
  grads[1].second = d2.colwise().sum().transpose();

  Eigen::MatrixXd d1 = (d2 * layers[1].first).cwiseProduct((fw.z1.array() > 0.0).cast<double>().matrix());
  grads[0].first.noalias() = d1.transpose() * data.features();
  grads[0].second = d1.colwise().sum().transpose();

  if (spec_.l2_strength != 0.0) out += spec_.l2_strength * theta;
}

std::vector<int> MlpModel::predict(const ParamVector& theta, const FeatureMatrix& features) const {
  check_dim(theta);
  if (features.cols() != spec_.widths[0]) throw ConfigError("mlp: feature count mismatch");
  return argmax_rows(mlp_forward(const_layers(theta, spec_.widths), features).z3);
}

ParamVector MlpModel::initial_params(std::uint64_t seed) const {
  ParamVector theta = ParamVector::Zero(dim());
  auto layers = mut_layers(theta, spec_.widths);
  Rng rng(seed, "mlp-init");
  for (std::size_t l = 0; l < 3; ++l) {
    const double fan_in = spec_.widths[l];
    const double fan_out = spec_.widths[l + 1];
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    auto& w = layers[l].first;
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = limit * (2.0 * rng.uniform() - 1.0);
  }
  return theta;
}

// -- finite differences ------------------------------------------------------

ParamVector finite_diff_grad(const LossModel& model, const ParamVector& theta, const Batch& data,
                             double h) {
  if (!(h > 0.0)) throw ConfigError("finite-difference step must be positive");
  ParamVector probe = theta;
  ParamVector out(theta.size());
  for (Eigen::Index k = 0; k < theta.size(); ++k) {
    probe(k) = theta(k) + h;
    const double up = model.loss(probe, data);
    probe(k) = theta(k) - h;
    const double down = model.loss(probe, data);
    probe(k) = theta(k);
    out(k) = (up - down) / (2.0 * h);
  }
  return out;
}

}  // namespace permfl
