#pragma once

/// Fully connected classifier with two ReLU hidden layers and a softmax
/// output. A bias is carried by the input layer only: every input row gets
/// a trailing constant 1 feature, and the hidden layers have no bias.
///
/// Flat weight layout (each block row-major, rows = receiving units):
///   [ W_in  : h1 x (n_features + 1) ]  last column is the bias
///   [ W_mid : h2 x h1 ]
///   [ W_out : n_classes x h2 ]

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bnnprior/error.hpp"

namespace bnnprior {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstRowMap = Eigen::Map<const RowMatrix>;
using RowMap = Eigen::Map<RowMatrix>;

/// Floor applied to class probabilities before taking logs.
inline constexpr double kProbabilityFloor = 1e-300;

struct NetworkArchitecture {
  std::size_t n_features = 0;
  std::array<std::size_t, 2> hidden{0, 0};
  std::size_t n_classes = 0;

  std::size_t inputWidth() const noexcept { return n_features + 1; }

  std::size_t inputBlockSize() const noexcept { return inputWidth() * hidden[0]; }
  std::size_t middleBlockSize() const noexcept { return hidden[0] * hidden[1]; }
  std::size_t outputBlockSize() const noexcept { return hidden[1] * n_classes; }

  std::size_t weightCount() const noexcept {
    return inputBlockSize() + middleBlockSize() + outputBlockSize();
  }

  void validate() const {
    if (n_features < 1 || hidden[0] < 1 || hidden[1] < 1)
      throw InvalidInput("architecture: all layer sizes must be >= 1");
    if (n_classes < 2) throw InvalidInput("architecture: n_classes must be >= 2");
  }

  bool operator==(const NetworkArchitecture&) const = default;
};

class WeightVector {
 public:
  WeightVector() = default;
  explicit WeightVector(std::size_t n, double fill = 0.0) : values_(n, fill) {}
  explicit WeightVector(std::vector<double> values) : values_(std::move(values)) {}

  std::size_t size() const noexcept { return values_.size(); }
  double* data() noexcept { return values_.data(); }
  const double* data() const noexcept { return values_.data(); }
  double& operator[](std::size_t i) noexcept { return values_[i]; }
  double operator[](std::size_t i) const noexcept { return values_[i]; }
  auto begin() noexcept { return values_.begin(); }
  auto end() noexcept { return values_.end(); }
  auto begin() const noexcept { return values_.begin(); }
  auto end() const noexcept { return values_.end(); }

  std::span<double> span() noexcept { return values_; }
  std::span<const double> span() const noexcept { return values_; }
  const std::vector<double>& values() const noexcept { return values_; }

  bool operator==(const WeightVector&) const = default;

 private:
  std::vector<double> values_;
};

struct LabeledInstance {
  std::vector<double> features;
  int label = 0;
};

inline void checkWeights(const NetworkArchitecture& arch, std::span<const double> w) {
  if (w.size() != arch.weightCount())
    throw InvalidInput("weight vector has " + std::to_string(w.size()) + " entries, architecture needs " +
                       std::to_string(arch.weightCount()));
}

/// Read-only per-layer views into a flat weight vector.
struct LayerViews {
  ConstRowMap input;
  ConstRowMap middle;
  ConstRowMap output;
};

inline LayerViews unpack(const NetworkArchitecture& arch, std::span<const double> w) {
  checkWeights(arch, w);
  const double* p = w.data();
  const auto h1 = static_cast<Eigen::Index>(arch.hidden[0]);
  const auto h2 = static_cast<Eigen::Index>(arch.hidden[1]);
  const auto in = static_cast<Eigen::Index>(arch.inputWidth());
  const auto c = static_cast<Eigen::Index>(arch.n_classes);
  return LayerViews{ConstRowMap(p, h1, in), ConstRowMap(p + arch.inputBlockSize(), h2, h1),
                    ConstRowMap(p + arch.inputBlockSize() + arch.middleBlockSize(), c, h2)};
}

/// Inverse of unpack.
inline WeightVector pack(const NetworkArchitecture& arch, const RowMatrix& input, const RowMatrix& middle,
                         const RowMatrix& output) {
  const auto h1 = static_cast<Eigen::Index>(arch.hidden[0]);
  const auto h2 = static_cast<Eigen::Index>(arch.hidden[1]);
  if (input.rows() != h1 || input.cols() != static_cast<Eigen::Index>(arch.inputWidth()) ||
      middle.rows() != h2 || middle.cols() != h1 ||
      output.rows() != static_cast<Eigen::Index>(arch.n_classes) || output.cols() != h2)
    throw InvalidInput("pack: layer matrix shapes do not match architecture");
  WeightVector w(arch.weightCount());
  double* p = w.data();
  std::copy(input.data(), input.data() + input.size(), p);
  p += input.size();
  std::copy(middle.data(), middle.data() + middle.size(), p);
  p += middle.size();
  std::copy(output.data(), output.data() + output.size(), p);
  return w;
}

/// Inputs with the bias column appended, plus labels. Built once per dataset
/// so the sampler's hot loop is three matrix products.
struct Batch {
  RowMatrix inputs;  // N x (n_features + 1)
  std::vector<int> labels;

  std::size_t size() const noexcept { return static_cast<std::size_t>(inputs.rows()); }
  std::size_t featureCount() const noexcept {
    return inputs.cols() > 0 ? static_cast<std::size_t>(inputs.cols() - 1) : 0;
  }
};

inline Batch makeBatch(const RowMatrix& features, std::vector<int> labels = {}) {
  if (!labels.empty() && labels.size() != static_cast<std::size_t>(features.rows()))
    throw InvalidInput("makeBatch: label count does not match row count");
  Batch b;
  b.inputs.resize(features.rows(), features.cols() + 1);
  b.inputs.leftCols(features.cols()) = features;
  b.inputs.col(features.cols()).setOnes();
  b.labels = std::move(labels);
  return b;
}

inline Batch makeBatch(std::span<const LabeledInstance> data) {
  if (data.empty()) return Batch{};
  const auto f = static_cast<Eigen::Index>(data.front().features.size());
  RowMatrix x(static_cast<Eigen::Index>(data.size()), f);
  std::vector<int> labels;
  labels.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (static_cast<Eigen::Index>(data[i].features.size()) != f)
      throw InvalidInput("makeBatch: ragged feature vectors");
    x.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(data[i].features.data(), f);
    labels.push_back(data[i].label);
  }
  return makeBatch(x, std::move(labels));
}

/// Output-layer logits for every row of `batch`.
inline RowMatrix logits(const NetworkArchitecture& arch, std::span<const double> w, const Batch& batch) {
  if (batch.featureCount() != arch.n_features)
    throw InvalidInput("input has " + std::to_string(batch.featureCount()) + " features, architecture expects " +
                       std::to_string(arch.n_features));
  const LayerViews layers = unpack(arch, w);
  RowMatrix h1 = (batch.inputs * layers.input.transpose()).cwiseMax(0.0);
  RowMatrix h2 = (h1 * layers.middle.transpose()).cwiseMax(0.0);
  return h2 * layers.output.transpose();
}

/// Row-wise softmax, max-subtracted.
inline void softmaxRowsInPlace(RowMatrix& z) {
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    auto row = z.row(i);
    row.array() -= row.maxCoeff();
    row = row.array().exp().matrix();
    row /= row.sum();
  }
}

inline RowMatrix forwardBatch(const NetworkArchitecture& arch, std::span<const double> w, const Batch& batch) {
  RowMatrix z = logits(arch, w, batch);
  softmaxRowsInPlace(z);
  return z;
}

inline std::vector<double> forward(const NetworkArchitecture& arch, std::span<const double> w,
                                   std::span<const double> x) {
  if (x.size() != arch.n_features)
    throw InvalidInput("forward: feature vector has " + std::to_string(x.size()) + " entries, expected " +
                       std::to_string(arch.n_features));
  for (double v : x)
    if (!std::isfinite(v)) throw InvalidInput("forward: non-finite feature");
  RowMatrix row(1, static_cast<Eigen::Index>(x.size()));
  std::copy(x.begin(), x.end(), row.data());
  const RowMatrix p = forwardBatch(arch, w, makeBatch(row));
  return {p.data(), p.data() + p.size()};
}

/// Scratch buffers for the likelihood; reusing one avoids per-call allocation.
/// Column-major: the products here have tiny inner dimensions, where that
/// layout is markedly faster.
struct ForwardWorkspace {
  Eigen::MatrixXd pre1;
  Eigen::MatrixXd h1;
  Eigen::MatrixXd h2;
  Eigen::MatrixXd z;
  Eigen::VectorXd row_max;
  Eigen::VectorXd lse;
};

namespace detail {

/// Log likelihood given the first-layer pre-activations X * W_in^T.
template <typename Derived>
double logLikelihoodFromPreactivation(const LayerViews& layers, const Eigen::MatrixBase<Derived>& pre1,
                                      std::span<const int> labels, std::size_t n_classes, ForwardWorkspace& ws) {
  ws.h1 = pre1.cwiseMax(0.0);
  ws.h2.noalias() = ws.h1 * layers.middle.transpose();
  ws.h2 = ws.h2.cwiseMax(0.0);
  ws.z.noalias() = ws.h2 * layers.output.transpose();
  ws.row_max = ws.z.rowwise().maxCoeff();
  const double floor = std::log(kProbabilityFloor);
  ws.z.colwise() -= ws.row_max;
  ws.lse = ws.z.array().exp().rowwise().sum().log().matrix();
  const Eigen::MatrixXd& z = ws.z;
  const Eigen::VectorXd& lse = ws.lse;
  double total = 0.0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || static_cast<std::size_t>(y) >= n_classes)
      throw InvalidInput("logLikelihood: label " + std::to_string(y) + " out of range");
    total += std::max(z(i, y) - lse(i), floor);
  }
  return total;
}

}  // namespace detail

/// Sum over rows of log P(label | x). Each log-probability is floored at
/// log(kProbabilityFloor) so the result is always finite.
inline double logLikelihood(const NetworkArchitecture& arch, std::span<const double> w, const Batch& data,
                            ForwardWorkspace& ws) {
  if (data.size() == 0) throw InvalidInput("logLikelihood: empty dataset");
  if (data.labels.size() != data.size()) throw InvalidInput("logLikelihood: dataset has no labels");
  if (data.featureCount() != arch.n_features)
    throw InvalidInput("input has " + std::to_string(data.featureCount()) + " features, architecture expects " +
                       std::to_string(arch.n_features));
  const LayerViews layers = unpack(arch, w);
  ws.pre1.noalias() = data.inputs * layers.input.transpose();
  return detail::logLikelihoodFromPreactivation(layers, ws.pre1, data.labels, arch.n_classes, ws);
}

inline double logLikelihood(const NetworkArchitecture& arch, std::span<const double> w, const Batch& data) {
  ForwardWorkspace ws;
  return logLikelihood(arch, w, data, ws);
}

inline double logLikelihood(const NetworkArchitecture& arch, std::span<const double> w,
                            std::span<const LabeledInstance> data) {
  if (data.empty()) throw InvalidInput("logLikelihood: empty dataset");
  return logLikelihood(arch, w, makeBatch(data));
}

/// Index of the largest entry; ties go to the lowest index.
inline std::size_t predictClass(std::span<const double> probs) {
  if (probs.empty()) throw InvalidInput("predictClass: empty probability vector");
  std::size_t best = 0;
  for (std::size_t k = 1; k < probs.size(); ++k)
    if (probs[k] > probs[best]) best = k;
  return best;
}

}  // namespace bnnprior
