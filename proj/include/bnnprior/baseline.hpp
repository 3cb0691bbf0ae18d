#pragma once

/// Point-estimate network trained by Adam on cross-entropy with dropout on
/// both hidden layers, and MC-dropout prediction support.
///
/// Dropout is inverted: kept units are scaled by 1/(1-p) at train time, so
/// deterministic inference uses the weights unchanged.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "bnnprior/error.hpp"
#include "bnnprior/network.hpp"
#include "bnnprior/random.hpp"

namespace bnnprior {

struct BaselineConfig {
  double dropout_rate = 0.2;
  double learning_rate = 1e-3;
  std::size_t max_epochs = 200;
  std::size_t batch_size = 32;
  double validation_fraction = 0.2;
  std::size_t mc_samples = 1000;
  double support_threshold = 0.95;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("baseline: dropout_rate must be in [0, 1)");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("baseline: learning_rate must be > 0");
    if (batch_size == 0) throw ConfigError("baseline: batch_size must be >= 1");
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
      throw ConfigError("baseline: validation_fraction must be in [0, 1)");
    if (mc_samples == 0) throw ConfigError("baseline: mc_samples must be >= 1");
    if (!(support_threshold > 0.0 && support_threshold < 1.0))
      throw ConfigError("baseline: support_threshold must be in (0, 1)");
  }
};

/// Per-row multipliers for the two hidden layers: 0 for dropped units,
/// 1/(1-p) for kept ones.
struct DropoutMasks {
  RowMatrix hidden1;
  RowMatrix hidden2;
};

inline DropoutMasks sampleMasks(const NetworkArchitecture& arch, std::size_t rows, double p, Rng& rng) {
  const double keep = 1.0 / (1.0 - p);
  DropoutMasks m;
  m.hidden1.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(arch.hidden[0]));
  m.hidden2.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(arch.hidden[1]));
  for (Eigen::Index i = 0; i < m.hidden1.size(); ++i) m.hidden1.data()[i] = uniform01(rng) < p ? 0.0 : keep;
  for (Eigen::Index i = 0; i < m.hidden2.size(); ++i) m.hidden2.data()[i] = uniform01(rng) < p ? 0.0 : keep;
  return m;
}

/// Intermediate activations kept for backpropagation.
struct DropoutForward {
  RowMatrix pre1, a1, pre2, a2, probs;
};

/// Forward pass over a batch; `masks == nullptr` is the deterministic network.
inline DropoutForward forwardDropout(const NetworkArchitecture& arch, std::span<const double> w, const Batch& batch,
                                     const DropoutMasks* masks) {
  if (batch.featureCount() != arch.n_features) throw InvalidInput("forwardDropout: feature count mismatch");
  const LayerViews layers = unpack(arch, w);
  DropoutForward f;
  f.pre1 = batch.inputs * layers.input.transpose();
  f.a1 = f.pre1.cwiseMax(0.0);
  if (masks) f.a1 = f.a1.cwiseProduct(masks->hidden1);
  f.pre2 = f.a1 * layers.middle.transpose();
  f.a2 = f.pre2.cwiseMax(0.0);
  if (masks) f.a2 = f.a2.cwiseProduct(masks->hidden2);
  f.probs = f.a2 * layers.output.transpose();
  softmaxRowsInPlace(f.probs);
  return f;
}

/// Single-instance forward. In train mode units are dropped with `p` using `rng`.
inline std::vector<double> forwardDropout(const NetworkArchitecture& arch, std::span<const double> w,
                                          std::span<const double> x, double p, Rng& rng, bool train_mode) {
  if (x.size() != arch.n_features) throw InvalidInput("forwardDropout: feature vector length mismatch");
  RowMatrix row(1, static_cast<Eigen::Index>(x.size()));
  std::copy(x.begin(), x.end(), row.data());
  const Batch b = makeBatch(row);
  DropoutMasks m;
  if (train_mode) m = sampleMasks(arch, 1, p, rng);
  const DropoutForward f = forwardDropout(arch, w, b, train_mode ? &m : nullptr);
  return {f.probs.data(), f.probs.data() + f.probs.size()};
}

/// Mean cross-entropy, computed with a stable log-sum-exp.
inline double crossEntropy(const NetworkArchitecture& arch, std::span<const double> w, const Batch& batch,
                           const DropoutMasks* masks = nullptr) {
  if (batch.size() == 0) throw InvalidInput("crossEntropy: empty batch");
  if (batch.labels.size() != batch.size()) throw InvalidInput("crossEntropy: batch has no labels");
  const LayerViews layers = unpack(arch, w);
  RowMatrix a1 = (batch.inputs * layers.input.transpose()).cwiseMax(0.0);
  if (masks) a1 = a1.cwiseProduct(masks->hidden1);
  RowMatrix a2 = (a1 * layers.middle.transpose()).cwiseMax(0.0);
  if (masks) a2 = a2.cwiseProduct(masks->hidden2);
  const RowMatrix z = a2 * layers.output.transpose();
  double total = 0.0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double m = z.row(i).maxCoeff();
    const double lse = m + std::log((z.row(i).array() - m).exp().sum());
    total += lse - z(i, batch.labels[static_cast<std::size_t>(i)]);
  }
  return total / static_cast<double>(z.rows());
}

/// Exact gradient of the mean cross-entropy under fixed masks, in weight-vector layout.
inline WeightVector gradients(const NetworkArchitecture& arch, std::span<const double> w, const Batch& batch,
                              const DropoutMasks* masks = nullptr) {
  if (batch.size() == 0) throw InvalidInput("gradients: empty batch");
  if (batch.labels.size() != batch.size()) throw InvalidInput("gradients: batch has no labels");
  const LayerViews layers = unpack(arch, w);
  const DropoutForward f = forwardDropout(arch, w, batch, masks);
  const auto n = static_cast<double>(batch.size());

  RowMatrix dz = f.probs;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const int y = batch.labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= arch.n_classes) throw InvalidInput("gradients: label out of range");
    dz(static_cast<Eigen::Index>(i), y) -= 1.0;
  }
  dz /= n;

  const RowMatrix g_out = dz.transpose() * f.a2;
  RowMatrix d2 = dz * layers.output;
  if (masks) d2 = d2.cwiseProduct(masks->hidden2);
  d2 = d2.cwiseProduct((f.pre2.array() > 0.0).cast<double>().matrix());
  const RowMatrix g_mid = d2.transpose() * f.a1;
  RowMatrix d1 = d2 * layers.middle;
  if (masks) d1 = d1.cwiseProduct(masks->hidden1);
  d1 = d1.cwiseProduct((f.pre1.array() > 0.0).cast<double>().matrix());
  const RowMatrix g_in = d1.transpose() * batch.inputs;
  return pack(arch, g_in, g_mid, g_out);
}

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;

  explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

inline void adamStep(AdamState& state, WeightVector& w, std::span<const double> grad, double lr) {
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  if (grad.size() != w.size() || state.m.size() != w.size()) throw InvalidInput("adamStep: size mismatch");
  ++state.step;
  const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < w.size(); ++i) {
    state.m[i] = kBeta1 * state.m[i] + (1.0 - kBeta1) * grad[i];
    state.v[i] = kBeta2 * state.v[i] + (1.0 - kBeta2) * grad[i] * grad[i];
    w[i] -= lr * (state.m[i] / c1) / (std::sqrt(state.v[i] / c2) + kEps);
  }
}

/// Uniform in [-r, r] per layer, r = sqrt(6 / (fan_in + fan_out)).
inline WeightVector glorotInit(const NetworkArchitecture& arch, Rng& rng) {
  WeightVector w(arch.weightCount());
  const std::size_t sizes[3] = {arch.inputBlockSize(), arch.middleBlockSize(), arch.outputBlockSize()};
  const std::size_t fan_in[3] = {arch.inputWidth(), arch.hidden[0], arch.hidden[1]};
  const std::size_t fan_out[3] = {arch.hidden[0], arch.hidden[1], arch.n_classes};
  std::size_t at = 0;
  for (int l = 0; l < 3; ++l) {
    const double r = std::sqrt(6.0 / static_cast<double>(fan_in[l] + fan_out[l]));
    for (std::size_t i = 0; i < sizes[l]; ++i) w[at++] = uniform(rng, -r, r);
  }
  return w;
}

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double validation_loss = 0.0;
};

struct TrainingLog {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;  // 0 means the initial weights were kept
  std::vector<std::string> warnings;
};

struct BaselineModel {
  WeightVector weights;
  TrainingLog log;
};

namespace detail {
inline Batch takeRows(const Batch& b, std::span<const std::size_t> idx) {
  Batch out;
  out.inputs.resize(static_cast<Eigen::Index>(idx.size()), b.inputs.cols());
  out.labels.reserve(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.inputs.row(static_cast<Eigen::Index>(i)) = b.inputs.row(static_cast<Eigen::Index>(idx[i]));
    out.labels.push_back(b.labels[idx[i]]);
  }
  return out;
}
}  // namespace detail

/// Holds out `validation_fraction` of the rows, runs minibatch Adam for up
/// to `max_epochs`, and returns the snapshot with the lowest validation loss.
inline BaselineModel trainBaseline(const Batch& data, const NetworkArchitecture& arch, const BaselineConfig& cfg) {
  arch.validate();
  cfg.validate();
  if (data.size() < 2) throw InvalidInput("trainBaseline: need at least two training rows");
  if (data.labels.size() != data.size()) throw InvalidInput("trainBaseline: training rows need labels");
  if (data.featureCount() != arch.n_features) throw InvalidInput("trainBaseline: feature count mismatch");

  Rng rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[std::min(static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i)), i - 1)]);
  std::size_t n_val = static_cast<std::size_t>(std::llround(cfg.validation_fraction * static_cast<double>(data.size())));
  if (cfg.validation_fraction > 0.0) n_val = std::clamp<std::size_t>(n_val, 1, data.size() - 1);
  const std::vector<std::size_t> val_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train_idx(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  const Batch train = detail::takeRows(data, train_idx);
  const Batch val = n_val > 0 ? detail::takeRows(data, val_idx) : train;

  BaselineModel model;
  model.weights = glorotInit(arch, rng);
  if (cfg.max_epochs == 0) {
    model.log.warnings.push_back("max_epochs is 0; returning the initial weights untrained");
    return model;
  }

  WeightVector w = model.weights;
  AdamState adam(w.size());
  double best = std::numeric_limits<double>::infinity();
  const std::size_t bs = std::min(cfg.batch_size, train.size());
  std::vector<std::size_t> perm(train.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    for (std::size_t i = perm.size(); i > 1; --i)
      std::swap(perm[i - 1], perm[std::min(static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i)), i - 1)]);
    for (std::size_t start = 0; start < perm.size(); start += bs) {
      const std::size_t stop = std::min(start + bs, perm.size());
      const Batch mb = detail::takeRows(train, std::span<const std::size_t>(perm).subspan(start, stop - start));
      const DropoutMasks masks = sampleMasks(arch, mb.size(), cfg.dropout_rate, rng);
      const WeightVector g = gradients(arch, w.span(), mb, &masks);
      adamStep(adam, w, g.span(), cfg.learning_rate);
    }
    const EpochRecord rec{epoch, crossEntropy(arch, w.span(), train), crossEntropy(arch, w.span(), val)};
    if (!std::isfinite(rec.train_loss) || !std::isfinite(rec.validation_loss))
      throw NumericalError("baseline training diverged at epoch " + std::to_string(epoch));
    model.log.epochs.push_back(rec);
    if (rec.validation_loss < best) {
      best = rec.validation_loss;
      model.weights = w;
      model.log.best_epoch = epoch;
    }
  }
  return model;
}

struct McDropoutPrediction {
  std::size_t predicted_class = 0;
  double frequency = 0.0;  // share of samples whose argmax is the modal class
  bool supported = false;
  std::vector<double> class_frequency;
};

/// MC-dropout support for row `row` of `inputs`, with its own RNG stream
/// derived from the seed and the row index.
inline McDropoutPrediction mcDropoutPredictRow(const WeightVector& w, const NetworkArchitecture& arch,
                                               const Batch& inputs, std::size_t row, const BaselineConfig& cfg,
                                               std::uint64_t stream_offset = 0) {
  const LayerViews layers = unpack(arch, w.span());
  const auto s = static_cast<Eigen::Index>(cfg.mc_samples);
  const Eigen::RowVectorXd a1_full =
      (inputs.inputs.row(static_cast<Eigen::Index>(row)) * layers.input.transpose()).cwiseMax(0.0);
  Rng rng(deriveSeed(cfg.seed, stream_offset + row));
  const DropoutMasks m = sampleMasks(arch, cfg.mc_samples, cfg.dropout_rate, rng);
  const RowMatrix a1 = m.hidden1.array().rowwise() * a1_full.array();
  const RowMatrix a2 = (a1 * layers.middle.transpose()).cwiseMax(0.0).cwiseProduct(m.hidden2);
  const RowMatrix z = a2 * layers.output.transpose();

  McDropoutPrediction out;
  out.class_frequency.assign(arch.n_classes, 0.0);
  for (Eigen::Index i = 0; i < s; ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < z.cols(); ++k)
      if (z(i, k) > z(i, best)) best = k;
    out.class_frequency[static_cast<std::size_t>(best)] += 1.0;
  }
  for (double& f : out.class_frequency) f /= static_cast<double>(cfg.mc_samples);
  out.predicted_class = predictClass(out.class_frequency);
  out.frequency = out.class_frequency[out.predicted_class];
  out.supported = out.frequency > cfg.support_threshold;
  return out;
}

inline McDropoutPrediction mcDropoutPredict(const WeightVector& w, const NetworkArchitecture& arch,
                                            std::span<const double> x, const BaselineConfig& cfg) {
  if (x.size() != arch.n_features) throw InvalidInput("mcDropoutPredict: feature vector length mismatch");
  RowMatrix row(1, static_cast<Eigen::Index>(x.size()));
  std::copy(x.begin(), x.end(), row.data());
  return mcDropoutPredictRow(w, arch, makeBatch(row), 0, cfg);
}

inline std::vector<McDropoutPrediction> mcDropoutPredictBatch(const WeightVector& w, const NetworkArchitecture& arch,
                                                              const Batch& inputs, const BaselineConfig& cfg,
                                                              std::uint64_t stream_offset = 0) {
  if (inputs.featureCount() != arch.n_features) throw InvalidInput("mcDropoutPredict: feature count mismatch");
  std::vector<McDropoutPrediction> out;
  out.reserve(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) out.push_back(mcDropoutPredictRow(w, arch, inputs, i, cfg, stream_offset));
  return out;
}

}  // namespace bnnprior
