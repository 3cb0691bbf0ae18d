#pragma once

/// Class probabilities from traces, Bayes factors, and support decisions.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "bnnprior/error.hpp"
#include "bnnprior/mcmc.hpp"
#include "bnnprior/network.hpp"

namespace bnnprior {

struct SupportThresholds {
  double pp = 0.95;
  double bf = 150.0;

  void validate() const {
    if (!(pp > 0.5 && pp < 1.0)) throw ConfigError("pp threshold must lie in (0.5, 1)");
    if (!(bf > 1.0)) throw ConfigError("bf threshold must exceed 1");
  }
};

/// How a class probability is read off a set of weight samples.
/// MeanSoftmax averages the softmax outputs; ArgmaxFrequency counts how often
/// each class wins.
enum class PpEstimator { MeanSoftmax, ArgmaxFrequency };

inline PpEstimator parsePpEstimator(std::string_view s) {
  if (s == "mean_softmax") return PpEstimator::MeanSoftmax;
  if (s == "argmax_frequency") return PpEstimator::ArgmaxFrequency;
  throw ConfigError("unknown pp estimator '" + std::string(s) + "' (expected mean_softmax or argmax_frequency)");
}

inline constexpr double kPriorClamp = 1e-6;

/// N x C matrix of class probabilities, one row per input row.
inline RowMatrix classProbabilities(const PosteriorTrace& trace, const Batch& inputs,
                                    PpEstimator estimator = PpEstimator::MeanSoftmax) {
  if (trace.samples.empty()) throw InvalidInput("trace holds no samples");
  if (inputs.featureCount() != trace.arch.n_features)
    throw InvalidInput("input has " + std::to_string(inputs.featureCount()) + " features, trace architecture expects " +
                       std::to_string(trace.arch.n_features));
  RowMatrix acc = RowMatrix::Zero(inputs.inputs.rows(), static_cast<Eigen::Index>(trace.arch.n_classes));
  for (const TraceSample& s : trace.samples) {
    const RowMatrix p = forwardBatch(trace.arch, s.weights.span(), inputs);
    if (estimator == PpEstimator::MeanSoftmax) {
      acc += p;
    } else {
      for (Eigen::Index i = 0; i < p.rows(); ++i) {
        Eigen::Index best = 0;
        for (Eigen::Index k = 1; k < p.cols(); ++k)
          if (p(i, k) > p(i, best)) best = k;
        acc(i, best) += 1.0;
      }
    }
  }
  acc /= static_cast<double>(trace.samples.size());
  return acc;
}

inline std::vector<double> posteriorClassProbs(const PosteriorTrace& trace, std::span<const double> x,
                                               PpEstimator estimator = PpEstimator::MeanSoftmax) {
  if (x.size() != trace.arch.n_features)
    throw InvalidInput("feature vector has " + std::to_string(x.size()) + " entries, expected " +
                       std::to_string(trace.arch.n_features));
  RowMatrix row(1, static_cast<Eigen::Index>(x.size()));
  std::copy(x.begin(), x.end(), row.data());
  const RowMatrix p = classProbabilities(trace, makeBatch(row), estimator);
  return {p.data(), p.data() + p.size()};
}

/// Clamps every entry to [eps, 1 - eps] and renormalizes to sum 1.
inline void clampProbabilities(std::span<double> p, double eps = kPriorClamp) {
  double sum = 0.0;
  for (double& v : p) {
    v = std::clamp(v, eps, 1.0 - eps);
    sum += v;
  }
  for (double& v : p) v /= sum;
}

inline RowMatrix empiricalPriorProbabilities(const PosteriorTrace& prior_trace, const Batch& inputs,
                                             PpEstimator estimator = PpEstimator::MeanSoftmax) {
  if (prior_trace.mode != TraceMode::PriorOnly) throw InvalidInput("class priors need a prior-only trace");
  RowMatrix p = classProbabilities(prior_trace, inputs, estimator);
  for (Eigen::Index i = 0; i < p.rows(); ++i) clampProbabilities({p.row(i).data(), static_cast<std::size_t>(p.cols())});
  return p;
}

inline std::vector<double> empiricalPriorClassProbs(const PosteriorTrace& prior_trace, std::span<const double> x,
                                                    PpEstimator estimator = PpEstimator::MeanSoftmax) {
  if (prior_trace.mode != TraceMode::PriorOnly) throw InvalidInput("class priors need a prior-only trace");
  std::vector<double> p = posteriorClassProbs(prior_trace, x, estimator);
  clampProbabilities(p);
  return p;
}

/// Posterior odds over prior odds for one class against all others.
inline double bayesFactor(double pp, double prior) {
  if (!(pp >= 0.0 && pp <= 1.0)) throw InvalidInput("bayesFactor: pp must lie in [0, 1]");
  if (!(prior > 0.0 && prior < 1.0)) throw InvalidInput("bayesFactor: prior probability must lie in (0, 1)");
  if (pp == 1.0) return std::numeric_limits<double>::infinity();
  return (pp / (1.0 - pp)) / (prior / (1.0 - prior));
}

struct PredictionSummary {
  std::string instance_id;
  int true_label = -1;  // network class index; -1 when the class is not one the network knows
  std::vector<double> posterior_probs;
  std::vector<double> prior_probs;
  std::vector<double> bayes_factors;
  std::size_t predicted_class = 0;
  bool supported_pp = false;
  bool supported_bf = false;

  double ppPred() const { return posterior_probs.at(predicted_class); }
  double priorPred() const { return prior_probs.at(predicted_class); }
  double bfPred() const { return bayes_factors.at(predicted_class); }
};

inline PredictionSummary summarizeProbabilities(std::string id, int true_label, std::vector<double> pp,
                                                std::vector<double> prior, const SupportThresholds& t) {
  if (pp.size() != prior.size() || pp.empty())
    throw InvalidInput("posterior and prior probability vectors differ in length");
  PredictionSummary s;
  s.instance_id = std::move(id);
  s.true_label = true_label;
  s.bayes_factors.resize(pp.size());
  for (std::size_t k = 0; k < pp.size(); ++k) s.bayes_factors[k] = bayesFactor(std::clamp(pp[k], 0.0, 1.0), prior[k]);
  s.predicted_class = predictClass(pp);
  s.posterior_probs = std::move(pp);
  s.prior_probs = std::move(prior);
  s.supported_pp = s.ppPred() > t.pp;
  s.supported_bf = s.bfPred() > t.bf;
  return s;
}

inline void checkCompatible(const PosteriorTrace& trace, const PosteriorTrace& prior_trace) {
  if (!(trace.arch == prior_trace.arch)) throw InvalidInput("posterior and prior traces use different architectures");
  if (trace.mode == TraceMode::Posterior && trace.prior != prior_trace.prior)
    throw InvalidInput("posterior and prior traces use different prior specifications");
}

inline PredictionSummary summarize(const std::string& id, std::span<const double> x, int true_label,
                                   const PosteriorTrace& trace, const PosteriorTrace& prior_trace,
                                   const SupportThresholds& t, PpEstimator estimator = PpEstimator::MeanSoftmax) {
  checkCompatible(trace, prior_trace);
  return summarizeProbabilities(id, true_label, posteriorClassProbs(trace, x, estimator),
                                empiricalPriorClassProbs(prior_trace, x, estimator), t);
}

/// One summary per row of `inputs`. `true_labels` may be empty.
inline std::vector<PredictionSummary> summarizeBatch(const PosteriorTrace& trace, const PosteriorTrace& prior_trace,
                                                     const Batch& inputs, std::span<const std::string> ids,
                                                     std::span<const int> true_labels, const SupportThresholds& t,
                                                     PpEstimator estimator = PpEstimator::MeanSoftmax) {
  checkCompatible(trace, prior_trace);
  const std::size_t n = inputs.size();
  if (ids.size() != n) throw InvalidInput("summarizeBatch: id count does not match row count");
  if (!true_labels.empty() && true_labels.size() != n)
    throw InvalidInput("summarizeBatch: label count does not match row count");
  const RowMatrix pp = classProbabilities(trace, inputs, estimator);
  const RowMatrix prior = empiricalPriorProbabilities(prior_trace, inputs, estimator);
  std::vector<PredictionSummary> out;
  out.reserve(n);
  const auto c = static_cast<std::size_t>(pp.cols());
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    out.push_back(summarizeProbabilities(ids[i], true_labels.empty() ? -1 : true_labels[i],
                                         {pp.row(r).data(), pp.row(r).data() + c},
                                         {prior.row(r).data(), prior.row(r).data() + c}, t));
  }
  return out;
}

}  // namespace bnnprior
