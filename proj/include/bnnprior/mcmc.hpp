#pragma once

/// Random-walk Metropolis-Hastings over network weights.
///
/// The kernel perturbs a uniformly chosen subset of ceil(f * n) weights by
/// independent U(-d, d) increments. The proposal is symmetric, so the
/// acceptance ratio is the target ratio alone. In prior-only mode the target
/// is the prior and the likelihood is never evaluated.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "bnnprior/error.hpp"
#include "bnnprior/network.hpp"
#include "bnnprior/priors.hpp"
#include "bnnprior/random.hpp"

namespace bnnprior {

enum class ChainMode { Posterior, PriorOnly };

struct McmcConfig {
  std::uint64_t iterations = 200'000;
  std::uint64_t burn_in = 100'000;
  std::uint64_t thinning = 100;
  double window = 0.05;           // d: half-width of the uniform increment
  double update_fraction = 0.05;  // f: share of weights perturbed per proposal
  std::uint64_t seed = 1;
  ChainMode mode = ChainMode::Posterior;
  // Optional tuning of `window` toward `target_acceptance` during burn-in
  // only. The window is frozen before the first retained sample.
  bool adapt_window = false;
  double target_acceptance = 0.234;

  std::uint64_t retainedCount() const noexcept {
    return iterations > burn_in ? (iterations - burn_in) / thinning : 0;
  }

  void validate() const {
    if (iterations == 0) throw ConfigError("mcmc: iterations must be positive");
    if (burn_in >= iterations) throw ConfigError("mcmc: burn_in must be smaller than iterations");
    if (thinning == 0) throw ConfigError("mcmc: thinning must be positive");
    if (!(window >= 0.0) || !std::isfinite(window)) throw ConfigError("mcmc: window must be >= 0");
    if (!(update_fraction > 0.0 && update_fraction <= 1.0)) throw ConfigError("mcmc: update_fraction must be in (0, 1]");
    if (!(target_acceptance > 0.0 && target_acceptance < 1.0))
      throw ConfigError("mcmc: target_acceptance must be in (0, 1)");
    if (retainedCount() == 0) throw ConfigError("mcmc: burn_in and thinning leave no retained samples");
  }
};

struct ChainState {
  WeightVector weights;
  double log_prior = 0.0;
  double log_lik = 0.0;
  std::uint64_t iteration = 0;
  std::uint64_t accept_count = 0;

  double logPosterior() const noexcept { return log_prior + log_lik; }
};

/// Which process produced a trace. `Baseline` marks a single weight vector
/// fitted by gradient descent, stored in the same file format.
enum class TraceMode { Posterior, PriorOnly, Baseline };

inline std::string_view traceModeName(TraceMode m) noexcept {
  switch (m) {
    case TraceMode::Posterior: return "posterior";
    case TraceMode::PriorOnly: return "prior";
    case TraceMode::Baseline: return "baseline";
  }
  return "?";
}

inline TraceMode parseTraceMode(std::string_view s) {
  if (s == "posterior") return TraceMode::Posterior;
  if (s == "prior") return TraceMode::PriorOnly;
  if (s == "baseline") return TraceMode::Baseline;
  throw FormatError("unknown trace mode '" + std::string(s) + "'");
}

struct TraceSample {
  std::uint64_t iteration = 0;
  double log_prior = 0.0;
  double log_lik = 0.0;
  WeightVector weights;

  bool operator==(const TraceSample&) const = default;
};

struct PosteriorTrace {
  NetworkArchitecture arch;
  std::optional<PriorSpec> prior;  // empty for baseline traces
  TraceMode mode = TraceMode::Posterior;
  std::uint64_t seed = 0;
  std::uint64_t iterations = 0;
  std::uint64_t burn_in = 0;
  std::uint64_t thinning = 1;
  double window = 0.0;  // final (frozen) proposal window
  double update_fraction = 0.0;
  double acceptance_rate = 0.0;  // over post-burn-in iterations
  double initial_log_prior = 0.0;
  double initial_log_lik = 0.0;
  std::vector<TraceSample> samples;

  void validate() const {
    arch.validate();
    std::uint64_t last = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      checkWeights(arch, samples[i].weights.span());
      if (i > 0 && samples[i].iteration <= last) throw InvalidInput("trace iterations must be strictly increasing");
      last = samples[i].iteration;
    }
    if (!(acceptance_rate >= 0.0 && acceptance_rate <= 1.0)) throw InvalidInput("trace acceptance rate outside [0, 1]");
  }
};

/// Anything the kernel can target: log prior and log likelihood of a flat
/// parameter vector. Prior-only chains never call logLikelihood.
template <typename T>
concept LogTarget = requires(const T& t, std::span<const double> w) {
  { t.logPrior(w) } -> std::convertible_to<double>;
  { t.logLikelihood(w) } -> std::convertible_to<double>;
};

/// Posterior of a network under an i.i.d. weight prior.
struct BnnTarget {
  const NetworkArchitecture* arch = nullptr;
  const PriorSpec* prior = nullptr;
  const Batch* data = nullptr;  // may be null in prior-only mode

  double logPrior(std::span<const double> w) const { return bnnprior::logPrior(*prior, w); }
  double logPriorWeight(double w) const { return logDensityWeight(*prior, w); }
  double logLikelihood(std::span<const double> w) const {
    if (data == nullptr) throw InvalidInput("posterior chain needs training data");
    return bnnprior::logLikelihood(*arch, w, *data);
  }
};

/// Posterior target that caches the first-layer pre-activations X * W_in^T
/// of the current state. A proposal touching k input-layer weights costs
/// O(N * k) for that layer instead of O(N * F * h1). The cache is rebuilt
/// from scratch every kRefreshInterval accepted moves to bound rounding drift.
class CachedBnnTarget {
 public:
  static constexpr std::uint64_t kRefreshInterval = 256;

  CachedBnnTarget(const NetworkArchitecture& arch, const PriorSpec& prior, const Batch& data)
      : arch_(&arch), prior_(&prior), data_(&data), columns_(data.inputs) {}

  double logPrior(std::span<const double> w) const { return bnnprior::logPrior(*prior_, w); }
  double logPriorWeight(double w) const { return logDensityWeight(*prior_, w); }
  double logLikelihood(std::span<const double> w) const { return bnnprior::logLikelihood(*arch_, w, *data_); }

  void reset(const WeightVector& w) {
    const LayerViews layers = unpack(*arch_, w.span());
    current_.noalias() = columns_ * layers.input.transpose();
    commits_ = 0;
  }

  double proposalLogLikelihood(const WeightVector& current, const WeightVector& proposed,
                               std::span<const std::size_t> changed) {
    const std::size_t width = arch_->inputWidth();
    const std::size_t block = arch_->inputBlockSize();
    proposal_touches_input_ = false;
    for (std::size_t idx : changed) {
      if (idx >= block) continue;
      if (!proposal_touches_input_) {
        proposed_ = current_;
        proposal_touches_input_ = true;
      }
      const auto unit = static_cast<Eigen::Index>(idx / width);
      const auto col = static_cast<Eigen::Index>(idx % width);
      proposed_.col(unit) += (proposed[idx] - current[idx]) * columns_.col(col);
    }
    const LayerViews layers = unpack(*arch_, proposed.span());
    return detail::logLikelihoodFromPreactivation(layers, proposal_touches_input_ ? proposed_ : current_,
                                                  data_->labels, arch_->n_classes, ws_);
  }

  void commit(const WeightVector& accepted) {
    if (proposal_touches_input_) std::swap(current_, proposed_);
    if (++commits_ % kRefreshInterval == 0) reset(accepted);
  }

 private:
  const NetworkArchitecture* arch_;
  const PriorSpec* prior_;
  const Batch* data_;
  Eigen::MatrixXd columns_;  // column-major copy of the inputs
  Eigen::MatrixXd current_;
  Eigen::MatrixXd proposed_;
  bool proposal_touches_input_ = false;
  std::uint64_t commits_ = 0;
  ForwardWorkspace ws_;
};

template <typename T>
concept IncrementalTarget = LogTarget<T> && requires(T& t, const WeightVector& w, std::span<const std::size_t> idx) {
  { t.proposalLogLikelihood(w, w, idx) } -> std::convertible_to<double>;
  t.commit(w);
  t.reset(w);
};

/// Targets whose prior factorises over coordinates. The kernel then scores a
/// proposal's prior from the changed coordinates only.
template <typename T>
concept SeparablePriorTarget = LogTarget<T> && requires(const T& t, double w) {
  { t.logPriorWeight(w) } -> std::convertible_to<double>;
};

/// Accepted moves between exact recomputations of an incrementally tracked
/// log prior.
inline constexpr std::uint64_t kPriorRefreshInterval = 256;

inline std::size_t updateCount(std::size_t n, double fraction) {
  // The epsilon keeps exact products like 0.05 * 100 from rounding up.
  const auto k = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
  return std::clamp<std::size_t>(k, 1, n);
}

/// Subset sliding-window proposal. Keeps a persistent index permutation so
/// each draw costs O(k) rather than O(n).
class SubsetProposal {
 public:
  explicit SubsetProposal(std::size_t n) : order_(n) { std::iota(order_.begin(), order_.end(), std::size_t{0}); }

  /// Writes the proposal into `out` (resized to match `current`).
  void propose(const WeightVector& current, double fraction, double window, Rng& rng, WeightVector& out) {
    if (current.size() != order_.size()) throw InvalidInput("proposal: weight vector size changed");
    out = current;
    const std::size_t n = order_.size();
    const std::size_t k = updateCount(n, fraction);
    for (std::size_t j = 0; j < k; ++j) {
      // Partial Fisher-Yates: order_[j] becomes a uniform pick from the rest.
      const std::size_t pick = j + static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n - j));
      std::swap(order_[j], order_[std::min(pick, n - 1)]);
      out[order_[j]] += uniform(rng, -window, window);
    }
    last_count_ = k;
  }

  /// Indices perturbed by the most recent call to propose().
  std::span<const std::size_t> lastChanged() const noexcept { return {order_.data(), last_count_}; }

 private:
  std::vector<std::size_t> order_;
  std::size_t last_count_ = 0;
};

inline WeightVector propose(const WeightVector& current, const McmcConfig& cfg, Rng& rng) {
  SubsetProposal proposal(current.size());
  WeightVector out;
  proposal.propose(current, cfg.update_fraction, cfg.window, rng, out);
  return out;
}

/// Evaluates the target at `w` and packs it into a fresh chain state.
template <LogTarget Target>
ChainState initialState(const Target& target, WeightVector w, ChainMode mode) {
  ChainState s;
  s.log_prior = target.logPrior(w.span());
  if (!std::isfinite(s.log_prior)) throw NumericalError("initial state has non-finite log prior");
  s.log_lik = mode == ChainMode::Posterior ? target.logLikelihood(w.span()) : 0.0;
  if (!std::isfinite(s.log_lik)) throw NumericalError("initial state has non-finite log likelihood");
  s.weights = std::move(w);
  return s;
}

/// One Metropolis-Hastings transition. `scratch` holds the proposal buffer
/// between calls. Returns true if the proposal was accepted.
template <typename Target>
  requires LogTarget<std::remove_const_t<Target>>
bool mhStep(ChainState& state, Target& target, ChainMode mode, double fraction, double window, Rng& rng,
            SubsetProposal& proposal, WeightVector& scratch) {
  proposal.propose(state.weights, fraction, window, rng, scratch);
  // Always consume the acceptance draw so the stream position is independent
  // of the outcome.
  const double log_u = std::log(uniformOpen01(rng));
  ++state.iteration;

  double lp;
  if constexpr (SeparablePriorTarget<std::remove_const_t<Target>>) {
    lp = state.log_prior;
    for (std::size_t idx : proposal.lastChanged()) {
      const double fresh = target.logPriorWeight(scratch[idx]);
      if (fresh == -std::numeric_limits<double>::infinity()) {
        lp = fresh;
        break;
      }
      lp += fresh - target.logPriorWeight(state.weights[idx]);
    }
  } else {
    lp = target.logPrior(scratch.span());
  }
  if (std::isnan(lp) || lp == std::numeric_limits<double>::infinity())
    throw NumericalError("proposal produced log prior " + std::to_string(lp) + " at iteration " +
                         std::to_string(state.iteration));
  if (lp == -std::numeric_limits<double>::infinity()) return false;

  double log_ratio = lp - state.log_prior;
  double ll = 0.0;
  if (mode == ChainMode::Posterior) {
    if constexpr (IncrementalTarget<Target>)
      ll = target.proposalLogLikelihood(state.weights, scratch, proposal.lastChanged());
    else
      ll = target.logLikelihood(scratch.span());
    if (!std::isfinite(ll))
      throw NumericalError("proposal produced non-finite log likelihood at iteration " +
                           std::to_string(state.iteration));
    log_ratio += ll - state.log_lik;
  }
  if (log_u < log_ratio) {
    std::swap(state.weights, scratch);
    state.log_prior = lp;
    state.log_lik = ll;
    ++state.accept_count;
    if constexpr (SeparablePriorTarget<std::remove_const_t<Target>>)
      if (state.accept_count % kPriorRefreshInterval == 0) state.log_prior = target.logPrior(state.weights.span());
    if constexpr (IncrementalTarget<Target>)
      if (mode == ChainMode::Posterior) target.commit(state.weights);
    return true;
  }
  return false;
}

/// Single transition with the configuration's kernel settings.
template <typename Target>
  requires LogTarget<std::remove_const_t<Target>>
ChainState mhStep(ChainState state, Target& target, const McmcConfig& cfg, Rng& rng) {
  if constexpr (IncrementalTarget<Target>) target.reset(state.weights);
  SubsetProposal proposal(state.weights.size());
  WeightVector scratch;
  mhStep(state, target, cfg.mode, cfg.update_fraction, cfg.window, rng, proposal, scratch);
  return state;
}

inline ChainState mhStep(ChainState state, const Batch& data, const NetworkArchitecture& arch,
                         const PriorSpec& prior, const McmcConfig& cfg, Rng& rng) {
  const BnnTarget target{&arch, &prior, &data};
  return mhStep(std::move(state), target, cfg, rng);
}

struct ChainProgress {
  std::uint64_t every = 0;  // 0 disables reporting
  std::function<void(const ChainState&, double window)> report;
};

/// Runs a chain from `start`, recording every `thinning`-th state after
/// burn-in. Generic in the target so samplers can be checked against
/// analytic densities.
template <typename Target>
  requires LogTarget<std::remove_const_t<Target>>
std::vector<TraceSample> sampleChain(Target& target, WeightVector start, const McmcConfig& cfg, Rng& rng,
                                     double& final_window, double& acceptance_rate, ChainState* initial = nullptr,
                                     const ChainProgress& progress = {}) {
  cfg.validate();
  ChainState state = initialState(target, std::move(start), cfg.mode);
  if (initial != nullptr) *initial = state;
  if constexpr (IncrementalTarget<Target>)
    if (cfg.mode == ChainMode::Posterior) target.reset(state.weights);

  SubsetProposal proposal(state.weights.size());
  WeightVector scratch;
  std::vector<TraceSample> samples;
  samples.reserve(cfg.retainedCount());

  double window = cfg.window;
  constexpr std::uint64_t kAdaptBatch = 100;
  std::uint64_t batch_accepts = 0;
  std::uint64_t adapt_round = 0;
  std::uint64_t accepts_after_burn_in = 0;

  for (std::uint64_t i = 1; i <= cfg.iterations; ++i) {
    const bool accepted = mhStep(state, target, cfg.mode, cfg.update_fraction, window, rng, proposal, scratch);
    if (i <= cfg.burn_in) {
      if (cfg.adapt_window) {
        batch_accepts += accepted ? 1 : 0;
        if (i % kAdaptBatch == 0) {
          const double rate = static_cast<double>(batch_accepts) / kAdaptBatch;
          const double gain = 1.0 / std::sqrt(static_cast<double>(++adapt_round));
          window = std::clamp(window * std::exp(gain * (rate - cfg.target_acceptance)), 1e-8, 1e3);
          batch_accepts = 0;
        }
      }
    } else {
      accepts_after_burn_in += accepted ? 1 : 0;
      if ((i - cfg.burn_in) % cfg.thinning == 0)
        samples.push_back(TraceSample{state.iteration, state.log_prior, state.log_lik, state.weights});
    }
    if (progress.every != 0 && progress.report && i % progress.every == 0) progress.report(state, window);
  }
  final_window = window;
  acceptance_rate = static_cast<double>(accepts_after_burn_in) / static_cast<double>(cfg.iterations - cfg.burn_in);
  return samples;
}

/// Full network chain: weights initialised by independent prior draws,
/// then `cfg.iterations` transitions. Deterministic in `cfg.seed`; in
/// prior-only mode the data is never touched.
inline PosteriorTrace runChain(const Batch* data, const NetworkArchitecture& arch, const PriorSpec& prior,
                               const McmcConfig& cfg, const ChainProgress& progress = {}) {
  arch.validate();
  prior.validate();
  cfg.validate();
  if (cfg.mode == ChainMode::Posterior) {
    if (data == nullptr || data->size() == 0) throw InvalidInput("posterior chain needs non-empty training data");
    if (data->featureCount() != arch.n_features)
      throw InvalidInput("training data feature count does not match architecture");
  }

  Rng rng(cfg.seed);
  WeightVector start(arch.weightCount());
  for (double& w : start) w = samplePriorWeight(prior, rng);

  PosteriorTrace trace;
  trace.arch = arch;
  trace.prior = prior;
  trace.mode = cfg.mode == ChainMode::Posterior ? TraceMode::Posterior : TraceMode::PriorOnly;
  trace.seed = cfg.seed;
  trace.iterations = cfg.iterations;
  trace.burn_in = cfg.burn_in;
  trace.thinning = cfg.thinning;
  trace.update_fraction = cfg.update_fraction;
  ChainState initial;
  if (cfg.mode == ChainMode::Posterior) {
    CachedBnnTarget target(arch, prior, *data);
    trace.samples = sampleChain(target, std::move(start), cfg, rng, trace.window, trace.acceptance_rate, &initial,
                                progress);
  } else {
    const BnnTarget target{&arch, &prior, nullptr};
    trace.samples = sampleChain(target, std::move(start), cfg, rng, trace.window, trace.acceptance_rate, &initial,
                                progress);
  }
  trace.initial_log_prior = initial.log_prior;
  trace.initial_log_lik = initial.log_lik;
  return trace;
}

inline PosteriorTrace runChain(const Batch& data, const NetworkArchitecture& arch, const PriorSpec& prior,
                               const McmcConfig& cfg, const ChainProgress& progress = {}) {
  return runChain(&data, arch, prior, cfg, progress);
}

struct EssResult {
  double value = 0.0;
  bool zero_variance = false;
};

/// ESS = N / (1 + 2 * sum rho_k), summing autocorrelations from lag 1 until
/// the first non-positive one.
inline EssResult effectiveSampleSize(std::span<const double> series) {
  const std::size_t n = series.size();
  if (n < 10) throw InvalidInput("effectiveSampleSize: need at least 10 values");
  const double mean = std::accumulate(series.begin(), series.end(), 0.0) / static_cast<double>(n);
  double c0 = 0.0;
  for (double x : series) c0 += (x - mean) * (x - mean);
  if (!(c0 > 0.0)) return {static_cast<double>(n), true};

  double rho_sum = 0.0;
  for (std::size_t lag = 1; lag < n; ++lag) {
    double c = 0.0;
    for (std::size_t t = 0; t + lag < n; ++t) c += (series[t] - mean) * (series[t + lag] - mean);
    const double rho = c / c0;
    if (rho <= 0.0) break;
    rho_sum += rho;
  }
  return {static_cast<double>(n) / (1.0 + 2.0 * rho_sum), false};
}

inline std::vector<double> logLikelihoodSeries(const PosteriorTrace& trace) {
  std::vector<double> out;
  out.reserve(trace.samples.size());
  for (const auto& s : trace.samples) out.push_back(s.log_lik);
  return out;
}

inline std::vector<double> logPosteriorSeries(const PosteriorTrace& trace) {
  std::vector<double> out;
  out.reserve(trace.samples.size());
  for (const auto& s : trace.samples) out.push_back(s.log_prior + s.log_lik);
  return out;
}

}  // namespace bnnprior
