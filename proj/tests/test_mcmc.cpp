#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "bnnprior/mcmc.hpp"
#include "support.hpp"

using namespace bnnprior;

namespace {

// Plug-in targets place the whole density in logPrior so the chain can run
// in either mode.
struct StandardNormal1D {
  double logPrior(std::span<const double> w) const { return -0.5 * w[0] * w[0]; }
  double logLikelihood(std::span<const double>) const { return 0.0; }
};

// Piecewise-constant density on [-1, 1]: mass 0.3 on [-1, 0), 0.7 on [0, 1).
struct TwoBin {
  double logPrior(std::span<const double> w) const {
    if (w[0] < -1.0 || w[0] >= 1.0) return -INFINITY;
    return std::log(w[0] < 0.0 ? 0.3 : 0.7);
  }
  double logLikelihood(std::span<const double>) const { return 0.0; }
};

struct Flat {
  double logPrior(std::span<const double>) const { return 0.0; }
  double logLikelihood(std::span<const double>) const { return 0.0; }
};

struct GrowsWithMagnitude {
  double logPrior(std::span<const double> w) const { return std::abs(w[0]); }
  double logLikelihood(std::span<const double>) const { return 0.0; }
};

Batch toyData(std::uint64_t seed, std::size_t n = 40) {
  Rng rng(seed);
  RowMatrix x(static_cast<Eigen::Index>(n), 2);
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = static_cast<int>(i % 2);
    x(static_cast<Eigen::Index>(i), 0) = (y[i] ? 1.0 : -1.0) + 0.3 * standardNormal(rng);
    x(static_cast<Eigen::Index>(i), 1) = standardNormal(rng);
  }
  return makeBatch(x, y);
}

const NetworkArchitecture kToyArch{2, {3, 3}, 2};

McmcConfig quickConfig(std::uint64_t seed, ChainMode mode = ChainMode::Posterior) {
  McmcConfig c;
  c.iterations = 4000;
  c.burn_in = 2000;
  c.thinning = 20;
  c.seed = seed;
  c.mode = mode;
  return c;
}

std::vector<double> firstCoordinate(const std::vector<TraceSample>& s) {
  std::vector<double> x;
  for (const auto& t : s) x.push_back(t.weights[0]);
  return x;
}

}  // namespace

TEST(Proposal, ZeroWindowIsIdentity) {
  Rng rng(1);
  McmcConfig c;
  c.update_fraction = 1.0;
  c.window = 0.0;
  WeightVector w(std::vector<double>{0.5, -1.5, 2.0});
  EXPECT_EQ(propose(w, c, rng), w);
}

TEST(Proposal, SubsetSizeIsCeilOfFraction) {
  Rng rng(2);
  McmcConfig c;
  c.update_fraction = 0.05;
  c.window = 0.1;
  const WeightVector w(100, 0.0);
  for (int rep = 0; rep < 50; ++rep) {
    const WeightVector p = propose(w, c, rng);
    std::size_t changed = 0;
    for (std::size_t i = 0; i < w.size(); ++i) changed += p[i] != w[i] ? 1 : 0;
    EXPECT_EQ(changed, 5u);
  }
  EXPECT_EQ(updateCount(100, 0.05), 5u);
  EXPECT_EQ(updateCount(7, 0.05), 1u);
  EXPECT_EQ(updateCount(10, 0.11), 2u);
}

TEST(Proposal, IncrementsAreCentred) {
  Rng rng(3);
  McmcConfig c;
  c.update_fraction = 1.0;
  c.window = 0.1;
  const WeightVector zero(8, 0.0);
  std::vector<double> sum(8, 0.0);
  for (int i = 0; i < 10000; ++i) {
    const WeightVector p = propose(zero, c, rng);
    for (std::size_t k = 0; k < 8; ++k) {
      ASSERT_LE(std::abs(p[k]), 0.1);
      sum[k] += p[k];
    }
  }
  for (double s : sum) EXPECT_NEAR(s / 10000.0, 0.0, 0.003);
}

TEST(MhStep, HigherDensityAlwaysAccepted) {
  GrowsWithMagnitude target;
  McmcConfig c;
  c.update_fraction = 1.0;
  c.window = 0.5;
  c.mode = ChainMode::PriorOnly;
  Rng rng(4);
  for (int i = 0; i < 1000; ++i) {
    const ChainState start = initialState(target, WeightVector(1, 0.0), c.mode);
    const ChainState next = mhStep(start, target, c, rng);
    EXPECT_EQ(next.accept_count, 1u);
    EXPECT_NE(next.weights[0], 0.0);
  }
}

TEST(MhStep, OutOfSupportAlwaysRejected) {
  const PriorSpec prior = makePrior("uniform");
  const NetworkArchitecture a{1, {1, 1}, 2};
  McmcConfig c = quickConfig(5, ChainMode::PriorOnly);
  c.window = 50.0;
  c.update_fraction = 1.0;
  const PosteriorTrace t = runChain(nullptr, a, prior, c);
  for (const auto& s : t.samples)
    for (double w : s.weights) ASSERT_LE(std::abs(w), 5.0);
  EXPECT_LT(t.acceptance_rate, 0.2);
}

TEST(MhStep, LogValuesStayConsistentWithWeights) {
  const Batch data = toyData(6);
  const PriorSpec prior = makePrior("normal");
  const PosteriorTrace t = runChain(data, kToyArch, prior, quickConfig(6));
  for (const auto& s : t.samples) {
    EXPECT_NEAR(s.log_prior, logPrior(prior, s.weights.span()), 1e-9);
    EXPECT_NEAR(s.log_lik, logLikelihood(kToyArch, s.weights.span(), data), 1e-9);
  }
}

TEST(Chain, StandardNormalPlugInTarget) {
  StandardNormal1D target;
  McmcConfig c;
  c.iterations = 200000;
  c.burn_in = 1000;
  c.thinning = 1;
  c.window = 2.4;
  c.update_fraction = 1.0;
  c.mode = ChainMode::PriorOnly;
  Rng rng(7);
  double window = 0, rate = 0;
  const auto s = sampleChain(target, WeightVector(1, 0.0), c, rng, window, rate);
  const auto x = firstCoordinate(s);
  EXPECT_NEAR(oracle::mean(x), 0.0, 0.02);
  EXPECT_NEAR(oracle::variance(x), 1.0, 0.05);
}

TEST(Chain, TwoBinVisitFrequencies) {
  TwoBin target;
  McmcConfig c;
  c.iterations = 400000;
  c.burn_in = 1000;
  c.thinning = 1;
  c.window = 0.8;
  c.update_fraction = 1.0;
  c.mode = ChainMode::PriorOnly;
  Rng rng(8);
  double window = 0, rate = 0;
  const auto x = firstCoordinate(sampleChain(target, WeightVector(1, 0.5), c, rng, window, rate));
  const double left = static_cast<double>(std::count_if(x.begin(), x.end(), [](double v) { return v < 0.0; })) /
                      static_cast<double>(x.size());
  EXPECT_NEAR(left, 0.3, 0.02);
}

TEST(Chain, RetainedSampleCount) {
  StandardNormal1D target;
  McmcConfig c;
  c.iterations = 1000;
  c.burn_in = 500;
  c.thinning = 50;
  c.mode = ChainMode::PriorOnly;
  Rng rng(9);
  double window = 0, rate = 0;
  const auto s = sampleChain(target, WeightVector(1, 0.0), c, rng, window, rate);
  ASSERT_EQ(s.size(), 10u);
  EXPECT_EQ(s.front().iteration, 550u);
  EXPECT_EQ(s.back().iteration, 1000u);
}

TEST(Chain, ZeroRetainedSamplesIsConfigError) {
  McmcConfig c;
  c.iterations = 100;
  c.burn_in = 90;
  c.thinning = 20;
  EXPECT_THROW(c.validate(), ConfigError);
  c.burn_in = 100;
  EXPECT_THROW(c.validate(), ConfigError);
  c.burn_in = 10;
  c.thinning = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Chain, ZeroWindowAcceptsEverything) {
  McmcConfig c = quickConfig(10);
  c.window = 0.0;
  const PosteriorTrace t = runChain(toyData(10), kToyArch, makePrior("laplace"), c);
  EXPECT_DOUBLE_EQ(t.acceptance_rate, 1.0);
  for (const auto& s : t.samples) EXPECT_EQ(s.weights, t.samples.front().weights);
}

TEST(Chain, AcceptanceRateInUnitInterval) {
  for (double d : {0.01, 0.3, 5.0}) {
    McmcConfig c = quickConfig(11);
    c.window = d;
    const PosteriorTrace t = runChain(toyData(11), kToyArch, makePrior("normal"), c);
    EXPECT_GE(t.acceptance_rate, 0.0);
    EXPECT_LE(t.acceptance_rate, 1.0);
  }
}

TEST(Chain, SameSeedIsBitIdentical) {
  const Batch data = toyData(12);
  McmcConfig c = quickConfig(12);
  c.adapt_window = true;
  const PosteriorTrace a = runChain(data, kToyArch, makePrior("cauchy"), c);
  const PosteriorTrace b = runChain(data, kToyArch, makePrior("cauchy"), c);
  EXPECT_EQ(a.samples, b.samples);
  EXPECT_EQ(a.window, b.window);
  c.seed = 13;
  const PosteriorTrace d = runChain(data, kToyArch, makePrior("cauchy"), c);
  EXPECT_NE(a.samples, d.samples);
}

TEST(Chain, PriorOnlyIgnoresData) {
  const McmcConfig c = quickConfig(14, ChainMode::PriorOnly);
  const Batch d1 = toyData(1), d2 = toyData(2, 10);
  const PosteriorTrace a = runChain(&d1, kToyArch, makePrior("normal"), c);
  const PosteriorTrace b = runChain(&d2, kToyArch, makePrior("normal"), c);
  const PosteriorTrace n = runChain(nullptr, kToyArch, makePrior("normal"), c);
  EXPECT_EQ(a.samples, b.samples);
  EXPECT_EQ(a.samples, n.samples);
  for (const auto& s : a.samples) EXPECT_EQ(s.log_lik, 0.0);
  EXPECT_EQ(a.mode, TraceMode::PriorOnly);
}

TEST(Chain, PosteriorNeedsData) {
  EXPECT_THROW(runChain(nullptr, kToyArch, makePrior("normal"), quickConfig(1)), InvalidInput);
  const Batch wrong = makeBatch(RowMatrix::Zero(3, 5), {0, 1, 0});
  EXPECT_THROW(runChain(wrong, kToyArch, makePrior("normal"), quickConfig(1)), InvalidInput);
}

TEST(Chain, RetainedStatesImproveOnInitialState) {
  for (std::uint64_t seed : {20, 21, 22}) {
    const Batch data = toyData(seed);
    for (PriorKind k : kAllPriorKinds) {
      McmcConfig c = quickConfig(seed);
      c.iterations = 20000;
      c.burn_in = 10000;
      c.thinning = 50;
      c.adapt_window = true;
      const PosteriorTrace t = runChain(data, kToyArch, {k, 5.0}, c);
      std::vector<double> lp = logPosteriorSeries(t);
      std::nth_element(lp.begin(), lp.begin() + static_cast<std::ptrdiff_t>(lp.size() / 2), lp.end());
      EXPECT_GT(lp[lp.size() / 2], t.initial_log_prior + t.initial_log_lik) << priorName(k);
    }
  }
}

TEST(Chain, AdaptationStopsAtBurnIn) {
  McmcConfig c = quickConfig(23);
  c.adapt_window = true;
  c.window = 1e-4;
  std::vector<double> windows;
  ChainProgress progress{500, [&](const ChainState&, double w) { windows.push_back(w); }};
  const PosteriorTrace t = runChain(toyData(23), kToyArch, makePrior("normal"), c, progress);
  ASSERT_EQ(windows.size(), 8u);
  EXPECT_GT(windows[3], 1e-4);  // moved during burn-in
  for (std::size_t i = 4; i < windows.size(); ++i) EXPECT_EQ(windows[i], windows[3]);
  EXPECT_EQ(t.window, windows.back());
}

TEST(CachedTarget, MatchesFullRecomputation) {
  const Batch data = toyData(30, 25);
  const PriorSpec prior = makePrior("normal");
  CachedBnnTarget cached(kToyArch, prior, data);
  Rng rng(30);
  ChainState s = initialState(cached, [&] {
    WeightVector w(kToyArch.weightCount());
    for (double& v : w) v = standardNormal(rng);
    return w;
  }(), ChainMode::Posterior);
  cached.reset(s.weights);
  SubsetProposal proposal(s.weights.size());
  WeightVector scratch;
  for (int i = 0; i < 3000; ++i) {
    proposal.propose(s.weights, 0.1, 0.3, rng, scratch);
    const double fast = cached.proposalLogLikelihood(s.weights, scratch, proposal.lastChanged());
    ASSERT_NEAR(fast, logLikelihood(kToyArch, scratch.span(), data), 1e-9);
    if (uniform01(rng) < 0.5) {
      std::swap(s.weights, scratch);
      cached.commit(s.weights);
    }
  }
}

TEST(Ess, IidSeriesNearN) {
  for (std::uint64_t seed : {1, 2, 3, 4, 5}) {
    Rng rng(seed);
    std::vector<double> x(10000);
    for (double& v : x) v = standardNormal(rng);
    const EssResult e = effectiveSampleSize(x);
    EXPECT_GE(e.value, 8000.0);
    EXPECT_LE(e.value, 12000.0);
    EXPECT_FALSE(e.zero_variance);
  }
}

TEST(Ess, Ar1MatchesAnalyticValue) {
  const double phi = 0.9;
  const double expect = 10000.0 * (1 - phi) / (1 + phi);
  for (std::uint64_t seed : {6, 7, 8}) {
    Rng rng(seed);
    std::vector<double> x(10000);
    double prev = standardNormal(rng) / std::sqrt(1 - phi * phi);
    for (double& v : x) v = prev = phi * prev + standardNormal(rng);
    EXPECT_NEAR(effectiveSampleSize(x).value, expect, 0.3 * expect);
  }
}

TEST(Ess, DuplicationLowersEss) {
  Rng rng(9);
  std::vector<double> x(2000), dup;
  for (double& v : x) v = standardNormal(rng);
  for (double v : x) {
    dup.push_back(v);
    dup.push_back(v);
  }
  // Each value carries the information of one draw, however often it repeats.
  const double e = effectiveSampleSize(dup).value;
  EXPECT_NEAR(e, 2000.0, 400.0);
  EXPECT_LT(e, 0.6 * static_cast<double>(dup.size()));
}

TEST(Ess, ConstantSeriesFlagged) {
  const std::vector<double> x(50, 3.0);
  const EssResult e = effectiveSampleSize(x);
  EXPECT_TRUE(e.zero_variance);
  EXPECT_EQ(e.value, 50.0);
  EXPECT_THROW(effectiveSampleSize(std::vector<double>(5, 1.0)), InvalidInput);
}

TEST(Seeds, DerivationSeparatesStreams) {
  std::vector<std::uint64_t> seen;
  for (std::uint64_t s : {1, 2})
    for (std::uint64_t k = 0; k < 200; ++k) seen.push_back(deriveSeed(s, k));
  std::sort(seen.begin(), seen.end());
  EXPECT_EQ(std::adjacent_find(seen.begin(), seen.end()), seen.end());
  EXPECT_EQ(deriveSeed(42, 7), deriveSeed(42, 7));
}
