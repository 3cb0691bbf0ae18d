#include <gtest/gtest.h>

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "bnnprior/metrics.hpp"
#include "bnnprior/prediction_io.hpp"
#include "bnnprior/trace_io.hpp"

using namespace bnnprior;

namespace {

TraceFile sampleTrace(std::uint64_t seed) {
  Rng rng(seed);
  TraceFile f;
  PosteriorTrace& t = f.trace;
  t.arch = {3, {2, 2}, 3};
  t.prior = makePrior("cauchy", 4.0);
  t.mode = TraceMode::Posterior;
  t.seed = seed;
  t.iterations = 1000;
  t.burn_in = 500;
  t.thinning = 100;
  t.window = 0.0123456789;
  t.update_fraction = 0.05;
  t.acceptance_rate = 0.2341;
  t.initial_log_prior = -12.5;
  t.initial_log_lik = -300.25;
  for (std::uint64_t it = 600; it <= 1000; it += 100) {
    TraceSample s;
    s.iteration = it;
    s.weights = WeightVector(t.arch.weightCount());
    // Values with long mantissas, tiny and huge magnitudes.
    for (double& w : s.weights) w = standardNormal(rng) * std::pow(10.0, uniform(rng, -200, 200));
    s.log_prior = -std::exp(uniform(rng, 0, 5));
    s.log_lik = -1.0 / 3.0 * static_cast<double>(it);
    t.samples.push_back(std::move(s));
  }
  f.class_names = {"a", "b,c", "d"};
  f.scaler = MinMaxScaler{{0.0, -1.5, 1e-9}, {1.0, 2.5, 3.0}};
  return f;
}

std::string serialize(const TraceFile& f) {
  std::ostringstream out;
  writeTrace(out, f);
  return out.str();
}

TraceFile parse(const std::string& s) {
  std::istringstream in(s);
  return readTrace(in);
}

std::string errorOf(const std::string& text) {
  try {
    parse(text);
  } catch (const FormatError& e) {
    return e.what();
  }
  return "";
}

PredictionTable sampleTable() {
  PredictionTable t;
  t.class_names = {"0", "1", "two"};
  const SupportThresholds th{};
  t.summaries.push_back(summarizeProbabilities("x1", 0, {0.97, 0.02, 0.01}, {0.3, 0.3, 0.4}, th));
  t.summaries.push_back(summarizeProbabilities("x,2", 2, {0.1, 0.1, 0.8}, {0.2, 0.5, 0.3}, th));
  t.summaries.push_back(summarizeProbabilities("x3", -1, {1.0, 0.0, 0.0}, {1.0 / 3, 1.0 / 3, 1.0 / 3}, th));
  t.true_names = {"0", "two", "unseen"};
  return t;
}

}  // namespace

TEST(TraceIo, RoundTripIsBitExact) {
  const TraceFile f = sampleTrace(11);
  const std::string text = serialize(f);
  const TraceFile g = parse(text);
  const PosteriorTrace &a = f.trace, &b = g.trace;
  EXPECT_EQ(b.arch.n_features, a.arch.n_features);
  EXPECT_EQ(b.arch.hidden, a.arch.hidden);
  EXPECT_EQ(b.arch.n_classes, a.arch.n_classes);
  ASSERT_TRUE(b.prior.has_value());
  EXPECT_EQ(b.prior->kind, PriorKind::TruncatedCauchy);
  EXPECT_EQ(b.prior->bound, 4.0);
  EXPECT_EQ(b.seed, a.seed);
  EXPECT_EQ(b.iterations, a.iterations);
  EXPECT_EQ(b.burn_in, a.burn_in);
  EXPECT_EQ(b.thinning, a.thinning);
  EXPECT_EQ(b.window, a.window);
  EXPECT_EQ(b.acceptance_rate, a.acceptance_rate);
  EXPECT_EQ(b.initial_log_lik, a.initial_log_lik);
  ASSERT_EQ(b.samples.size(), a.samples.size());
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    EXPECT_EQ(b.samples[i].iteration, a.samples[i].iteration);
    EXPECT_EQ(b.samples[i].log_prior, a.samples[i].log_prior);
    EXPECT_EQ(b.samples[i].log_lik, a.samples[i].log_lik);
    EXPECT_EQ(b.samples[i].weights, a.samples[i].weights);
  }
  EXPECT_EQ(g.class_names, f.class_names);
  ASSERT_TRUE(g.scaler.has_value());
  EXPECT_EQ(g.scaler->min, f.scaler->min);
  EXPECT_EQ(g.scaler->max, f.scaler->max);
  EXPECT_EQ(serialize(g), text);
}

TEST(TraceIo, BaselineTraceHasNoPrior) {
  TraceFile f = sampleTrace(3);
  f.trace.prior.reset();
  f.trace.mode = TraceMode::Baseline;
  const TraceFile g = parse(serialize(f));
  EXPECT_FALSE(g.trace.prior.has_value());
  EXPECT_EQ(g.trace.mode, TraceMode::Baseline);
}

TEST(TraceIo, EmptyAndMalformedFilesRejected) {
  EXPECT_THROW(parse(""), FormatError);
  EXPECT_THROW(parse("\n"), FormatError);
  EXPECT_THROW(parse("{not json\n"), FormatError);
  EXPECT_THROW(parse("{}\n"), FormatError);

  const std::string good = serialize(sampleTrace(5));
  const std::size_t header_end = good.find('\n') + 1;
  const std::size_t first_end = good.find('\n', header_end) + 1;

  // Corrupt a weight on the second line of the file.
  std::string bad = good;
  const std::size_t comma = bad.find(',', header_end);
  bad.insert(comma + 1, "x");
  EXPECT_NE(errorOf(bad).find("line 2"), std::string::npos) << errorOf(bad);

  // Drop a field from the third line.
  std::string short_line = good;
  const std::size_t last_comma = short_line.rfind(',', good.find('\n', first_end));
  short_line.erase(last_comma, good.find('\n', first_end) - last_comma);
  EXPECT_NE(errorOf(short_line).find("line 3"), std::string::npos) << errorOf(short_line);

  // Sample count in the header disagrees with the body.
  std::string truncated = good.substr(0, first_end);
  EXPECT_NE(errorOf(truncated).find("samples"), std::string::npos);
}

TEST(PredictionIo, RoundTrip) {
  const PredictionTable t = sampleTable();
  std::ostringstream out;
  writePredictions(out, t);
  std::istringstream in(out.str());
  const PredictionTable u = readPredictions(in);
  EXPECT_EQ(u.class_names, t.class_names);
  EXPECT_EQ(u.true_names, t.true_names);
  ASSERT_EQ(u.summaries.size(), t.summaries.size());
  for (std::size_t i = 0; i < t.summaries.size(); ++i) {
    const auto &a = t.summaries[i], &b = u.summaries[i];
    EXPECT_EQ(b.instance_id, a.instance_id);
    EXPECT_EQ(b.true_label, a.true_label);
    EXPECT_EQ(b.posterior_probs, a.posterior_probs);
    EXPECT_EQ(b.prior_probs, a.prior_probs);
    EXPECT_EQ(b.predicted_class, a.predicted_class);
    EXPECT_EQ(b.bayes_factors, a.bayes_factors);
    EXPECT_EQ(b.supported_pp, a.supported_pp);
    EXPECT_EQ(b.supported_bf, a.supported_bf);
  }
  EXPECT_TRUE(std::isinf(u.summaries[2].bfPred()));
  std::ostringstream again;
  writePredictions(again, u);
  EXPECT_EQ(again.str(), out.str());
}

TEST(PredictionIo, MetricsRecomputeSupportFromThresholds) {
  const PredictionTable t = sampleTable();
  std::ostringstream out;
  writePredictions(out, t);
  std::istringstream in(out.str());
  const PredictionTable u = readPredictions(in);
  const std::vector<PredictionSummary> labelled(u.summaries.begin(), u.summaries.begin() + 2);
  EXPECT_DOUBLE_EQ(truePositiveRate(labelled, SupportRule::PP, {0.95, 150}), 0.5);
  EXPECT_DOUBLE_EQ(truePositiveRate(labelled, SupportRule::PP, {0.75, 150}), 1.0);
  EXPECT_DOUBLE_EQ(truePositiveRate(labelled, SupportRule::BF, {0.95, 5}), 1.0);
}

TEST(PredictionIo, MalformedRejected) {
  auto read = [](const std::string& s) {
    std::istringstream in(s);
    return readPredictions(in);
  };
  EXPECT_THROW(read(""), FormatError);
  EXPECT_THROW(read("a,b,c\n"), FormatError);
  const std::string header =
      "instance_id,true_label,pred_label,pp_pred,prior_pred,bf_pred,supported_pp,supported_bf,pp_a,pp_b,prior_a,"
      "prior_b\n";
  EXPECT_NO_THROW(read(header + "i,a,a,0.9,0.5,9,0,0,0.9,0.1,0.5,0.5\n"));
  EXPECT_THROW(read(header + "i,a,a,0.9,0.5,9,0,0,0.9,0.1,0.5\n"), FormatError);
  EXPECT_THROW(read(header + "i,a,a,0.9,0.5,9,0,0,0.9,zz,0.5,0.5\n"), FormatError);
  EXPECT_THROW(read(header + "i,a,a,0.9,0.5,9,2,0,0.9,0.1,0.5,0.5\n"), FormatError);
  EXPECT_THROW(read(header + "i,a,a,0.9,0.5,9,0,0,0.9,0.1,1.5,0.5\n"), FormatError);
}
