#pragma once

/// Accuracy, support-aware true/false positive rates, and informedness.
///
/// Support is recomputed from the thresholds passed in rather than read from
/// the stored flags, so a saved prediction set can be re-scored under other
/// thresholds.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "bnnprior/datasets.hpp"
#include "bnnprior/error.hpp"
#include "bnnprior/evidence.hpp"

namespace bnnprior {

enum class SupportRule { PP, BF };

inline std::string_view ruleName(SupportRule r) noexcept { return r == SupportRule::PP ? "pp" : "bf"; }

/// Whether the split contains classes seen in training.
enum class Split { InDistribution, OutOfDistribution };

inline bool isSupported(const PredictionSummary& s, SupportRule rule, const SupportThresholds& t) {
  return rule == SupportRule::PP ? s.ppPred() > t.pp : s.bfPred() > t.bf;
}

inline bool isCorrect(const PredictionSummary& s) {
  return s.true_label >= 0 && static_cast<std::size_t>(s.true_label) == s.predicted_class;
}

struct RateCount {
  std::size_t numerator = 0;
  std::size_t denominator = 0;

  double value() const noexcept {
    return denominator == 0 ? std::numeric_limits<double>::quiet_NaN()
                            : static_cast<double>(numerator) / static_cast<double>(denominator);
  }
  bool operator==(const RateCount&) const = default;
};

namespace detail {
inline void requireNonEmpty(std::span<const PredictionSummary> s, const char* what) {
  if (s.empty()) throw InvalidInput(std::string(what) + ": no predictions");
}
}  // namespace detail

inline RateCount accuracyCount(std::span<const PredictionSummary> s) {
  detail::requireNonEmpty(s, "accuracy");
  RateCount c{0, s.size()};
  for (const auto& x : s) {
    if (x.true_label < 0) throw InvalidInput("accuracy: prediction '" + x.instance_id + "' has no in-distribution label");
    c.numerator += isCorrect(x) ? 1 : 0;
  }
  return c;
}

inline RateCount truePositiveCount(std::span<const PredictionSummary> s, SupportRule rule, const SupportThresholds& t) {
  detail::requireNonEmpty(s, "truePositiveRate");
  RateCount c{0, s.size()};
  for (const auto& x : s) c.numerator += (isCorrect(x) && isSupported(x, rule, t)) ? 1 : 0;
  return c;
}

/// On the out-of-distribution split every supported prediction is a false positive.
inline RateCount falsePositiveCount(std::span<const PredictionSummary> s, SupportRule rule, const SupportThresholds& t,
                                    Split split) {
  detail::requireNonEmpty(s, "falsePositiveRate");
  RateCount c{0, s.size()};
  for (const auto& x : s) {
    const bool wrong = split == Split::OutOfDistribution || !isCorrect(x);
    c.numerator += (wrong && isSupported(x, rule, t)) ? 1 : 0;
  }
  return c;
}

inline double accuracy(std::span<const PredictionSummary> s) { return accuracyCount(s).value(); }
inline double truePositiveRate(std::span<const PredictionSummary> s, SupportRule rule, const SupportThresholds& t) {
  return truePositiveCount(s, rule, t).value();
}
inline double falsePositiveRate(std::span<const PredictionSummary> s, SupportRule rule, const SupportThresholds& t,
                                Split split) {
  return falsePositiveCount(s, rule, t, split).value();
}
inline double informedness(double tpr, double fpr) { return tpr - fpr; }

struct EvaluationReport {
  RateCount accuracy;
  RateCount tpr_pp, tpr_bf;
  RateCount fpr_in_pp, fpr_in_bf;
  std::optional<RateCount> fpr_ood_pp, fpr_ood_bf;

  double jPp() const { return informedness(tpr_pp.value(), fpr_in_pp.value()); }
  double jBf() const { return informedness(tpr_bf.value(), fpr_in_bf.value()); }

  bool operator==(const EvaluationReport&) const = default;
};

inline EvaluationReport evaluateInDistribution(std::span<const PredictionSummary> in, const SupportThresholds& t) {
  EvaluationReport r;
  r.accuracy = accuracyCount(in);
  r.tpr_pp = truePositiveCount(in, SupportRule::PP, t);
  r.tpr_bf = truePositiveCount(in, SupportRule::BF, t);
  r.fpr_in_pp = falsePositiveCount(in, SupportRule::PP, t, Split::InDistribution);
  r.fpr_in_bf = falsePositiveCount(in, SupportRule::BF, t, Split::InDistribution);
  return r;
}

inline EvaluationReport evaluateRun(std::span<const PredictionSummary> in, std::span<const PredictionSummary> ood,
                                    const SupportThresholds& t) {
  detail::requireNonEmpty(in, "evaluateRun (in-distribution split)");
  detail::requireNonEmpty(ood, "evaluateRun (out-of-distribution split)");
  EvaluationReport r = evaluateInDistribution(in, t);
  r.fpr_ood_pp = falsePositiveCount(ood, SupportRule::PP, t, Split::OutOfDistribution);
  r.fpr_ood_bf = falsePositiveCount(ood, SupportRule::BF, t, Split::OutOfDistribution);
  return r;
}

/// Named statistics in a fixed order; OOD entries are absent when the report has none.
inline std::vector<std::pair<std::string, double>> reportStatistics(const EvaluationReport& r) {
  std::vector<std::pair<std::string, double>> out = {
      {"accuracy", r.accuracy.value()}, {"tpr_pp", r.tpr_pp.value()},   {"tpr_bf", r.tpr_bf.value()},
      {"fpr_in_pp", r.fpr_in_pp.value()}, {"fpr_in_bf", r.fpr_in_bf.value()}, {"j_pp", r.jPp()},
      {"j_bf", r.jBf()},
  };
  if (r.fpr_ood_pp) out.emplace_back("fpr_ood_pp", r.fpr_ood_pp->value());
  if (r.fpr_ood_bf) out.emplace_back("fpr_ood_bf", r.fpr_ood_bf->value());
  return out;
}

struct StatRange {
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
  std::size_t n = 0;
};

/// Per-statistic unweighted mean and min-max range over replicates.
struct AggregateReport {
  std::vector<std::string> order;
  std::map<std::string, StatRange> stats;
  std::size_t replicates = 0;

  const StatRange& at(const std::string& name) const {
    const auto it = stats.find(name);
    if (it == stats.end()) throw InvalidInput("aggregate report has no statistic '" + name + "'");
    return it->second;
  }
};

inline AggregateReport aggregate(std::span<const EvaluationReport> reports) {
  if (reports.empty()) throw InvalidInput("aggregate: no reports");
  AggregateReport agg;
  agg.replicates = reports.size();
  for (const EvaluationReport& r : reports) {
    for (const auto& [name, v] : reportStatistics(r)) {
      auto [it, fresh] = agg.stats.try_emplace(name, StatRange{0.0, v, v, 0});
      if (fresh) agg.order.push_back(name);
      StatRange& s = it->second;
      s.mean += v;
      s.min = std::min(s.min, v);
      s.max = std::max(s.max, v);
      ++s.n;
    }
  }
  for (auto& [name, s] : agg.stats) s.mean /= static_cast<double>(s.n);
  return agg;
}

inline nlohmann::json toJson(const RateCount& c) {
  return {{"value", c.value()}, {"numerator", c.numerator}, {"denominator", c.denominator}};
}

inline nlohmann::json toJson(const EvaluationReport& r) {
  auto opt = [](const std::optional<RateCount>& c) { return c ? toJson(*c) : nlohmann::json(nullptr); };
  return {
      {"accuracy", toJson(r.accuracy)},
      {"in_distribution",
       {{"tpr_pp", toJson(r.tpr_pp)},
        {"tpr_bf", toJson(r.tpr_bf)},
        {"fpr_pp", toJson(r.fpr_in_pp)},
        {"fpr_bf", toJson(r.fpr_in_bf)},
        {"j_pp", r.jPp()},
        {"j_bf", r.jBf()}}},
      {"out_of_distribution", {{"fpr_pp", opt(r.fpr_ood_pp)}, {"fpr_bf", opt(r.fpr_ood_bf)}}},
  };
}

inline nlohmann::json toJson(const AggregateReport& a) {
  nlohmann::json stats = nlohmann::json::object();
  for (const std::string& name : a.order) {
    const StatRange& s = a.stats.at(name);
    stats[name] = {{"mean", s.mean}, {"min", s.min}, {"max", s.max}, {"n", s.n}};
  }
  return {{"replicates", a.replicates}, {"statistics", stats}};
}

/// Flat CSV rows, one per support rule.
inline constexpr const char* kReportCsvHeader = "dataset,model,rule,replicate,accuracy,tpr,fpr_in,informedness,fpr_ood";

inline std::string reportCsvRows(const std::string& dataset, const std::string& model, const std::string& replicate,
                                 const EvaluationReport& r, bool include_bf = true) {
  auto num = [](double v) { return std::isnan(v) ? std::string() : detail::formatDouble(v); };
  std::string out;
  for (SupportRule rule : {SupportRule::PP, SupportRule::BF}) {
    if (rule == SupportRule::BF && !include_bf) continue;
    const bool pp = rule == SupportRule::PP;
    const std::optional<RateCount>& ood = pp ? r.fpr_ood_pp : r.fpr_ood_bf;
    out += dataset + ',' + model + ',' + std::string(ruleName(rule)) + ',' + replicate + ',' + num(r.accuracy.value()) +
           ',' + num((pp ? r.tpr_pp : r.tpr_bf).value()) + ',' + num((pp ? r.fpr_in_pp : r.fpr_in_bf).value()) + ',' +
           num(pp ? r.jPp() : r.jBf()) + ',' + (ood ? num(ood->value()) : std::string()) + '\n';
  }
  return out;
}

/// Rows "mean", "min" and "max" for an aggregate.
inline std::string aggregateCsvRows(const std::string& dataset, const std::string& model, const AggregateReport& a,
                                    bool include_bf = true) {
  auto num = [](double v) { return std::isnan(v) ? std::string() : detail::formatDouble(v); };
  auto stat = [&](const std::string& name, double StatRange::*field) {
    const auto it = a.stats.find(name);
    return it == a.stats.end() ? std::string() : num(it->second.*field);
  };
  std::string out;
  for (auto [label, field] : {std::pair{"mean", &StatRange::mean}, std::pair{"min", &StatRange::min},
                              std::pair{"max", &StatRange::max}}) {
    for (SupportRule rule : {SupportRule::PP, SupportRule::BF}) {
      if (rule == SupportRule::BF && !include_bf) continue;
      const std::string r(ruleName(rule));
      out += dataset + ',' + model + ',' + r + ',' + label + ',' + stat("accuracy", field) + ',' +
             stat("tpr_" + r, field) + ',' + stat("fpr_in_" + r, field) + ',' + stat("j_" + r, field) + ',' +
             stat("fpr_ood_" + r, field) + '\n';
    }
  }
  return out;
}

}  // namespace bnnprior
