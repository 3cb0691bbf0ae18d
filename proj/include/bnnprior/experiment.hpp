#pragma once

/// Experiment configuration and the train / predict / evaluate pipeline the
/// CLI drives.
///
/// Seed derivation from the global seed S (deriveSeed(S, stream)):
///   1           beta simulation (unless dataset.seed is set)
///   2           subsampling of the training pool
///   3           split planning (replicate r then uses deriveSeed(that, r))
///   50 + p      prior-only chain for prior family p (shared by replicates)
///   100+16r+p   posterior chain, replicate r, prior family p
///   10000 + r   baseline network, replicate r
/// Prior family index p follows uniform, normal, cauchy, laplace.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "bnnprior/baseline.hpp"
#include "bnnprior/datasets.hpp"
#include "bnnprior/error.hpp"
#include "bnnprior/evidence.hpp"
#include "bnnprior/mcmc.hpp"
#include "bnnprior/metrics.hpp"
#include "bnnprior/prediction_io.hpp"
#include "bnnprior/trace_io.hpp"

namespace bnnprior {

namespace fs = std::filesystem;

enum class Scaling { MinMax, None };

struct DatasetSpec {
  std::string source = "csv";  // csv | beta | mnist
  std::string path;            // csv
  std::string label_column = "label";
  std::string id_column;
  SyntheticBetaConfig beta;
  bool beta_seed_given = false;
  std::string images, labels;            // mnist training pool
  std::string test_images, test_labels;  // mnist test set
  std::optional<std::size_t> subsample;
  Scaling scaling = Scaling::MinMax;
};

/// Which rows the baseline network sees. `Bnn` reuses the chain's split;
/// `Pooled` pools the in-distribution rows and re-splits them 90/10.
enum class BaselineSplit { Bnn, Pooled };

struct ExperimentConfig {
  std::string name = "experiment";
  std::uint64_t seed = 1;
  DatasetSpec dataset;
  SplitOptions split;
  std::array<std::size_t, 2> hidden{10, 5};
  std::vector<PriorSpec> priors;
  McmcConfig mcmc;
  std::map<PriorKind, McmcConfig> mcmc_by_prior;
  McmcConfig prior_mcmc;
  SupportThresholds thresholds;
  PpEstimator estimator = PpEstimator::MeanSoftmax;
  bool baseline_enabled = true;
  BaselineConfig baseline;
  BaselineSplit baseline_split = BaselineSplit::Bnn;
  std::optional<std::array<std::size_t, 2>> baseline_hidden;  // defaults to `hidden`
  double ess_floor = 50.0;
  std::string output_dir = "out";

  const McmcConfig& chainConfig(PriorKind k) const {
    const auto it = mcmc_by_prior.find(k);
    return it == mcmc_by_prior.end() ? mcmc : it->second;
  }

  void validate() const {
    if (priors.empty()) throw ConfigError("config: at least one prior is required");
    for (const auto& p : priors) p.validate();
    mcmc.validate();
    for (const auto& [k, c] : mcmc_by_prior) c.validate();
    prior_mcmc.validate();
    thresholds.validate();
    if (baseline_enabled) baseline.validate();
    if (hidden[0] == 0 || hidden[1] == 0) throw ConfigError("config: hidden layer widths must be >= 1");
    if (baseline_hidden && ((*baseline_hidden)[0] == 0 || (*baseline_hidden)[1] == 0))
      throw ConfigError("config: baseline.hidden widths must be >= 1");
    if (dataset.source == "csv" && dataset.path.empty()) throw ConfigError("config: dataset.path is required for csv");
    if (dataset.source == "mnist" && (dataset.images.empty() || dataset.labels.empty()))
      throw ConfigError("config: dataset.images and dataset.labels are required for mnist");
  }
};

inline std::size_t priorIndex(PriorKind k) {
  for (std::size_t i = 0; i < std::size(kAllPriorKinds); ++i)
    if (kAllPriorKinds[i] == k) return i;
  return 0;
}

inline std::uint64_t posteriorChainSeed(std::uint64_t s, std::size_t replicate, PriorKind k) {
  return deriveSeed(s, 100 + 16 * replicate + priorIndex(k));
}
inline std::uint64_t priorChainSeed(std::uint64_t s, PriorKind k) { return deriveSeed(s, 50 + priorIndex(k)); }
inline std::uint64_t baselineSeed(std::uint64_t s, std::size_t replicate) { return deriveSeed(s, 10000 + replicate); }

// ---------------------------------------------------------------- config parsing

namespace detail {

inline void checkKeys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError("config: '" + where + "' must be an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError("config: unknown key '" + key + "' in " + where);
  }
}

template <typename T>
T get(const nlohmann::json& j, const char* key, const T& fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config: '" + where + "." + key + "' has the wrong type");
  }
}

inline std::string resolvePath(const std::string& base, const std::string& p) {
  if (p.empty() || fs::path(p).is_absolute() || base.empty()) return p;
  return (fs::path(base) / p).lexically_normal().string();
}

inline McmcConfig parseMcmc(const nlohmann::json& j, McmcConfig c, const std::string& where) {
  checkKeys(j, {"iterations", "burn_in", "thinning", "window", "update_fraction", "adapt_window", "target_acceptance",
                "per_prior"},
            where);
  c.iterations = get(j, "iterations", c.iterations, where);
  c.burn_in = get(j, "burn_in", c.burn_in, where);
  c.thinning = get(j, "thinning", c.thinning, where);
  c.window = get(j, "window", c.window, where);
  c.update_fraction = get(j, "update_fraction", c.update_fraction, where);
  c.adapt_window = get(j, "adapt_window", c.adapt_window, where);
  c.target_acceptance = get(j, "target_acceptance", c.target_acceptance, where);
  return c;
}

}  // namespace detail

inline ExperimentConfig parseExperimentConfig(const nlohmann::json& j, const std::string& base_dir = "") {
  using detail::get;
  ExperimentConfig c;
  detail::checkKeys(j, {"name", "seed", "dataset", "split", "architecture", "priors", "prior_bound", "mcmc",
                        "prior_mcmc", "thresholds", "pp_estimator", "baseline", "ess_floor", "output"},
                    "config");
  c.name = get<std::string>(j, "name", c.name, "config");
  c.seed = get(j, "seed", c.seed, "config");
  c.output_dir = get<std::string>(j, "output", c.output_dir, "config");
  c.ess_floor = get(j, "ess_floor", c.ess_floor, "config");

  const nlohmann::json d = j.value("dataset", nlohmann::json::object());
  detail::checkKeys(d, {"source", "path", "label_column", "id_column", "n_classes", "instances_per_class",
                        "n_features", "shape_low", "shape_high", "seed", "images", "labels", "test_images",
                        "test_labels", "subsample", "scaling"},
                    "dataset");
  DatasetSpec& ds = c.dataset;
  ds.source = get<std::string>(d, "source", ds.source, "dataset");
  if (ds.source != "csv" && ds.source != "beta" && ds.source != "mnist")
    throw ConfigError("config: dataset.source must be csv, beta or mnist");
  ds.path = detail::resolvePath(base_dir, get<std::string>(d, "path", "", "dataset"));
  ds.label_column = get<std::string>(d, "label_column", ds.label_column, "dataset");
  ds.id_column = get<std::string>(d, "id_column", "", "dataset");
  ds.beta.n_classes = get(d, "n_classes", ds.beta.n_classes, "dataset");
  ds.beta.instances_per_class = get(d, "instances_per_class", ds.beta.instances_per_class, "dataset");
  ds.beta.n_features = get(d, "n_features", ds.beta.n_features, "dataset");
  ds.beta.shape_low = get(d, "shape_low", ds.beta.shape_low, "dataset");
  ds.beta.shape_high = get(d, "shape_high", ds.beta.shape_high, "dataset");
  if (d.contains("seed")) {
    ds.beta.seed = get(d, "seed", ds.beta.seed, "dataset");
    ds.beta_seed_given = true;
  }
  ds.images = detail::resolvePath(base_dir, get<std::string>(d, "images", "", "dataset"));
  ds.labels = detail::resolvePath(base_dir, get<std::string>(d, "labels", "", "dataset"));
  ds.test_images = detail::resolvePath(base_dir, get<std::string>(d, "test_images", "", "dataset"));
  ds.test_labels = detail::resolvePath(base_dir, get<std::string>(d, "test_labels", "", "dataset"));
  if (d.contains("subsample")) ds.subsample = get<std::size_t>(d, "subsample", 0, "dataset");
  const std::string scaling = get<std::string>(d, "scaling", "minmax", "dataset");
  if (scaling == "minmax") ds.scaling = Scaling::MinMax;
  else if (scaling == "none") ds.scaling = Scaling::None;
  else throw ConfigError("config: dataset.scaling must be minmax or none");
  if (!(ds.beta.shape_low > 0.0 && ds.beta.shape_low < ds.beta.shape_high))
    throw ConfigError("config: need 0 < shape_low < shape_high");

  const nlohmann::json s = j.value("split", nlohmann::json::object());
  detail::checkKeys(s, {"n_ood_classes", "ood_classes", "n_replicates", "train_fraction", "train_per_class"}, "split");
  c.split.n_ood_classes = get(s, "n_ood_classes", c.split.n_ood_classes, "split");
  c.split.n_replicates = get(s, "n_replicates", c.split.n_replicates, "split");
  c.split.train_fraction = get(s, "train_fraction", c.split.train_fraction, "split");
  if (s.contains("train_per_class")) c.split.train_per_class = get<std::size_t>(s, "train_per_class", 0, "split");
  if (s.contains("ood_classes")) c.split.ood_classes = get<std::vector<int>>(s, "ood_classes", {}, "split");

  const nlohmann::json a = j.value("architecture", nlohmann::json::object());
  detail::checkKeys(a, {"hidden"}, "architecture");
  const auto hidden = get<std::vector<std::size_t>>(a, "hidden", {c.hidden[0], c.hidden[1]}, "architecture");
  if (hidden.size() != 2) throw ConfigError("config: architecture.hidden must list exactly two widths");
  c.hidden = {hidden[0], hidden[1]};

  const double bound = get(j, "prior_bound", 5.0, "config");
  const nlohmann::json priors = j.value("priors", nlohmann::json::array({"uniform", "normal", "cauchy", "laplace"}));
  if (!priors.is_array()) throw ConfigError("config: priors must be a list");
  for (const auto& p : priors) {
    if (p.is_string()) {
      c.priors.push_back(makePrior(p.get<std::string>(), bound));
    } else if (p.is_object()) {
      detail::checkKeys(p, {"name", "bound"}, "priors[]");
      c.priors.push_back(makePrior(get<std::string>(p, "name", "", "priors[]"), get(p, "bound", bound, "priors[]")));
    } else {
      throw ConfigError("config: priors entries must be names or {name, bound} objects");
    }
  }
  std::set<PriorKind> seen;
  for (const auto& p : c.priors)
    if (!seen.insert(p.kind).second) throw ConfigError("config: prior '" + std::string(priorName(p.kind)) + "' listed twice");

  const nlohmann::json m = j.value("mcmc", nlohmann::json::object());
  c.mcmc = detail::parseMcmc(m, c.mcmc, "mcmc");
  if (m.contains("per_prior")) {
    const auto& pp = m["per_prior"];
    if (!pp.is_object()) throw ConfigError("config: mcmc.per_prior must be an object");
    for (const auto& [name, over] : pp.items())
      c.mcmc_by_prior[parsePriorKind(name)] = detail::parseMcmc(over, c.mcmc, "mcmc.per_prior." + name);
  }
  c.prior_mcmc = c.mcmc;
  if (j.contains("prior_mcmc")) c.prior_mcmc = detail::parseMcmc(j["prior_mcmc"], c.mcmc, "prior_mcmc");
  c.prior_mcmc.mode = ChainMode::PriorOnly;

  const nlohmann::json t = j.value("thresholds", nlohmann::json::object());
  detail::checkKeys(t, {"pp", "bf"}, "thresholds");
  c.thresholds.pp = get(t, "pp", c.thresholds.pp, "thresholds");
  c.thresholds.bf = get(t, "bf", c.thresholds.bf, "thresholds");
  c.estimator = parsePpEstimator(get<std::string>(j, "pp_estimator", "mean_softmax", "config"));

  if (j.contains("baseline")) {
    const nlohmann::json& b = j["baseline"];
    detail::checkKeys(b, {"enabled", "dropout_rate", "learning_rate", "max_epochs", "batch_size",
                          "validation_fraction", "mc_samples", "support_threshold", "split", "hidden"},
                      "baseline");
    c.baseline_enabled = get(b, "enabled", true, "baseline");
    c.baseline.dropout_rate = get(b, "dropout_rate", c.baseline.dropout_rate, "baseline");
    c.baseline.learning_rate = get(b, "learning_rate", c.baseline.learning_rate, "baseline");
    c.baseline.max_epochs = get(b, "max_epochs", c.baseline.max_epochs, "baseline");
    c.baseline.batch_size = get(b, "batch_size", c.baseline.batch_size, "baseline");
    c.baseline.validation_fraction = get(b, "validation_fraction", c.baseline.validation_fraction, "baseline");
    c.baseline.mc_samples = get(b, "mc_samples", c.baseline.mc_samples, "baseline");
    c.baseline.support_threshold = get(b, "support_threshold", c.baseline.support_threshold, "baseline");
    if (b.contains("hidden")) {
      const auto bh = get<std::vector<std::size_t>>(b, "hidden", {}, "baseline");
      if (bh.size() != 2) throw ConfigError("config: baseline.hidden must list exactly two widths");
      c.baseline_hidden = std::array<std::size_t, 2>{bh[0], bh[1]};
    }
    const std::string split = get<std::string>(b, "split", "bnn", "baseline");
    if (split == "bnn") c.baseline_split = BaselineSplit::Bnn;
    else if (split == "pooled") c.baseline_split = BaselineSplit::Pooled;
    else throw ConfigError("config: baseline.split must be bnn or pooled");
  }
  c.validate();
  return c;
}

inline ExperimentConfig loadExperimentConfig(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return parseExperimentConfig(j, fs::path(path).parent_path().string());
}


// ---------------------------------------------------------------- data preparation

struct PreparedData {
  LabeledDataset pool;                 // rows training splits are drawn from
  std::optional<LabeledDataset> test;  // separate test set, if the source has one
  std::vector<SplitPlan> plans;
  std::optional<BetaShapes> beta_shapes;
};

inline PreparedData prepareData(const ExperimentConfig& c) {
  PreparedData p;
  const DatasetSpec& d = c.dataset;
  if (d.source == "csv") {
    p.pool = loadCsv(d.path, d.label_column, d.id_column);
  } else if (d.source == "beta") {
    SyntheticBetaConfig bc = d.beta;
    if (!d.beta_seed_given) bc.seed = deriveSeed(c.seed, 1);
    BetaShapes shapes;
    p.pool = simulateBeta(bc, &shapes);
    p.beta_shapes = std::move(shapes);
  } else {
    p.pool = loadMnistIdx(d.images, d.labels);
    if (!d.test_images.empty()) p.test = loadMnistIdx(d.test_images, d.test_labels);
  }
  if (d.subsample) p.pool = subsample(p.pool, *d.subsample, deriveSeed(c.seed, 2));
  SplitOptions opt = c.split;
  opt.seed = deriveSeed(c.seed, 3);
  p.plans = p.test ? planTestSetSplits(p.pool, *p.test, opt) : planSplits(p.pool, opt);
  return p;
}

/// One replicate's rows in network label space (in-distribution class j of
/// the plan becomes network class j).
struct ReplicateData {
  std::size_t replicate = 0;
  NetworkArchitecture arch;
  std::vector<std::string> class_names;
  std::optional<MinMaxScaler> scaler;
  Batch train;
  Batch test_in;
  std::vector<std::string> test_in_ids;
  Batch test_ood;
  std::vector<std::string> test_ood_ids;
  std::vector<std::string> test_ood_names;
};

inline ReplicateData materialize(const ExperimentConfig& c, const PreparedData& p, std::size_t r) {
  const SplitPlan& plan = p.plans.at(r);
  const LabeledDataset& test_src = p.test ? *p.test : p.pool;
  std::map<int, int> to_net;
  ReplicateData out;
  out.replicate = r;
  for (std::size_t j = 0; j < plan.in_classes.size(); ++j) {
    to_net[plan.in_classes[j]] = static_cast<int>(j);
    out.class_names.push_back(p.pool.class_names.at(static_cast<std::size_t>(plan.in_classes[j])));
  }
  LabeledDataset train = selectRows(p.pool, plan.train_idx);
  LabeledDataset tin = selectRows(test_src, plan.test_in_idx);
  LabeledDataset tood = selectRows(test_src, plan.test_ood_idx);
  if (c.dataset.scaling == Scaling::MinMax) {
    out.scaler = minMaxFit(train.features);
    train.features = minMaxApply(*out.scaler, train.features);
    tin.features = minMaxApply(*out.scaler, tin.features);
    tood.features = minMaxApply(*out.scaler, tood.features);
  }
  auto relabel = [&](const LabeledDataset& d) {
    std::vector<int> y;
    for (int l : d.labels) y.push_back(to_net.at(l));
    return y;
  };
  out.train = makeBatch(train.features, relabel(train));
  out.test_in = makeBatch(tin.features, relabel(tin));
  out.test_ood = makeBatch(tood.features);
  for (std::size_t i = 0; i < tin.size(); ++i) out.test_in_ids.push_back(tin.idOf(i));
  for (std::size_t i = 0; i < tood.size(); ++i) {
    out.test_ood_ids.push_back(tood.idOf(i));
    out.test_ood_names.push_back(tood.class_names.at(static_cast<std::size_t>(tood.labels[i])));
  }
  // Ids default to file row numbers; make them unique across the two test sets.
  if (tin.ids.empty())
    for (std::size_t i = 0; i < tin.size(); ++i) out.test_in_ids[i] = "row" + std::to_string(plan.test_in_idx[i]);
  if (tood.ids.empty())
    for (std::size_t i = 0; i < tood.size(); ++i) out.test_ood_ids[i] = "row" + std::to_string(plan.test_ood_idx[i]);
  out.arch = NetworkArchitecture{train.featureCount(), c.hidden, out.class_names.size()};
  out.arch.validate();
  return out;
}

// ---------------------------------------------------------------- job execution

/// Runs jobs on up to `threads` workers. Results land in caller-owned slots,
/// so output does not depend on scheduling. The first failure (by job
/// index) is rethrown after all workers finish.
inline void runJobs(std::vector<std::function<void()>>& jobs, std::size_t threads) {
  std::vector<std::exception_ptr> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        jobs[i]();
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(threads, jobs.size()));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

/// Line-oriented progress on a stream (stderr by default); silent when null.
class ProgressLog {
 public:
  explicit ProgressLog(std::ostream* out = &std::cerr) : out_(out) {}
  void line(const std::string& s) const {
    if (!out_) return;
    std::lock_guard<std::mutex> lock(mutex_);
    *out_ << s << '\n' << std::flush;
  }
  bool enabled() const { return out_ != nullptr; }

 private:
  std::ostream* out_;
  mutable std::mutex mutex_;
};

// ---------------------------------------------------------------- training

struct ChainSummary {
  std::string label;
  std::string prior;
  std::string mode;
  std::size_t replicate = 0;
  std::uint64_t seed = 0;
  std::size_t samples = 0;
  double acceptance_rate = 0.0;
  double window = 0.0;
  double ess = 0.0;  // of the log-likelihood series (log-prior for prior-only chains)
  bool ess_zero_variance = false;
  bool below_ess_floor = false;
};

struct TrainedExperiment {
  std::vector<ReplicateData> replicates;
  std::map<PriorKind, PosteriorTrace> prior_traces;
  std::vector<std::map<PriorKind, PosteriorTrace>> posterior_traces;  // per replicate
  std::vector<std::optional<BaselineModel>> baselines;                // per replicate
  std::vector<ReplicateData> baseline_data;                           // rows the baseline used
  std::vector<ChainSummary> chains;
};

struct OutputPaths {
  fs::path root, traces, predictions, reports;

  explicit OutputPaths(const fs::path& r) : root(r), traces(r / "traces"), predictions(r / "predictions"), reports(r / "reports") {}

  void create() const {
    std::error_code ec;
    for (const auto& p : {traces, predictions, reports}) {
      fs::create_directories(p, ec);
      if (ec) throw IoError("cannot create directory '" + p.string() + "': " + ec.message());
    }
  }
};

inline std::string replicateTag(std::size_t r) { return "r" + std::to_string(r); }

inline fs::path posteriorTracePath(const OutputPaths& o, const std::string& name, std::size_t r, PriorKind k) {
  return o.traces / (name + "_" + replicateTag(r) + "_" + std::string(priorName(k)) + "_posterior.trace");
}
inline fs::path priorTracePath(const OutputPaths& o, const std::string& name, PriorKind k) {
  return o.traces / (name + "_" + std::string(priorName(k)) + "_prior.trace");
}
inline fs::path baselineTracePath(const OutputPaths& o, const std::string& name, std::size_t r) {
  return o.traces / (name + "_" + replicateTag(r) + "_baseline.trace");
}

inline NetworkArchitecture baselineArchitecture(const ExperimentConfig& c, const NetworkArchitecture& bnn) {
  NetworkArchitecture a = bnn;
  if (c.baseline_hidden) a.hidden = *c.baseline_hidden;
  return a;
}

/// Baseline rows: the chain's split, or the pooled in-distribution rows
/// re-split 90/10 into train and test.
inline ReplicateData baselineRows(const ExperimentConfig& c, const ReplicateData& rep) {
  if (c.baseline_split == BaselineSplit::Bnn) return rep;
  ReplicateData out = rep;
  const Eigen::Index n_train = rep.train.inputs.rows();
  const Eigen::Index n = n_train + rep.test_in.inputs.rows();
  RowMatrix all(n, rep.train.inputs.cols());
  all << rep.train.inputs, rep.test_in.inputs;
  std::vector<int> labels = rep.train.labels;
  labels.insert(labels.end(), rep.test_in.labels.begin(), rep.test_in.labels.end());
  std::vector<std::string> ids(static_cast<std::size_t>(n_train));
  for (Eigen::Index i = 0; i < n_train; ++i) ids[static_cast<std::size_t>(i)] = "train" + std::to_string(i);
  ids.insert(ids.end(), rep.test_in_ids.begin(), rep.test_in_ids.end());
  std::vector<std::size_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(deriveSeed(baselineSeed(c.seed, rep.replicate), 1));
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[std::min(static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i)), i - 1)]);
  const auto n_test = static_cast<std::size_t>(std::max<long long>(1, std::llround(0.1 * static_cast<double>(n))));
  auto take = [&](std::size_t from, std::size_t to, Batch& b, std::vector<std::string>* id_out) {
    b.inputs.resize(static_cast<Eigen::Index>(to - from), all.cols());
    b.labels.clear();
    if (id_out) id_out->clear();
    for (std::size_t i = from; i < to; ++i) {
      b.inputs.row(static_cast<Eigen::Index>(i - from)) = all.row(static_cast<Eigen::Index>(order[i]));
      b.labels.push_back(labels[order[i]]);
      if (id_out) id_out->push_back(ids[order[i]]);
    }
  };
  take(0, n_test, out.test_in, &out.test_in_ids);
  take(n_test, order.size(), out.train, nullptr);
  return out;
}

inline TrainedExperiment trainExperiment(const ExperimentConfig& c, const PreparedData& data, std::size_t threads,
                                         const ProgressLog& log, const OutputPaths* out = nullptr) {
  TrainedExperiment t;
  const std::size_t n_rep = data.plans.size();
  for (std::size_t r = 0; r < n_rep; ++r) t.replicates.push_back(materialize(c, data, r));
  for (std::size_t r = 0; r < n_rep; ++r)
    if (!(t.replicates[r].arch == t.replicates[0].arch))
      throw InvalidInput("replicates disagree on the network architecture; use a fixed number of held-out classes");
  const NetworkArchitecture arch = t.replicates.front().arch;
  t.posterior_traces.resize(n_rep);
  t.baselines.resize(n_rep);
  for (std::size_t r = 0; r < n_rep; ++r) t.baseline_data.push_back(baselineRows(c, t.replicates[r]));

  // Slots are filled by jobs; map nodes are created up front so jobs never
  // mutate the containers concurrently.
  for (const PriorSpec& p : c.priors) {
    t.prior_traces[p.kind];
    for (std::size_t r = 0; r < n_rep; ++r) t.posterior_traces[r][p.kind];
  }

  std::vector<std::function<void()>> jobs;
  auto progressFor = [&](const std::string& label, std::uint64_t total) {
    ChainProgress prog;
    if (!log.enabled()) return prog;
    prog.every = std::max<std::uint64_t>(1, total / 10);
    prog.report = [&log, label, total](const ChainState& s, double window) {
      log.line("[train] " + label + " " + std::to_string(s.iteration) + "/" + std::to_string(total) +
               " log_post=" + detail::formatDouble(s.logPosterior()) + " window=" + detail::formatDouble(window));
    };
    return prog;
  };

  for (const PriorSpec& p : c.priors) {
    jobs.push_back([&, p] {
      McmcConfig mc = c.prior_mcmc;
      mc.seed = priorChainSeed(c.seed, p.kind);
      const std::string label = c.name + " " + std::string(priorName(p.kind)) + " prior-only";
      t.prior_traces[p.kind] = runChain(nullptr, arch, p, mc, progressFor(label, mc.iterations));
    });
    for (std::size_t r = 0; r < n_rep; ++r) {
      jobs.push_back([&, p, r] {
        McmcConfig mc = c.chainConfig(p.kind);
        mc.mode = ChainMode::Posterior;
        mc.seed = posteriorChainSeed(c.seed, r, p.kind);
        const std::string label = c.name + " " + replicateTag(r) + " " + std::string(priorName(p.kind));
        t.posterior_traces[r][p.kind] =
            runChain(t.replicates[r].train, arch, p, mc, progressFor(label, mc.iterations));
      });
    }
  }
  if (c.baseline_enabled) {
    for (std::size_t r = 0; r < n_rep; ++r) {
      jobs.push_back([&, r] {
        BaselineConfig bc = c.baseline;
        bc.seed = baselineSeed(c.seed, r);
        t.baselines[r] = trainBaseline(t.baseline_data[r].train, baselineArchitecture(c, arch), bc);
        for (const auto& w : t.baselines[r]->log.warnings) log.line("[train] warning: " + w);
        log.line("[train] " + c.name + " " + replicateTag(r) + " baseline: best epoch " +
                 std::to_string(t.baselines[r]->log.best_epoch));
      });
    }
  }
  runJobs(jobs, threads);

  auto summarizeChain = [&](const PosteriorTrace& tr, const std::string& label, std::size_t r) {
    ChainSummary s;
    s.label = label;
    s.prior = std::string(priorName(tr.prior->kind));
    s.mode = std::string(traceModeName(tr.mode));
    s.replicate = r;
    s.seed = tr.seed;
    s.samples = tr.samples.size();
    s.acceptance_rate = tr.acceptance_rate;
    s.window = tr.window;
    if (tr.samples.size() >= 10) {
      std::vector<double> series;
      for (const auto& x : tr.samples) series.push_back(tr.mode == TraceMode::PriorOnly ? x.log_prior : x.log_lik);
      const EssResult e = effectiveSampleSize(series);
      s.ess = e.value;
      s.ess_zero_variance = e.zero_variance;
    }
    s.below_ess_floor = s.ess < c.ess_floor;
    return s;
  };
  for (const PriorSpec& p : c.priors) {
    t.chains.push_back(summarizeChain(t.prior_traces[p.kind], std::string(priorName(p.kind)) + "_prior", 0));
    for (std::size_t r = 0; r < n_rep; ++r)
      t.chains.push_back(summarizeChain(t.posterior_traces[r][p.kind],
                                        replicateTag(r) + "_" + std::string(priorName(p.kind)), r));
  }
  for (const ChainSummary& s : t.chains) {
    log.line("[train] " + c.name + " " + s.label + ": acceptance " + detail::formatDouble(s.acceptance_rate) +
             ", ESS " + detail::formatDouble(s.ess) + " of " + std::to_string(s.samples));
    if (s.below_ess_floor)
      log.line("[train] warning: " + c.name + " " + s.label + " ESS " + detail::formatDouble(s.ess) +
               " is below the floor " + detail::formatDouble(c.ess_floor) + "; the chain may not have converged");
  }

  if (out) {
    out->create();
    const auto& names = t.replicates.front().class_names;
    for (const PriorSpec& p : c.priors) {
      writeTraceFile(priorTracePath(*out, c.name, p.kind).string(), TraceFile{t.prior_traces[p.kind], names, {}});
      for (std::size_t r = 0; r < n_rep; ++r)
        writeTraceFile(posteriorTracePath(*out, c.name, r, p.kind).string(),
                       TraceFile{t.posterior_traces[r][p.kind], t.replicates[r].class_names, t.replicates[r].scaler});
    }
    for (std::size_t r = 0; r < n_rep; ++r) {
      if (!t.baselines[r]) continue;
      PosteriorTrace bt;
      bt.arch = baselineArchitecture(c, arch);
      bt.mode = TraceMode::Baseline;
      bt.seed = baselineSeed(c.seed, r);
      bt.iterations = t.baselines[r]->log.best_epoch;
      bt.samples.push_back(TraceSample{t.baselines[r]->log.best_epoch, 0.0, 0.0, t.baselines[r]->weights});
      writeTraceFile(baselineTracePath(*out, c.name, r).string(),
                     TraceFile{bt, t.replicates[r].class_names, t.replicates[r].scaler});
    }
  }
  return t;
}

// ---------------------------------------------------------------- prediction & evaluation

struct SplitPredictions {
  PredictionTable in;
  PredictionTable ood;
};

inline SplitPredictions predictBnn(const ExperimentConfig& c, const ReplicateData& rep, const PosteriorTrace& post,
                                   const PosteriorTrace& prior) {
  SplitPredictions sp;
  sp.in.class_names = sp.ood.class_names = rep.class_names;
  sp.in.summaries = summarizeBatch(post, prior, rep.test_in, rep.test_in_ids, rep.test_in.labels, c.thresholds, c.estimator);
  for (int y : rep.test_in.labels) sp.in.true_names.push_back(rep.class_names[static_cast<std::size_t>(y)]);
  sp.ood.summaries = summarizeBatch(post, prior, rep.test_ood, rep.test_ood_ids, {}, c.thresholds, c.estimator);
  sp.ood.true_names = rep.test_ood_names;
  return sp;
}

/// MC-dropout predictions as summaries: per-class argmax frequencies stand
/// in for the posterior probabilities and the class prior is uniform, so
/// only the PP rule is meaningful.
inline std::vector<PredictionSummary> baselineSummaries(const std::vector<McDropoutPrediction>& preds,
                                                        const std::vector<std::string>& ids,
                                                        std::span<const int> labels, const BaselineConfig& bc,
                                                        const SupportThresholds& t) {
  std::vector<PredictionSummary> out;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const std::size_t k = preds[i].class_frequency.size();
    SupportThresholds bt = t;
    bt.pp = bc.support_threshold;
    PredictionSummary s = summarizeProbabilities(ids[i], labels.empty() ? -1 : labels[i], preds[i].class_frequency,
                                                 std::vector<double>(k, 1.0 / static_cast<double>(k)), bt);
    s.predicted_class = preds[i].predicted_class;
    s.supported_pp = preds[i].supported;
    s.supported_bf = false;
    out.push_back(std::move(s));
  }
  return out;
}

inline SplitPredictions predictBaseline(const ExperimentConfig& c, const ReplicateData& rep, const BaselineModel& m,
                                        std::size_t replicate) {
  BaselineConfig bc = c.baseline;
  bc.seed = deriveSeed(baselineSeed(c.seed, replicate), 2);
  SplitPredictions sp;
  sp.in.class_names = sp.ood.class_names = rep.class_names;
  const NetworkArchitecture arch = baselineArchitecture(c, rep.arch);
  const auto pin = mcDropoutPredictBatch(m.weights, arch, rep.test_in, bc, 0);
  const auto pood = mcDropoutPredictBatch(m.weights, arch, rep.test_ood, bc, std::uint64_t{1} << 32);
  sp.in.summaries = baselineSummaries(pin, rep.test_in_ids, rep.test_in.labels, bc, c.thresholds);
  for (int y : rep.test_in.labels) sp.in.true_names.push_back(rep.class_names[static_cast<std::size_t>(y)]);
  sp.ood.summaries = baselineSummaries(pood, rep.test_ood_ids, {}, bc, c.thresholds);
  sp.ood.true_names = rep.test_ood_names;
  return sp;
}

struct ModelEvaluation {
  std::string model;  // prior name or "baseline"
  bool bf_rule = true;
  std::vector<EvaluationReport> replicates;
  AggregateReport aggregate;
};

/// Mean prior class probabilities over a set of inputs.
struct ClassBalance {
  std::vector<double> mean_probs;
  double max_min_ratio = 1.0;
};

inline ClassBalance classBalance(const PosteriorTrace& prior_trace, const Batch& inputs, PpEstimator est) {
  const RowMatrix p = empiricalPriorProbabilities(prior_trace, inputs, est);
  ClassBalance b;
  const Eigen::RowVectorXd mean = p.colwise().mean();
  b.mean_probs.assign(mean.data(), mean.data() + mean.size());
  b.max_min_ratio = mean.maxCoeff() / mean.minCoeff();
  return b;
}

struct ExperimentResult {
  std::string name;
  std::vector<ChainSummary> chains;
  std::vector<ModelEvaluation> models;
  std::map<std::string, ClassBalance> prior_balance;
  std::vector<std::string> prediction_files;

  const ModelEvaluation& model(const std::string& m) const {
    for (const auto& x : models)
      if (x.model == m) return x;
    throw InvalidInput("experiment has no model '" + m + "'");
  }
};

inline nlohmann::json toJson(const ChainSummary& s) {
  return {{"label", s.label},   {"prior", s.prior},         {"mode", s.mode},
          {"replicate", s.replicate}, {"seed", s.seed},     {"samples", s.samples},
          {"acceptance_rate", s.acceptance_rate}, {"window", s.window}, {"ess", s.ess},
          {"ess_zero_variance", s.ess_zero_variance}, {"below_ess_floor", s.below_ess_floor}};
}

inline nlohmann::json toJson(const ExperimentResult& r) {
  nlohmann::json models = nlohmann::json::array();
  for (const auto& m : r.models) {
    nlohmann::json reps = nlohmann::json::array();
    for (const auto& rep : m.replicates) reps.push_back(toJson(rep));
    models.push_back({{"model", m.model}, {"bf_rule", m.bf_rule}, {"replicates", reps}, {"aggregate", toJson(m.aggregate)}});
  }
  nlohmann::json chains = nlohmann::json::array();
  for (const auto& c : r.chains) chains.push_back(toJson(c));
  nlohmann::json balance = nlohmann::json::object();
  for (const auto& [k, b] : r.prior_balance) balance[k] = {{"mean_probs", b.mean_probs}, {"max_min_ratio", b.max_min_ratio}};
  return {{"experiment", r.name}, {"chains", chains}, {"models", models}, {"prior_class_balance", balance}};
}

inline std::string resultCsv(const ExperimentResult& r) {
  std::string out = std::string(kReportCsvHeader) + '\n';
  for (const auto& m : r.models) {
    for (std::size_t i = 0; i < m.replicates.size(); ++i)
      out += reportCsvRows(r.name, m.model, replicateTag(i), m.replicates[i], m.bf_rule);
    out += aggregateCsvRows(r.name, m.model, m.aggregate, m.bf_rule);
  }
  return out;
}

inline void writeText(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

inline nlohmann::json trainingJson(const ExperimentConfig& c, const TrainedExperiment& t) {
  nlohmann::json chains = nlohmann::json::array();
  for (const auto& s : t.chains) chains.push_back(toJson(s));
  nlohmann::json base = nlohmann::json::array();
  for (std::size_t r = 0; r < t.baselines.size(); ++r) {
    if (!t.baselines[r]) continue;
    nlohmann::json epochs = nlohmann::json::array();
    for (const auto& e : t.baselines[r]->log.epochs)
      epochs.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"validation_loss", e.validation_loss}});
    base.push_back({{"replicate", r}, {"best_epoch", t.baselines[r]->log.best_epoch}, {"epochs", epochs},
                    {"warnings", t.baselines[r]->log.warnings}});
  }
  return {{"experiment", c.name}, {"seed", c.seed}, {"chains", chains}, {"baseline", base}};
}

/// Predictions and reports from trained chains. Writes files when `out` is set.
inline ExperimentResult evaluateExperiment(const ExperimentConfig& c, const TrainedExperiment& t, std::size_t threads,
                                           const ProgressLog& log, const OutputPaths* out = nullptr) {
  ExperimentResult res;
  res.name = c.name;
  res.chains = t.chains;
  const std::size_t n_rep = t.replicates.size();

  // Slot per (model, replicate).
  std::vector<std::string> model_names;
  for (const auto& p : c.priors) model_names.emplace_back(priorName(p.kind));
  if (c.baseline_enabled) model_names.emplace_back("baseline");
  std::vector<std::vector<SplitPredictions>> preds(model_names.size(), std::vector<SplitPredictions>(n_rep));
  std::vector<std::function<void()>> jobs;
  for (std::size_t m = 0; m < c.priors.size(); ++m)
    for (std::size_t r = 0; r < n_rep; ++r)
      jobs.push_back([&, m, r] {
        const PriorKind k = c.priors[m].kind;
        preds[m][r] = predictBnn(c, t.replicates[r], t.posterior_traces[r].at(k), t.prior_traces.at(k));
      });
  if (c.baseline_enabled)
    for (std::size_t r = 0; r < n_rep; ++r)
      jobs.push_back([&, r] { preds.back()[r] = predictBaseline(c, t.baseline_data[r], *t.baselines[r], r); });
  runJobs(jobs, threads);

  for (std::size_t m = 0; m < model_names.size(); ++m) {
    ModelEvaluation ev;
    ev.model = model_names[m];
    ev.bf_rule = ev.model != "baseline";
    SupportThresholds th = c.thresholds;
    if (!ev.bf_rule) th.pp = c.baseline.support_threshold;
    for (std::size_t r = 0; r < n_rep; ++r) {
      const SplitPredictions& sp = preds[m][r];
      ev.replicates.push_back(sp.ood.summaries.empty() ? evaluateInDistribution(sp.in.summaries, th)
                                                       : evaluateRun(sp.in.summaries, sp.ood.summaries, th));
      if (out) {
        const std::string stem = c.name + "_" + replicateTag(r) + "_" + ev.model;
        const fs::path pin = out->predictions / (stem + "_in.csv");
        const fs::path pood = out->predictions / (stem + "_ood.csv");
        writePredictionsFile(pin.string(), sp.in);
        res.prediction_files.push_back(pin.string());
        if (!sp.ood.summaries.empty()) {
          writePredictionsFile(pood.string(), sp.ood);
          res.prediction_files.push_back(pood.string());
        }
      }
    }
    ev.aggregate = aggregate(ev.replicates);
    const StatRange& acc = ev.aggregate.at("accuracy");
    std::string msg = "[evaluate] " + c.name + " " + ev.model + ": accuracy " + detail::formatDouble(acc.mean);
    if (ev.aggregate.stats.count("fpr_ood_pp"))
      msg += ", OOD FPR(PP) " + detail::formatDouble(ev.aggregate.at("fpr_ood_pp").mean);
    log.line(msg);
    res.models.push_back(std::move(ev));
  }

  Batch all_test = t.replicates.front().test_in;
  const Batch& ood = t.replicates.front().test_ood;
  if (ood.size() > 0) {
    RowMatrix stacked(all_test.inputs.rows() + ood.inputs.rows(), all_test.inputs.cols());
    stacked << all_test.inputs, ood.inputs;
    all_test.inputs = std::move(stacked);
  }
  for (const auto& p : c.priors)
    res.prior_balance[std::string(priorName(p.kind))] = classBalance(t.prior_traces.at(p.kind), all_test, c.estimator);

  if (out) {
    writeText(out->reports / (c.name + "_report.json"), toJson(res).dump(2) + "\n");
    writeText(out->reports / (c.name + "_table.csv"), resultCsv(res));
  }
  return res;
}

/// Full pipeline: data, chains, baseline, predictions, reports.
inline ExperimentResult runExperiment(const ExperimentConfig& c, std::size_t threads, const ProgressLog& log,
                                      const std::optional<fs::path>& out_dir) {
  const PreparedData data = prepareData(c);
  std::optional<OutputPaths> out;
  if (out_dir) {
    out.emplace(*out_dir);
    out->create();
  }
  const TrainedExperiment t = trainExperiment(c, data, threads, log, out ? &*out : nullptr);
  if (out) writeText(out->reports / (c.name + "_training.json"), trainingJson(c, t).dump(2) + "\n");
  return evaluateExperiment(c, t, threads, log, out ? &*out : nullptr);
}

}  // namespace bnnprior
