// bnnprior: command-line front end for the experiment pipeline.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "bnnprior/bnnprior.hpp"

#ifndef BNNPRIOR_CONFIG_DIR
#define BNNPRIOR_CONFIG_DIR "configs"
#endif

namespace fs = std::filesystem;
using namespace bnnprior;

namespace {

struct CommonOptions {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;
};

void addCommon(CLI::App* cmd, CommonOptions& o, bool config_required) {
  auto* c = cmd->add_option("--config", o.config, "Experiment config (JSON)");
  if (config_required) c->required();
  cmd->add_option("--out", o.out, "Output directory");
  cmd->add_option("--seed", o.seed, "Global seed (overrides the config)");
  cmd->add_option("--threads", o.threads, "Worker threads for independent chains")->check(CLI::PositiveNumber);
}

ExperimentConfig configFrom(const CommonOptions& o) {
  ExperimentConfig c = loadExperimentConfig(o.config);
  if (o.seed) c.seed = *o.seed;
  if (!o.out.empty()) c.output_dir = o.out;
  return c;
}

int cmdSimulate(const CommonOptions& o) {
  SyntheticBetaConfig bc;
  std::uint64_t seed = 1;
  std::string name = "beta";
  if (!o.config.empty()) {
    const ExperimentConfig c = loadExperimentConfig(o.config);
    if (c.dataset.source != "beta") throw ConfigError("simulate needs a config whose dataset.source is beta");
    bc = c.dataset.beta;
    seed = c.seed;
    name = c.name;
    if (!c.dataset.beta_seed_given || o.seed) bc.seed = deriveSeed(o.seed.value_or(seed), 1);
  } else {
    bc.seed = deriveSeed(o.seed.value_or(seed), 1);
  }
  if (!(bc.shape_low > 0.0 && bc.shape_low < bc.shape_high)) throw ConfigError("need 0 < shape_low < shape_high");
  BetaShapes shapes;
  const LabeledDataset data = simulateBeta(bc, &shapes);
  const fs::path dir = o.out.empty() ? fs::path("out") : fs::path(o.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
  writeCsv((dir / (name + ".csv")).string(), data, "label");

  nlohmann::json per_class = nlohmann::json::array();
  for (std::size_t k = 0; k < shapes.per_class.size(); ++k) {
    nlohmann::json feats = nlohmann::json::array();
    for (const auto& [a, b] : shapes.per_class[k]) feats.push_back({a, b});
    per_class.push_back({{"class", data.class_names[k]}, {"shapes", feats}});
  }
  const nlohmann::json manifest = {{"n_classes", bc.n_classes},     {"instances_per_class", bc.instances_per_class},
                                   {"n_features", bc.n_features},   {"shape_low", bc.shape_low},
                                   {"shape_high", bc.shape_high},   {"seed", bc.seed},
                                   {"rows", data.size()},           {"classes", per_class}};
  writeText(dir / (name + "_manifest.json"), manifest.dump(2) + "\n");
  std::cerr << "[simulate] wrote " << data.size() << " rows to " << (dir / (name + ".csv")).string() << '\n';
  return 0;
}

int cmdTrain(const CommonOptions& o) {
  const ExperimentConfig c = configFrom(o);
  const ProgressLog log;
  const PreparedData data = prepareData(c);
  const OutputPaths out{fs::path(c.output_dir)};
  const TrainedExperiment t = trainExperiment(c, data, o.threads, log, &out);
  writeText(out.reports / (c.name + "_training.json"), trainingJson(c, t).dump(2) + "\n");
  std::cout << "chain,samples,acceptance_rate,ess\n";
  for (const ChainSummary& s : t.chains)
    std::cout << s.label << ',' << s.samples << ',' << detail::formatDouble(s.acceptance_rate) << ','
              << detail::formatDouble(s.ess) << '\n';
  return 0;
}

struct PredictOptions {
  std::string trace, prior_trace, data, images, labels, label_column = "label", id_column, output;
  std::optional<double> pp, bf;
  std::string estimator;
};

int cmdPredict(const CommonOptions& o, const PredictOptions& p) {
  SupportThresholds th;
  PpEstimator est = PpEstimator::MeanSoftmax;
  if (!o.config.empty()) {
    const ExperimentConfig c = loadExperimentConfig(o.config);
    th = c.thresholds;
    est = c.estimator;
  }
  if (p.pp) th.pp = *p.pp;
  if (p.bf) th.bf = *p.bf;
  if (!p.estimator.empty()) est = parsePpEstimator(p.estimator);
  th.validate();

  const TraceFile post = readTraceFile(p.trace);
  const TraceFile prior = readTraceFile(p.prior_trace);
  if (post.trace.mode != TraceMode::Posterior) throw InvalidInput("--trace must be a posterior trace");

  LabeledDataset data;
  if (!p.data.empty()) data = loadCsv(p.data, p.label_column, p.id_column);
  else if (!p.images.empty()) data = loadMnistIdx(p.images, p.labels);
  else throw ConfigError("predict needs --data or --images/--labels");
  if (data.featureCount() != post.trace.arch.n_features)
    throw InvalidInput("data has " + std::to_string(data.featureCount()) + " features, trace expects " +
                       std::to_string(post.trace.arch.n_features));
  RowMatrix x = data.features;
  if (post.scaler) x = minMaxApply(*post.scaler, x);

  std::vector<std::string> names = post.class_names;
  if (names.empty())
    for (std::size_t k = 0; k < post.trace.arch.n_classes; ++k) names.push_back(std::to_string(k));
  PredictionTable table;
  table.class_names = names;
  std::vector<int> labels;
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::string& truth = data.class_names[static_cast<std::size_t>(data.labels[i])];
    const auto it = std::find(names.begin(), names.end(), truth);
    labels.push_back(it == names.end() ? -1 : static_cast<int>(it - names.begin()));
    table.true_names.push_back(truth);
    ids.push_back(data.ids.empty() ? "row" + std::to_string(i) : data.ids[i]);
  }
  table.summaries = summarizeBatch(post.trace, prior.trace, makeBatch(x), ids, labels, th, est);

  if (p.output.empty() || p.output == "-") {
    writePredictions(std::cout, table);
  } else {
    const fs::path dest(p.output);
    if (dest.has_parent_path()) fs::create_directories(dest.parent_path());
    writePredictionsFile(dest.string(), table);
    std::cerr << "[predict] wrote " << table.summaries.size() << " predictions to " << dest.string() << '\n';
  }
  return 0;
}

struct EvaluateOptions {
  std::string in, ood, dir, dataset = "data", model = "model";
  std::optional<double> pp, bf;
};

struct EvalGroup {
  std::string dataset, model;
  std::vector<std::pair<std::string, std::string>> runs;  // (in, ood) paths; ood may be empty
};

EvaluationReport evaluateFiles(const std::string& in_path, const std::string& ood_path, const SupportThresholds& th) {
  const PredictionTable in = readPredictionsFile(in_path);
  if (ood_path.empty()) {
    std::cerr << "[evaluate] warning: no out-of-distribution predictions for " << in_path
              << "; OOD fields are null\n";
    return evaluateInDistribution(in.summaries, th);
  }
  const PredictionTable ood = readPredictionsFile(ood_path);
  return evaluateRun(in.summaries, ood.summaries, th);
}

int cmdEvaluate(const CommonOptions& o, const EvaluateOptions& e) {
  SupportThresholds th;
  double baseline_threshold = 0.95;
  if (!o.config.empty()) {
    const ExperimentConfig c = loadExperimentConfig(o.config);
    th = c.thresholds;
    baseline_threshold = c.baseline.support_threshold;
  }
  if (e.pp) th.pp = *e.pp;
  if (e.bf) th.bf = *e.bf;
  th.validate();

  std::vector<EvalGroup> groups;
  if (!e.dir.empty()) {
    if (!fs::is_directory(e.dir)) throw IoError("'" + e.dir + "' is not a directory");
    const std::regex pattern(R"((.+)_(r\d+)_(.+)_in\.csv)");
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(e.dir)) files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const fs::path& f : files) {
      std::smatch m;
      const std::string fname = f.filename().string();
      if (!std::regex_match(fname, m, pattern)) continue;
      const std::string ds = m[1], model = m[3];
      auto it = std::find_if(groups.begin(), groups.end(), [&](const EvalGroup& g) { return g.dataset == ds && g.model == model; });
      if (it == groups.end()) {
        groups.push_back({ds, model, {}});
        it = groups.end() - 1;
      }
      const fs::path ood = f.parent_path() / (std::string(m[1]) + "_" + std::string(m[2]) + "_" + model + "_ood.csv");
      it->runs.emplace_back(f.string(), fs::exists(ood) ? ood.string() : std::string());
    }
    if (groups.empty()) throw FormatError("no '<name>_r<k>_<model>_in.csv' files in '" + e.dir + "'");
  } else {
    if (e.in.empty()) throw ConfigError("evaluate needs --in or --dir");
    groups.push_back({e.dataset, e.model, {{e.in, e.ood}}});
  }

  nlohmann::json doc = nlohmann::json::array();
  std::string csv = std::string(kReportCsvHeader) + '\n';
  for (const EvalGroup& g : groups) {
    const bool bf_rule = g.model != "baseline";
    SupportThresholds gth = th;
    if (!bf_rule) gth.pp = baseline_threshold;
    std::vector<EvaluationReport> reports;
    for (const auto& [in, ood] : g.runs) reports.push_back(evaluateFiles(in, ood, gth));
    nlohmann::json reps = nlohmann::json::array();
    for (std::size_t r = 0; r < reports.size(); ++r) {
      reps.push_back(toJson(reports[r]));
      csv += reportCsvRows(g.dataset, g.model, replicateTag(r), reports[r], bf_rule);
    }
    const AggregateReport agg = aggregate(reports);
    csv += aggregateCsvRows(g.dataset, g.model, agg, bf_rule);
    doc.push_back({{"dataset", g.dataset}, {"model", g.model}, {"replicates", reps}, {"aggregate", toJson(agg)}});
  }

  if (o.out.empty()) {
    std::cout << doc.dump(2) << '\n';
  } else {
    const OutputPaths out{fs::path(o.out)};
    out.create();
    writeText(out.reports / "evaluation.json", doc.dump(2) + "\n");
    writeText(out.reports / "evaluation.csv", csv);
    std::cerr << "[evaluate] wrote " << (out.reports / "evaluation.json").string() << '\n';
  }
  return 0;
}

int cmdReproduce(const CommonOptions& o, const std::string& name, std::optional<std::size_t> replicates) {
  static const std::vector<std::string> known = {"wine", "beta", "mnist"};
  if (std::find(known.begin(), known.end(), name) == known.end())
    throw ConfigError("unknown experiment '" + name + "' (expected wine, beta or mnist)");
  CommonOptions co = o;
  if (co.config.empty()) co.config = (fs::path(BNNPRIOR_CONFIG_DIR) / (name + ".json")).string();
  ExperimentConfig c = configFrom(co);
  if (replicates) c.split.n_replicates = *replicates;
  const ProgressLog log;
  const ExperimentResult res = runExperiment(c, o.threads, log, fs::path(c.output_dir));
  std::cout << resultCsv(res);
  return 0;
}

int cmdFeaturize(const std::string& input, const std::string& output, const std::string& label) {
  std::ifstream in(input);
  if (!in) throw IoError("cannot open '" + input + "'");
  const std::vector<SequenceRecord> records = parseSequences(in);
  if (records.empty()) throw FormatError("'" + input + "' holds no sequences");
  std::ofstream out(output, std::ios::binary);
  if (!out) throw IoError("cannot write '" + output + "'");
  out << "id";
  for (std::size_t k = 0; k < kTripletCount; ++k) out << ',' << tripletName(k);
  if (!label.empty()) out << ",label";
  out << '\n';
  for (const SequenceRecord& r : records) {
    const auto f = tripletFrequencies(r.sequence);
    out << detail::csvQuote(r.id);
    for (double v : f) out << ',' << detail::formatDouble(v);
    if (!label.empty()) out << ',' << detail::csvQuote(label);
    out << '\n';
  }
  if (!out) throw IoError("write failed for '" + output + "'");
  std::cerr << "[featurize] wrote " << records.size() << " rows to " << output << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian neural networks under alternative weight priors: MCMC training and prediction support"};
  app.require_subcommand(1);

  CommonOptions common;
  auto* simulate = app.add_subcommand("simulate", "Write a synthetic beta-feature dataset and its shape manifest");
  addCommon(simulate, common, false);

  auto* train = app.add_subcommand("train", "Run posterior and prior-only chains (and the baseline) for a config");
  addCommon(train, common, true);

  PredictOptions popt;
  auto* predict = app.add_subcommand("predict", "Score a dataset with a posterior and a prior-only trace");
  addCommon(predict, common, false);
  predict->add_option("--trace", popt.trace, "Posterior trace")->required();
  predict->add_option("--prior-trace", popt.prior_trace, "Prior-only trace")->required();
  predict->add_option("--data", popt.data, "CSV to score");
  predict->add_option("--images", popt.images, "IDX image file to score");
  predict->add_option("--labels", popt.labels, "IDX label file matching --images");
  predict->add_option("--label-column", popt.label_column, "Label column in --data (empty for unlabeled)");
  predict->add_option("--id-column", popt.id_column, "Instance id column in --data");
  predict->add_option("--output", popt.output, "Predictions CSV (default stdout)");
  predict->add_option("--pp", popt.pp, "PP support threshold");
  predict->add_option("--bf", popt.bf, "Bayes-factor support threshold");
  predict->add_option("--estimator", popt.estimator, "mean_softmax or argmax_frequency");

  EvaluateOptions eopt;
  auto* evaluate = app.add_subcommand("evaluate", "Score prediction files into a report");
  addCommon(evaluate, common, false);
  evaluate->add_option("--in", eopt.in, "In-distribution predictions CSV");
  evaluate->add_option("--ood", eopt.ood, "Out-of-distribution predictions CSV");
  evaluate->add_option("--dir", eopt.dir, "Directory of <name>_r<k>_<model>_{in,ood}.csv files");
  evaluate->add_option("--dataset", eopt.dataset, "Dataset label for single-file reports");
  evaluate->add_option("--model", eopt.model, "Model label for single-file reports");
  evaluate->add_option("--pp", eopt.pp, "PP support threshold");
  evaluate->add_option("--bf", eopt.bf, "Bayes-factor support threshold");

  std::string experiment;
  std::optional<std::size_t> replicates;
  auto* reproduce = app.add_subcommand("reproduce", "Run a bundled experiment end to end (wine, beta, mnist)");
  addCommon(reproduce, common, false);
  reproduce->add_option("experiment", experiment, "wine, beta or mnist")->required();
  reproduce->add_option("--replicates", replicates, "Override the number of replicates");

  std::string fasta, featurize_out, featurize_label;
  auto* featurize = app.add_subcommand("featurize", "Nucleotide triplet frequencies from FASTA or one-per-line input");
  featurize->add_option("--input", fasta, "Sequence file")->required();
  featurize->add_option("--out", featurize_out, "Output CSV")->required();
  featurize->add_option("--label", featurize_label, "Constant label column value");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*simulate) return cmdSimulate(common);
    if (*train) return cmdTrain(common);
    if (*predict) return cmdPredict(common, popt);
    if (*evaluate) return cmdEvaluate(common, eopt);
    if (*reproduce) return cmdReproduce(common, experiment, replicates);
    if (*featurize) return cmdFeaturize(fasta, featurize_out, featurize_label);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exitCodeFor(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 1;
}
