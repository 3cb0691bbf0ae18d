#pragma once

/// Trace files.
///
/// Line 1 is a JSON object describing the chain; every further line is one
/// retained sample as `iteration,log_prior,log_lik,w_0,...,w_{n-1}`. Reals
/// are written in shortest round-trip form, so a reload is bit-exact.
///
/// Besides the chain description the header may carry `classes` (names of
/// the network's output classes) and `scaler` (per-feature min/max fitted on
/// the training rows), which prediction needs to interpret raw data.

#include <charconv>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "bnnprior/datasets.hpp"
#include "bnnprior/error.hpp"
#include "bnnprior/mcmc.hpp"

namespace bnnprior {

struct TraceFile {
  PosteriorTrace trace;
  std::vector<std::string> class_names;
  std::optional<MinMaxScaler> scaler;
};

inline nlohmann::json architectureToJson(const NetworkArchitecture& a) {
  return {{"n_features", a.n_features}, {"hidden", {a.hidden[0], a.hidden[1]}}, {"n_classes", a.n_classes}};
}

inline NetworkArchitecture architectureFromJson(const nlohmann::json& j) {
  NetworkArchitecture a;
  a.n_features = j.at("n_features").get<std::size_t>();
  const auto& h = j.at("hidden");
  if (!h.is_array() || h.size() != 2) throw FormatError("architecture.hidden must list exactly two widths");
  a.hidden = {h[0].get<std::size_t>(), h[1].get<std::size_t>()};
  a.n_classes = j.at("n_classes").get<std::size_t>();
  a.validate();
  return a;
}

inline void writeTrace(std::ostream& out, const TraceFile& file) {
  const PosteriorTrace& t = file.trace;
  nlohmann::json header = {
      {"architecture", architectureToJson(t.arch)},
      {"prior", t.prior ? nlohmann::json{{"name", std::string(priorName(t.prior->kind))}, {"bound", t.prior->bound}}
                        : nlohmann::json(nullptr)},
      {"mode", std::string(traceModeName(t.mode))},
      {"seed", t.seed},
      {"iterations", t.iterations},
      {"burn_in", t.burn_in},
      {"thinning", t.thinning},
      {"window", t.window},
      {"update_fraction", t.update_fraction},
      {"acceptance_rate", t.acceptance_rate},
      {"initial_log_prior", t.initial_log_prior},
      {"initial_log_lik", t.initial_log_lik},
      {"n_samples", t.samples.size()},
  };
  if (!file.class_names.empty()) header["classes"] = file.class_names;
  if (file.scaler) header["scaler"] = {{"min", file.scaler->min}, {"max", file.scaler->max}};
  out << header.dump() << '\n';

  char buf[32];
  std::string line;
  for (const TraceSample& s : t.samples) {
    line = std::to_string(s.iteration);
    auto put = [&](double v) {
      line += ',';
      const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
      line.append(buf, ptr);
    };
    put(s.log_prior);
    put(s.log_lik);
    for (double w : s.weights) put(w);
    line += '\n';
    out << line;
  }
  if (!out) throw IoError("failed writing trace");
}

inline void writeTraceFile(const std::string& path, const TraceFile& file) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  writeTrace(out, file);
}

namespace detail {

inline double parseTraceNumber(std::string_view cell, std::size_t line_no) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc{} || ptr != cell.data() + cell.size())
    throw FormatError("trace line " + std::to_string(line_no) + ": bad number '" + std::string(cell) + "'");
  return v;
}

}  // namespace detail

inline TraceFile readTrace(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || detail::trim(line).empty()) throw FormatError("trace file is empty");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("trace header is not valid JSON: ") + e.what());
  }

  TraceFile file;
  PosteriorTrace& t = file.trace;
  try {
    t.arch = architectureFromJson(header.at("architecture"));
    if (!header.at("prior").is_null())
      t.prior = makePrior(header["prior"].at("name").get<std::string>(), header["prior"].value("bound", 5.0));
    t.mode = parseTraceMode(header.at("mode").get<std::string>());
    t.seed = header.at("seed").get<std::uint64_t>();
    t.burn_in = header.at("burn_in").get<std::uint64_t>();
    t.thinning = header.at("thinning").get<std::uint64_t>();
    t.acceptance_rate = header.at("acceptance_rate").get<double>();
    t.iterations = header.value("iterations", std::uint64_t{0});
    t.window = header.value("window", 0.0);
    t.update_fraction = header.value("update_fraction", 0.0);
    t.initial_log_prior = header.value("initial_log_prior", 0.0);
    t.initial_log_lik = header.value("initial_log_lik", 0.0);
    if (header.contains("classes")) file.class_names = header["classes"].get<std::vector<std::string>>();
    if (header.contains("scaler"))
      file.scaler = MinMaxScaler{header["scaler"].at("min").get<std::vector<double>>(),
                                 header["scaler"].at("max").get<std::vector<double>>()};
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("trace header: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("trace header: ") + e.what());
  } catch (const InvalidInput& e) {
    throw FormatError(std::string("trace header: ") + e.what());
  }

  const std::size_t n_weights = t.arch.weightCount();
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    TraceSample s;
    s.weights = WeightVector(n_weights);
    std::string_view rest(line);
    if (!rest.empty() && rest.back() == '\r') rest.remove_suffix(1);
    std::size_t field = 0;
    while (true) {
      const std::size_t comma = rest.find(',');
      const std::string_view cell = rest.substr(0, comma);
      if (field == 0) {
        const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), s.iteration);
        if (ec != std::errc{} || ptr != cell.data() + cell.size())
          throw FormatError("trace line " + std::to_string(line_no) + ": bad iteration '" + std::string(cell) + "'");
      } else if (field == 1) {
        s.log_prior = detail::parseTraceNumber(cell, line_no);
      } else if (field == 2) {
        s.log_lik = detail::parseTraceNumber(cell, line_no);
      } else if (field - 3 < n_weights) {
        s.weights[field - 3] = detail::parseTraceNumber(cell, line_no);
      } else {
        throw FormatError("trace line " + std::to_string(line_no) + ": too many fields");
      }
      ++field;
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (field != 3 + n_weights)
      throw FormatError("trace line " + std::to_string(line_no) + ": expected " + std::to_string(3 + n_weights) +
                        " fields, found " + std::to_string(field));
    t.samples.push_back(std::move(s));
  }
  if (header.contains("n_samples") && header["n_samples"].get<std::size_t>() != t.samples.size())
    throw FormatError("trace declares " + std::to_string(header["n_samples"].get<std::size_t>()) +
                      " samples but holds " + std::to_string(t.samples.size()));
  try {
    t.validate();
  } catch (const InvalidInput& e) {
    throw FormatError(std::string("trace: ") + e.what());
  }
  return file;
}

inline TraceFile readTraceFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  return readTrace(in);
}

}  // namespace bnnprior
