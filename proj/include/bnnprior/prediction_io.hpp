#pragma once

/// Predictions CSV:
///   instance_id,true_label,pred_label,pp_pred,prior_pred,bf_pred,supported_pp,supported_bf,
///   pp_<class>...,prior_<class>...
/// Labels are class names; true_label is empty when unknown. Booleans are 0/1.

#include <algorithm>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "bnnprior/datasets.hpp"
#include "bnnprior/error.hpp"
#include "bnnprior/evidence.hpp"

namespace bnnprior {

struct PredictionTable {
  std::vector<std::string> class_names;       // network output classes
  std::vector<std::string> true_names;        // per row, possibly a class the network never saw
  std::vector<PredictionSummary> summaries;
};

inline void writePredictions(std::ostream& out, const PredictionTable& table) {
  const auto& names = table.class_names;
  if (table.true_names.size() != table.summaries.size())
    throw InvalidInput("prediction table: one true label name per row required");
  out << "instance_id,true_label,pred_label,pp_pred,prior_pred,bf_pred,supported_pp,supported_bf";
  for (const auto& c : names) out << ',' << detail::csvQuote("pp_" + c);
  for (const auto& c : names) out << ',' << detail::csvQuote("prior_" + c);
  out << '\n';
  for (std::size_t i = 0; i < table.summaries.size(); ++i) {
    const PredictionSummary& s = table.summaries[i];
    if (s.posterior_probs.size() != names.size()) throw InvalidInput("prediction table: class count mismatch");
    out << detail::csvQuote(s.instance_id) << ',' << detail::csvQuote(table.true_names[i]) << ','
        << detail::csvQuote(names[s.predicted_class]) << ',' << detail::formatDouble(s.ppPred()) << ','
        << detail::formatDouble(s.priorPred()) << ',' << detail::formatDouble(s.bfPred()) << ','
        << (s.supported_pp ? 1 : 0) << ',' << (s.supported_bf ? 1 : 0);
    for (double v : s.posterior_probs) out << ',' << detail::formatDouble(v);
    for (double v : s.prior_probs) out << ',' << detail::formatDouble(v);
    out << '\n';
  }
  if (!out) throw IoError("failed writing predictions");
}

inline void writePredictionsFile(const std::string& path, const PredictionTable& table) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  writePredictions(out, table);
}

inline PredictionTable readPredictions(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || detail::trim(line).empty()) throw FormatError("predictions file is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::vector<std::string> header = detail::splitCsvLine(line);
  constexpr std::size_t kFixed = 8;
  if (header.size() < kFixed + 4 || header[0] != "instance_id" || header[1] != "true_label" ||
      (header.size() - kFixed) % 2 != 0)
    throw FormatError("predictions header is malformed");
  const std::size_t k = (header.size() - kFixed) / 2;
  PredictionTable table;
  for (std::size_t c = 0; c < k; ++c) {
    const std::string& h = header[kFixed + c];
    if (h.rfind("pp_", 0) != 0 || header[kFixed + k + c] != "prior_" + h.substr(3))
      throw FormatError("predictions header: unexpected class column '" + h + "'");
    table.class_names.push_back(h.substr(3));
  }

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::trim(line).empty()) continue;
    const std::vector<std::string> cells = detail::splitCsvLine(line);
    if (cells.size() != header.size())
      throw FormatError("predictions line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                        " fields, found " + std::to_string(cells.size()));
    auto number = [&](std::size_t col) {
      const auto v = detail::parseDouble(cells[col]);
      if (!v) throw FormatError("predictions line " + std::to_string(line_no) + ", column '" + header[col] +
                                "': bad number '" + cells[col] + "'");
      return *v;
    };
    auto flag = [&](std::size_t col) {
      if (cells[col] == "1") return true;
      if (cells[col] == "0") return false;
      throw FormatError("predictions line " + std::to_string(line_no) + ", column '" + header[col] +
                        "': expected 0 or 1");
    };
    PredictionSummary s;
    s.instance_id = cells[0];
    const auto it = std::find(table.class_names.begin(), table.class_names.end(), cells[1]);
    s.true_label = it == table.class_names.end() ? -1 : static_cast<int>(it - table.class_names.begin());
    for (std::size_t c = 0; c < k; ++c) s.posterior_probs.push_back(number(kFixed + c));
    for (std::size_t c = 0; c < k; ++c) s.prior_probs.push_back(number(kFixed + k + c));
    s.predicted_class = predictClass(s.posterior_probs);
    s.bayes_factors.resize(k);
    try {
      for (std::size_t c = 0; c < k; ++c)
        s.bayes_factors[c] = bayesFactor(std::clamp(s.posterior_probs[c], 0.0, 1.0), s.prior_probs[c]);
    } catch (const InvalidInput& e) {
      throw FormatError("predictions line " + std::to_string(line_no) + ": " + e.what());
    }
    s.supported_pp = flag(6);
    s.supported_bf = flag(7);
    table.true_names.push_back(cells[1]);
    table.summaries.push_back(std::move(s));
  }
  return table;
}

inline PredictionTable readPredictionsFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  return readPredictions(in);
}

}  // namespace bnnprior
