#pragma once

/// Dataset loaders, generators and class-holdout split planning.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "bnnprior/error.hpp"
#include "bnnprior/network.hpp"
#include "bnnprior/random.hpp"

namespace bnnprior {

/// Per-feature (min, max) fitted on training rows.
struct MinMaxScaler {
  std::vector<double> min;
  std::vector<double> max;

  std::size_t size() const noexcept { return min.size(); }
  bool operator==(const MinMaxScaler&) const = default;
};

struct LabeledDataset {
  RowMatrix features;  // N x F
  std::vector<int> labels;
  std::vector<std::string> class_names;  // index -> name
  std::vector<std::string> feature_names;
  std::vector<std::string> ids;  // optional per-row identifiers
  std::optional<MinMaxScaler> scaler;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t featureCount() const noexcept { return static_cast<std::size_t>(features.cols()); }
  std::size_t classCount() const noexcept { return class_names.size(); }

  std::string idOf(std::size_t row) const { return row < ids.size() ? ids[row] : std::to_string(row); }

  void validate() const {
    if (static_cast<std::size_t>(features.rows()) != labels.size())
      throw InvalidInput("dataset: feature rows and labels differ in count");
    if (!features.allFinite()) throw InvalidInput("dataset: non-finite feature value");
    for (int y : labels)
      if (y < 0 || static_cast<std::size_t>(y) >= class_names.size()) throw InvalidInput("dataset: label out of range");
  }
};

/// Rows `idx` of `data`, in the given order.
inline LabeledDataset selectRows(const LabeledDataset& data, std::span<const std::size_t> idx) {
  LabeledDataset out;
  out.features.resize(static_cast<Eigen::Index>(idx.size()), data.features.cols());
  out.labels.reserve(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= data.size()) throw InvalidInput("selectRows: row index out of range");
    out.features.row(static_cast<Eigen::Index>(i)) = data.features.row(static_cast<Eigen::Index>(idx[i]));
    out.labels.push_back(data.labels[idx[i]]);
    if (!data.ids.empty()) out.ids.push_back(data.ids[idx[i]]);
  }
  out.class_names = data.class_names;
  out.feature_names = data.feature_names;
  out.scaler = data.scaler;
  return out;
}

// ---------------------------------------------------------------- CSV

namespace detail {

inline std::vector<std::string> splitCsvLine(std::string_view line) {
  std::vector<std::string> cells;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  cells.push_back(std::move(cur));
  return cells;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::optional<double> parseDouble(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

}  // namespace detail

/// Reads a headered, comma-separated file. Every column except
/// `label_column` (and `id_column`, if named) must be numeric. Labels map to
/// contiguous indices in order of first appearance.
inline LabeledDataset loadCsv(const std::string& path, const std::string& label_column,
                              const std::string& id_column = "") {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path + ": missing header row");
  std::vector<std::string> header = detail::splitCsvLine(line);
  for (auto& h : header) h = std::string(detail::trim(h));

  // An empty label column name reads an unlabeled file: every row gets the
  // single class "".
  const auto label_it = std::find(header.begin(), header.end(), label_column);
  if (!label_column.empty() && label_it == header.end())
    throw ConfigError(path + ": label column '" + label_column + "' not found");
  const std::optional<std::size_t> label_col =
      label_column.empty() ? std::nullopt : std::optional<std::size_t>(label_it - header.begin());
  std::optional<std::size_t> id_col;
  if (!id_column.empty()) {
    const auto it = std::find(header.begin(), header.end(), id_column);
    if (it == header.end()) throw ConfigError(path + ": id column '" + id_column + "' not found");
    id_col = static_cast<std::size_t>(it - header.begin());
  }

  LabeledDataset data;
  std::vector<std::size_t> feature_cols;
  for (std::size_t c = 0; c < header.size(); ++c)
    if (c != label_col && c != id_col) {
      feature_cols.push_back(c);
      data.feature_names.push_back(header[c]);
    }

  std::map<std::string, int> class_index;
  std::vector<double> values;
  std::size_t row = 0;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::splitCsvLine(line);
    if (cells.size() != header.size())
      throw FormatError(path + ": line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                        " cells, header has " + std::to_string(header.size()));
    for (std::size_t c : feature_cols) {
      const auto v = detail::parseDouble(cells[c]);
      if (!v || !std::isfinite(*v))
        throw FormatError(path + ": non-numeric value '" + cells[c] + "' at line " + std::to_string(line_no) +
                          ", column '" + header[c] + "'");
      values.push_back(*v);
    }
    const std::string label(label_col ? detail::trim(cells[*label_col]) : std::string_view());
    auto [it, inserted] = class_index.try_emplace(label, static_cast<int>(data.class_names.size()));
    if (inserted) data.class_names.push_back(label);
    data.labels.push_back(it->second);
    if (id_col) data.ids.emplace_back(detail::trim(cells[*id_col]));
    ++row;
  }
  data.features = ConstRowMap(values.data(), static_cast<Eigen::Index>(row),
                              static_cast<Eigen::Index>(feature_cols.size()));
  data.validate();
  return data;
}

// the inverse of loadCsv for plain datasets (ids written when present)
inline void writeCsv(const std::string& path, const LabeledDataset& data, const std::string& label_column = "label",
                     const std::string& id_column = "id");

// ---------------------------------------------------------------- scaling

inline MinMaxScaler minMaxFit(const RowMatrix& train) {
  MinMaxScaler s;
  const auto f = static_cast<std::size_t>(train.cols());
  s.min.resize(f);
  s.max.resize(f);
  for (Eigen::Index c = 0; c < train.cols(); ++c) {
    s.min[static_cast<std::size_t>(c)] = train.rows() > 0 ? train.col(c).minCoeff() : 0.0;
    s.max[static_cast<std::size_t>(c)] = train.rows() > 0 ? train.col(c).maxCoeff() : 0.0;
  }
  return s;
}

/// (x - min) / (max - min), unclipped; constant features map to 0.
inline RowMatrix minMaxApply(const MinMaxScaler& s, const RowMatrix& rows) {
  if (static_cast<std::size_t>(rows.cols()) != s.size()) throw InvalidInput("minMaxApply: feature count mismatch");
  RowMatrix out(rows.rows(), rows.cols());
  for (Eigen::Index c = 0; c < rows.cols(); ++c) {
    const double lo = s.min[static_cast<std::size_t>(c)];
    const double range = s.max[static_cast<std::size_t>(c)] - lo;
    if (range > 0.0)
      out.col(c) = (rows.col(c).array() - lo) / range;
    else
      out.col(c).setZero();
  }
  return out;
}

inline RowMatrix minMaxInverse(const MinMaxScaler& s, const RowMatrix& scaled) {
  if (static_cast<std::size_t>(scaled.cols()) != s.size()) throw InvalidInput("minMaxInverse: feature count mismatch");
  RowMatrix out(scaled.rows(), scaled.cols());
  for (Eigen::Index c = 0; c < scaled.cols(); ++c) {
    const double lo = s.min[static_cast<std::size_t>(c)];
    const double range = s.max[static_cast<std::size_t>(c)] - lo;
    if (range > 0.0)
      out.col(c) = scaled.col(c).array() * range + lo;
    else
      out.col(c).setConstant(lo);
  }
  return out;
}

/// Fits on `train` and stores the scaler in it; returns the scaler.
inline MinMaxScaler minMaxFitTransform(LabeledDataset& train) {
  MinMaxScaler s = minMaxFit(train.features);
  train.features = minMaxApply(s, train.features);
  train.scaler = s;
  return s;
}

// ---------------------------------------------------------------- synthetic beta

struct SyntheticBetaConfig {
  std::size_t n_classes = 20;
  std::size_t instances_per_class = 199;
  std::size_t n_features = 10;
  double shape_low = 0.2;
  double shape_high = 5.0;
  std::uint64_t seed = 1;
  // When set, every (class, feature) uses this shape pair instead of a draw.
  std::optional<std::pair<double, double>> fixed_shapes;

  void validate() const {
    if (n_classes < 1 || instances_per_class < 1 || n_features < 1)
      throw ConfigError("simulateBeta: counts must be positive");
    if (!(shape_low > 0.0 && shape_low < shape_high)) throw ConfigError("simulateBeta: need 0 < shape_low < shape_high");
    if (fixed_shapes && !(fixed_shapes->first > 0.0 && fixed_shapes->second > 0.0))
      throw ConfigError("simulateBeta: fixed shapes must be positive");
  }
};

struct BetaShapes {
  // [class][feature] -> (a, b)
  std::vector<std::vector<std::pair<double, double>>> per_class;
};

/// Beta(a, b) draw strictly inside (0, 1).
inline double sampleBeta(double a, double b, Rng& rng) {
  std::gamma_distribution<double> ga(a, 1.0);
  std::gamma_distribution<double> gb(b, 1.0);
  for (;;) {
    const double x = ga(rng);
    const double y = gb(rng);
    const double v = x / (x + y);
    // Small shapes underflow to exactly 0 or 1 now and then; redraw.
    if (v > 0.0 && v < 1.0) return v;
  }
}

/// Rows are ordered class by class. Shape pairs are drawn first (class-major,
/// feature-minor), then instances.
inline LabeledDataset simulateBeta(const SyntheticBetaConfig& cfg, BetaShapes* shapes_out = nullptr) {
  cfg.validate();
  Rng rng(cfg.seed);
  BetaShapes shapes;
  shapes.per_class.resize(cfg.n_classes);
  for (auto& cls : shapes.per_class) {
    cls.resize(cfg.n_features);
    for (auto& ab : cls) {
      if (cfg.fixed_shapes) {
        ab = *cfg.fixed_shapes;
      } else {
        ab.first = uniform(rng, cfg.shape_low, cfg.shape_high);
        ab.second = uniform(rng, cfg.shape_low, cfg.shape_high);
      }
    }
  }
  LabeledDataset data;
  const auto n = static_cast<Eigen::Index>(cfg.n_classes * cfg.instances_per_class);
  data.features.resize(n, static_cast<Eigen::Index>(cfg.n_features));
  Eigen::Index row = 0;
  for (std::size_t k = 0; k < cfg.n_classes; ++k) {
    data.class_names.push_back(std::to_string(k));
    for (std::size_t i = 0; i < cfg.instances_per_class; ++i, ++row) {
      for (std::size_t f = 0; f < cfg.n_features; ++f) {
        const auto [a, b] = shapes.per_class[k][f];
        data.features(row, static_cast<Eigen::Index>(f)) = sampleBeta(a, b, rng);
      }
      data.labels.push_back(static_cast<int>(k));
    }
  }
  for (std::size_t f = 0; f < cfg.n_features; ++f) data.feature_names.push_back("f" + std::to_string(f));
  if (shapes_out != nullptr) *shapes_out = std::move(shapes);
  return data;
}

// ---------------------------------------------------------------- IDX (MNIST)

namespace detail {

inline std::vector<unsigned char> readAll(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t readBigEndian32(const std::vector<unsigned char>& buf, std::size_t offset, const std::string& path) {
  if (offset + 4 > buf.size()) throw FormatError(path + ": truncated IDX header");
  return (std::uint32_t{buf[offset]} << 24) | (std::uint32_t{buf[offset + 1]} << 16) |
         (std::uint32_t{buf[offset + 2]} << 8) | std::uint32_t{buf[offset + 3]};
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

/// Big-endian IDX image/label pair. Pixels are divided by 255.
inline LabeledDataset loadMnistIdx(const std::string& images_path, const std::string& labels_path) {
  const auto img = detail::readAll(images_path);
  const auto lab = detail::readAll(labels_path);
  if (detail::readBigEndian32(img, 0, images_path) != kIdxImagesMagic)
    throw FormatError(images_path + ": bad magic number (expected 0x00000803)");
  if (detail::readBigEndian32(lab, 0, labels_path) != kIdxLabelsMagic)
    throw FormatError(labels_path + ": bad magic number (expected 0x00000801)");
  const std::size_t n = detail::readBigEndian32(img, 4, images_path);
  const std::size_t rows = detail::readBigEndian32(img, 8, images_path);
  const std::size_t cols = detail::readBigEndian32(img, 12, images_path);
  const std::size_t n_labels = detail::readBigEndian32(lab, 4, labels_path);
  if (n != n_labels)
    throw FormatError("IDX files disagree on item count (" + std::to_string(n) + " images, " +
                      std::to_string(n_labels) + " labels)");
  const std::size_t pixels = rows * cols;
  if (img.size() != 16 + n * pixels) throw FormatError(images_path + ": file size does not match header");
  if (lab.size() != 8 + n) throw FormatError(labels_path + ": file size does not match header");

  LabeledDataset data;
  data.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(pixels));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < pixels; ++p)
      data.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(p)) = img[16 + i * pixels + p] / 255.0;
  int max_label = -1;
  for (std::size_t i = 0; i < n; ++i) {
    data.labels.push_back(lab[8 + i]);
    max_label = std::max(max_label, data.labels.back());
  }
  // Digit classes are named by value, so index k is digit k.
  for (int k = 0; k <= std::max(max_label, 9); ++k) data.class_names.push_back(std::to_string(k));
  for (std::size_t p = 0; p < pixels; ++p) data.feature_names.push_back("px" + std::to_string(p));
  return data;
}

/// Uniform sample of `n` rows without replacement.
inline LabeledDataset subsample(const LabeledDataset& data, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw InvalidInput("subsample: n must be >= 1");
  if (n > data.size())
    throw InvalidInput("subsample: requested " + std::to_string(n) + " rows from " + std::to_string(data.size()));
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(uniform01(rng) * static_cast<double>(idx.size() - i));
    std::swap(idx[i], idx[std::min(j, idx.size() - 1)]);
  }
  idx.resize(n);
  return selectRows(data, idx);
}

// ---------------------------------------------------------------- sequences

inline constexpr std::size_t kTripletCount = 64;

/// Overlapping width-3 windows (stride 1). Windows containing anything but
/// A/C/G/T (case-insensitive) are skipped. Index = 16*n0 + 4*n1 + n2 with
/// A=0, C=1, G=2, T=3.
inline std::array<double, kTripletCount> tripletFrequencies(std::string_view sequence) {
  auto code = [](char c) -> int {
    switch (c) {
      case 'A': case 'a': return 0;
      case 'C': case 'c': return 1;
      case 'G': case 'g': return 2;
      case 'T': case 't': return 3;
      default: return -1;
    }
  };
  std::array<double, kTripletCount> freq{};
  std::size_t counted = 0;
  for (std::size_t i = 0; i + 3 <= sequence.size(); ++i) {
    const int a = code(sequence[i]), b = code(sequence[i + 1]), c = code(sequence[i + 2]);
    if (a < 0 || b < 0 || c < 0) continue;
    freq[static_cast<std::size_t>(16 * a + 4 * b + c)] += 1.0;
    ++counted;
  }
  if (counted == 0) throw InvalidInput("tripletFrequencies: sequence has no window of three valid nucleotides");
  for (double& f : freq) f /= static_cast<double>(counted);
  return freq;
}

inline std::string tripletName(std::size_t index) {
  static constexpr char kBases[] = "ACGT";
  return {kBases[(index / 16) % 4], kBases[(index / 4) % 4], kBases[index % 4]};
}

struct SequenceRecord {
  std::string id;
  std::string sequence;
};

/// FASTA ('>' headers, sequence possibly wrapped) or one bare sequence per
/// line. Bare records get ids "seq<N>".
inline std::vector<SequenceRecord> parseSequences(std::istream& in) {
  std::vector<SequenceRecord> out;
  std::string line;
  bool in_fasta_record = false;
  while (std::getline(in, line)) {
    const std::string_view t = detail::trim(line);
    if (t.empty()) continue;
    if (t.front() == '>') {
      std::string_view id = t.substr(1);
      auto sp = id.find_first_of(" \t");
      if (sp != std::string_view::npos) id = id.substr(0, sp);
      out.push_back({std::string(id), {}});
      in_fasta_record = true;
    } else if (in_fasta_record) {
      out.back().sequence += t;
    } else {
      out.push_back({"seq" + std::to_string(out.size()), std::string(t)});
    }
  }
  return out;
}

// ---------------------------------------------------------------- splits

struct SplitPlan {
  std::size_t replicate_id = 0;
  std::vector<int> in_classes;   // sorted
  std::vector<int> ood_classes;  // sorted
  std::vector<std::size_t> train_idx;
  std::vector<std::size_t> test_in_idx;
  std::vector<std::size_t> test_ood_idx;
  std::uint64_t seed = 0;
};

struct SplitOptions {
  std::size_t n_ood_classes = 1;
  std::size_t n_replicates = 1;
  double train_fraction = 0.5;
  // Absolute per-class training count; overrides train_fraction when set.
  std::optional<std::size_t> train_per_class;
  // Fixes the held-out classes for every replicate (e.g. wine class 3).
  std::optional<std::vector<int>> ood_classes;
  std::uint64_t seed = 1;
};

/// Uniform random choice of `n_ood` classes out of `n_classes`.
inline std::vector<int> chooseOodClasses(std::size_t n_classes, std::size_t n_ood, Rng& rng) {
  std::vector<int> all(n_classes);
  std::iota(all.begin(), all.end(), 0);
  for (std::size_t i = 0; i < n_ood; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n_classes - i));
    std::swap(all[i], all[std::min(j, n_classes - 1)]);
  }
  std::vector<int> ood(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_ood));
  std::sort(ood.begin(), ood.end());
  return ood;
}

inline std::vector<int> complementClasses(std::size_t n_classes, const std::vector<int>& ood) {
  std::vector<int> in;
  for (int k = 0; k < static_cast<int>(n_classes); ++k)
    if (!std::binary_search(ood.begin(), ood.end(), k)) in.push_back(k);
  return in;
}

/// Per replicate: pick the held-out classes, then split each in-distribution
/// class's rows into train/test. Held-out rows all go to the OOD test set.
inline std::vector<SplitPlan> planSplits(const LabeledDataset& data, const SplitOptions& opt) {
  const std::size_t k = data.classCount();
  if (opt.ood_classes) {
    for (int c : *opt.ood_classes)
      if (c < 0 || static_cast<std::size_t>(c) >= k) throw ConfigError("planSplits: OOD class index out of range");
  } else if (opt.n_ood_classes >= k) {
    throw ConfigError("planSplits: n_ood_classes must be smaller than the number of classes");
  }
  if (opt.n_replicates == 0) throw ConfigError("planSplits: need at least one replicate");
  if (!opt.train_per_class && !(opt.train_fraction > 0.0 && opt.train_fraction < 1.0))
    throw ConfigError("planSplits: train_fraction must be in (0, 1)");

  std::vector<std::vector<std::size_t>> rows_of(k);
  for (std::size_t i = 0; i < data.size(); ++i) rows_of[static_cast<std::size_t>(data.labels[i])].push_back(i);

  std::vector<SplitPlan> plans;
  for (std::size_t r = 0; r < opt.n_replicates; ++r) {
    SplitPlan plan;
    plan.replicate_id = r;
    plan.seed = deriveSeed(opt.seed, r);
    Rng rng(plan.seed);
    if (opt.ood_classes) {
      plan.ood_classes = *opt.ood_classes;
      std::sort(plan.ood_classes.begin(), plan.ood_classes.end());
      plan.ood_classes.erase(std::unique(plan.ood_classes.begin(), plan.ood_classes.end()), plan.ood_classes.end());
      if (plan.ood_classes.size() >= k) throw ConfigError("planSplits: every class is held out");
    } else {
      plan.ood_classes = chooseOodClasses(k, opt.n_ood_classes, rng);
    }
    plan.in_classes = complementClasses(k, plan.ood_classes);
    for (int c : plan.in_classes) {
      std::vector<std::size_t> rows = rows_of[static_cast<std::size_t>(c)];
      for (std::size_t i = rows.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i));
        std::swap(rows[i - 1], rows[std::min(j, i - 1)]);
      }
      const std::size_t n_train = opt.train_per_class
                                      ? *opt.train_per_class
                                      : static_cast<std::size_t>(std::llround(opt.train_fraction * rows.size()));
      if (n_train == 0 || n_train >= rows.size())
        throw ConfigError("planSplits: class " + data.class_names[static_cast<std::size_t>(c)] +
                          " would get an empty train or test set");
      plan.train_idx.insert(plan.train_idx.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_train));
      plan.test_in_idx.insert(plan.test_in_idx.end(), rows.begin() + static_cast<std::ptrdiff_t>(n_train), rows.end());
    }
    for (int c : plan.ood_classes) {
      const auto& rows = rows_of[static_cast<std::size_t>(c)];
      plan.test_ood_idx.insert(plan.test_ood_idx.end(), rows.begin(), rows.end());
    }
    std::sort(plan.train_idx.begin(), plan.train_idx.end());
    std::sort(plan.test_in_idx.begin(), plan.test_in_idx.end());
    std::sort(plan.test_ood_idx.begin(), plan.test_ood_idx.end());
    plans.push_back(std::move(plan));
  }
  return plans;
}

/// Splits for data that ships with a separate test set: per replicate the
/// held-out classes are drawn as in planSplits, every `pool` row of an
/// in-distribution class is a training row, and `test` rows are divided by
/// class. Indices in test_in_idx / test_ood_idx refer to `test`.
inline std::vector<SplitPlan> planTestSetSplits(const LabeledDataset& pool, const LabeledDataset& test,
                                                const SplitOptions& opt) {
  const std::size_t k = std::max(pool.classCount(), test.classCount());
  if (opt.n_replicates == 0) throw ConfigError("planSplits: need at least one replicate");
  if (!opt.ood_classes && opt.n_ood_classes >= k)
    throw ConfigError("planSplits: n_ood_classes must be smaller than the number of classes");
  std::vector<SplitPlan> plans;
  for (std::size_t r = 0; r < opt.n_replicates; ++r) {
    SplitPlan plan;
    plan.replicate_id = r;
    plan.seed = deriveSeed(opt.seed, r);
    Rng rng(plan.seed);
    if (opt.ood_classes) {
      plan.ood_classes = *opt.ood_classes;
      std::sort(plan.ood_classes.begin(), plan.ood_classes.end());
      plan.ood_classes.erase(std::unique(plan.ood_classes.begin(), plan.ood_classes.end()), plan.ood_classes.end());
      for (int c : plan.ood_classes)
        if (c < 0 || static_cast<std::size_t>(c) >= k) throw ConfigError("planSplits: OOD class index out of range");
    } else {
      plan.ood_classes = chooseOodClasses(k, opt.n_ood_classes, rng);
    }
    plan.in_classes = complementClasses(k, plan.ood_classes);
    auto held_out = [&](int c) { return std::binary_search(plan.ood_classes.begin(), plan.ood_classes.end(), c); };
    for (std::size_t i = 0; i < pool.size(); ++i)
      if (!held_out(pool.labels[i])) plan.train_idx.push_back(i);
    for (std::size_t i = 0; i < test.size(); ++i) (held_out(test.labels[i]) ? plan.test_ood_idx : plan.test_in_idx).push_back(i);
    if (plan.train_idx.empty() || plan.test_in_idx.empty())
      throw ConfigError("planSplits: an in-distribution split is empty");
    plans.push_back(std::move(plan));
  }
  return plans;
}

// ---------------------------------------------------------------- writing

namespace detail {

inline std::string formatDouble(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

inline std::string csvQuote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

}  // namespace detail

inline void writeCsv(const std::string& path, const LabeledDataset& data, const std::string& label_column,
                     const std::string& id_column) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  const bool with_ids = !data.ids.empty();
  if (with_ids) out << detail::csvQuote(id_column) << ',';
  for (std::size_t f = 0; f < data.featureCount(); ++f)
    out << detail::csvQuote(f < data.feature_names.size() ? data.feature_names[f] : "f" + std::to_string(f)) << ',';
  out << detail::csvQuote(label_column) << '\n';
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (with_ids) out << detail::csvQuote(data.ids[i]) << ',';
    for (Eigen::Index f = 0; f < data.features.cols(); ++f)
      out << detail::formatDouble(data.features(static_cast<Eigen::Index>(i), f)) << ',';
    out << detail::csvQuote(data.class_names[static_cast<std::size_t>(data.labels[i])]) << '\n';
  }
  if (!out) throw IoError("write failed for '" + path + "'");
}

}  // namespace bnnprior
