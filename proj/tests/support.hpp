#pragma once

// Independent oracles shared by the test binaries. Nothing here calls into
// the library's own density, CDF or counting code.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <numbers>
#include <string>
#include <vector>

#include <unistd.h>

namespace oracle {

namespace fs = std::filesystem;

inline double uniformCdf(double w, double b) { return std::clamp((w + b) / (2.0 * b), 0.0, 1.0); }

inline double normalCdf(double w) { return 0.5 * (1.0 + std::erf(w / std::sqrt(2.0))); }

inline double truncatedCauchyCdf(double w, double b) {
  if (w <= -b) return 0.0;
  if (w >= b) return 1.0;
  // P(-b < X <= w) / P(|X| <= b) for a standard Cauchy.
  const double lo = 0.5 + std::atan(-b) / std::numbers::pi;
  const double hi = 0.5 + std::atan(b) / std::numbers::pi;
  return (0.5 + std::atan(w) / std::numbers::pi - lo) / (hi - lo);
}

inline double laplaceCdf(double w) { return w < 0.0 ? 0.5 * std::exp(w) : 1.0 - 0.5 * std::exp(-w); }

/// Two-sided one-sample Kolmogorov-Smirnov statistic.
inline double ksStatistic(std::vector<double> x, const std::function<double(double)>& cdf) {
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = cdf(x[i]);
    d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  return d;
}

/// Composite Simpson rule on [a, b] with `panels` (even) subintervals.
inline double simpson(const std::function<double(double)>& f, double a, double b, std::size_t panels) {
  if (panels % 2 != 0) ++panels;
  const double h = (b - a) / static_cast<double>(panels);
  double s = f(a) + f(b);
  for (std::size_t i = 1; i < panels; ++i) s += f(a + h * static_cast<double>(i)) * (i % 2 == 1 ? 4.0 : 2.0);
  return s * h / 3.0;
}

inline double mean(const std::vector<double>& x) {
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

inline double variance(const std::vector<double>& x) {
  const double m = mean(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size() - 1);
}

/// Batch-means Monte Carlo standard error of the mean.
inline double batchMeansStandardError(const std::vector<double>& x, std::size_t batches = 50) {
  const std::size_t len = x.size() / batches;
  std::vector<double> means;
  for (std::size_t b = 0; b < batches; ++b) {
    double s = 0.0;
    for (std::size_t i = b * len; i < (b + 1) * len; ++i) s += x[i];
    means.push_back(s / static_cast<double>(len));
  }
  return std::sqrt(variance(means) / static_cast<double>(batches));
}

/// Raw counts for one split, recomputed from the probability vectors alone.
struct Recount {
  std::size_t n = 0, correct = 0, tp_pp = 0, tp_bf = 0, fp_pp = 0, fp_bf = 0;
};

template <typename Summary>
Recount recount(const std::vector<Summary>& rows, double pp_cut, double bf_cut, bool out_of_distribution) {
  Recount r;
  for (const Summary& s : rows) {
    std::size_t arg = 0;
    for (std::size_t k = 1; k < s.posterior_probs.size(); ++k)
      if (s.posterior_probs[k] > s.posterior_probs[arg]) arg = k;
    const double p = s.posterior_probs[arg];
    const double q = s.prior_probs[arg];
    const double bf = p >= 1.0 ? INFINITY : (p / (1 - p)) / (q / (1 - q));
    const bool ok = !out_of_distribution && s.true_label == static_cast<int>(arg);
    const bool sup_pp = p > pp_cut, sup_bf = bf > bf_cut;
    ++r.n;
    r.correct += ok;
    r.tp_pp += ok && sup_pp;
    r.tp_bf += ok && sup_bf;
    r.fp_pp += !ok && sup_pp;
    r.fp_bf += !ok && sup_bf;
  }
  return r;
}

inline std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("bnnprior_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

/// Every regular file below `root`, as sorted relative paths.
inline std::vector<fs::path> listFiles(const fs::path& root) {
  std::vector<fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out.push_back(fs::relative(e.path(), root));
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace oracle
