#pragma once

/// I.i.d. priors on every network weight (bias column included).

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <string_view>

#include "bnnprior/error.hpp"
#include "bnnprior/random.hpp"

namespace bnnprior {

enum class PriorKind { Uniform, Normal, TruncatedCauchy, Laplace };

/// Normal and Laplace are fixed at location 0, scale 1. `bound` is the
/// half-width of the uniform support and the truncation point of the
/// Cauchy(0, 1); it is ignored by the other two families.
struct PriorSpec {
  PriorKind kind = PriorKind::Normal;
  double bound = 5.0;

  void validate() const {
    if (!(bound > 0.0) || !std::isfinite(bound)) throw ConfigError("prior bound must be a positive finite number");
  }

  bool bounded() const noexcept { return kind == PriorKind::Uniform || kind == PriorKind::TruncatedCauchy; }

  bool operator==(const PriorSpec&) const = default;
};

inline constexpr PriorKind kAllPriorKinds[] = {PriorKind::Uniform, PriorKind::Normal, PriorKind::TruncatedCauchy,
                                               PriorKind::Laplace};

inline std::string_view priorName(PriorKind kind) noexcept {
  switch (kind) {
    case PriorKind::Uniform: return "uniform";
    case PriorKind::Normal: return "normal";
    case PriorKind::TruncatedCauchy: return "cauchy";
    case PriorKind::Laplace: return "laplace";
  }
  return "?";
}

inline PriorKind parsePriorKind(std::string_view name) {
  for (PriorKind k : kAllPriorKinds)
    if (priorName(k) == name) return k;
  throw ConfigError("unknown prior '" + std::string(name) + "' (expected uniform, normal, cauchy or laplace)");
}

inline PriorSpec makePrior(std::string_view name, double bound = 5.0) {
  PriorSpec spec{parsePriorKind(name), bound};
  spec.validate();
  return spec;
}

/// Mass of Cauchy(0, 1) on [-b, b].
inline double truncatedCauchyMass(double bound) { return 2.0 / std::numbers::pi * std::atan(bound); }

inline double logDensityWeight(const PriorSpec& spec, double w) {
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  switch (spec.kind) {
    case PriorKind::Uniform:
      return std::abs(w) <= spec.bound ? -std::log(2.0 * spec.bound) : kNegInf;
    case PriorKind::Normal:
      return -0.5 * std::log(2.0 * std::numbers::pi) - 0.5 * w * w;
    case PriorKind::TruncatedCauchy:
      if (std::abs(w) > spec.bound) return kNegInf;
      return -std::log(std::numbers::pi) - std::log1p(w * w) - std::log(truncatedCauchyMass(spec.bound));
    case PriorKind::Laplace:
      return -std::numbers::ln2 - std::abs(w);
  }
  return kNegInf;
}

/// Sum of per-weight log densities; -inf as soon as one weight leaves the support.
inline double logPrior(const PriorSpec& spec, std::span<const double> weights) {
  const int n = static_cast<int>(weights.size());
  const double* w = weights.data();
  switch (spec.kind) {
    case PriorKind::Uniform: {
      for (int i = 0; i < n; ++i)
        if (std::abs(w[i]) > spec.bound) return -std::numeric_limits<double>::infinity();
      return -n * std::log(2.0 * spec.bound);
    }
    case PriorKind::Normal: {
      double ss = 0.0;
      for (int i = 0; i < n; ++i) ss += w[i] * w[i];
      return -0.5 * n * std::log(2.0 * std::numbers::pi) - 0.5 * ss;
    }
    case PriorKind::TruncatedCauchy: {
      double s = 0.0;
      for (int i = 0; i < n; ++i) {
        if (std::abs(w[i]) > spec.bound) return -std::numeric_limits<double>::infinity();
        s += std::log1p(w[i] * w[i]);
      }
      return -n * (std::log(std::numbers::pi) + std::log(truncatedCauchyMass(spec.bound))) - s;
    }
    case PriorKind::Laplace: {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += std::abs(w[i]);
      return -n * std::numbers::ln2 - s;
    }
  }
  return -std::numeric_limits<double>::infinity();
}

/// Analytic CDF.
inline double priorCdf(const PriorSpec& spec, double w) {
  switch (spec.kind) {
    case PriorKind::Uniform:
      if (w <= -spec.bound) return 0.0;
      if (w >= spec.bound) return 1.0;
      return (w + spec.bound) / (2.0 * spec.bound);
    case PriorKind::Normal:
      return 0.5 * std::erfc(-w / std::numbers::sqrt2);
    case PriorKind::TruncatedCauchy: {
      if (w <= -spec.bound) return 0.0;
      if (w >= spec.bound) return 1.0;
      const double a = std::atan(spec.bound);
      return (std::atan(w) + a) / (2.0 * a);
    }
    case PriorKind::Laplace:
      return w < 0 ? 0.5 * std::exp(w) : 1.0 - 0.5 * std::exp(-w);
  }
  return 0.0;
}

inline double samplePriorWeight(const PriorSpec& spec, Rng& rng) {
  switch (spec.kind) {
    case PriorKind::Uniform:
      return uniform(rng, -spec.bound, spec.bound);
    case PriorKind::Normal:
      return standardNormal(rng);
    case PriorKind::TruncatedCauchy: {
      // Inverse CDF on the truncated interval.
      const double a = std::atan(spec.bound);
      const double w = std::tan((2.0 * uniformOpen01(rng) - 1.0) * a);
      return std::clamp(w, -spec.bound, spec.bound);
    }
    case PriorKind::Laplace: {
      const double u = uniformOpen01(rng) - 0.5;
      return u < 0 ? std::log1p(2.0 * u) : -std::log1p(-2.0 * u);
    }
  }
  return 0.0;
}

}  // namespace bnnprior
