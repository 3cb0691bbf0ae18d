#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace bnnprior {

/// The one generator used everywhere. Seeded explicitly; never from entropy.
using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to derive independent child seeds.
constexpr std::uint64_t mixSeed(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Child seed for stream `stream` of `seed`. Distinct streams give
/// statistically independent generators.
constexpr std::uint64_t deriveSeed(std::uint64_t seed, std::uint64_t stream) noexcept {
  return mixSeed(mixSeed(seed) ^ mixSeed(stream + 0x632BE59BD9B4E019ULL));
}

/// Uniform double in [0, 1) with 53 random bits.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Uniform double in the open interval (0, 1).
inline double uniformOpen01(Rng& rng) {
  return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

/// Standard normal via Box-Muller (no cached state, so draws are a pure
/// function of the generator position).
inline double standardNormal(Rng& rng) {
  const double u1 = uniformOpen01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925 * u2);
}

}  // namespace bnnprior
