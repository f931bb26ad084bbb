#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace copreg {

/// Seedable engine used throughout. Every stochastic routine takes one by reference.
using Rng = std::mt19937_64;

/// SplitMix64 finalizer; turns (base seed, stream id) into a decorrelated child seed.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) noexcept {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline Rng make_rng(std::uint64_t seed) { return Rng{seed}; }

/// Uniform draw on the open interval (0, 1). Built from raw engine bits so the
/// stream does not depend on the standard library's distribution implementation.
inline double uniform01(Rng& rng) {
  return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

/// Standard normal draw (Marsaglia polar method, second variate discarded).
inline double standard_normal(Rng& rng) {
  for (;;) {
    const double x = 2.0 * uniform01(rng) - 1.0;
    const double y = 2.0 * uniform01(rng) - 1.0;
    const double s = x * x + y * y;
    if (s > 0.0 && s < 1.0) return x * std::sqrt(-2.0 * std::log(s) / s);
  }
}

/// Uniform integer in [0, n).
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  for (;;) {
    const std::uint64_t r = rng();
    if (r < limit) return r % n;
  }
}

}  // namespace copreg
