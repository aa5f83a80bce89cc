#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>

namespace opseg {

// Distribution helpers built directly on the mt19937_64 bit stream. The
// standard <random> distributions are implementation-defined, so seeded
// sequences would not be stable across library versions; these are.

/// Uniform double in [0, 1).
inline double uniform_unit(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Uniform double in [lo, hi).
inline double uniform_range(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform_unit(rng);
}

/// Uniform integer in [0, n).
inline std::uint64_t uniform_index(std::mt19937_64& rng, std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("uniform_index: empty range");
  // Rejection sampling keeps the draw unbiased.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % n;
}

/// Standard normal via Box-Muller (one value per call; the spare is dropped
/// so consumption of the bit stream stays easy to reason about).
inline double gaussian(std::mt19937_64& rng) {
  double u1 = uniform_unit(rng);
  while (u1 <= 0.0) u1 = uniform_unit(rng);
  const double u2 = uniform_unit(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
}

/// Index draw proportional to non-negative weights. A zero total falls back
/// to a uniform draw over all entries.
inline std::size_t weighted_pick(std::span<const double> weights,
                                 std::mt19937_64& rng) {
  if (weights.empty()) throw std::invalid_argument("weighted_pick: no weights");
  double total = 0.0;
  for (double w : weights) {
    if (w < 0.0 || !std::isfinite(w))
      throw std::invalid_argument("weighted_pick: weights must be finite and >= 0");
    total += w;
  }
  if (total <= 0.0) return static_cast<std::size_t>(uniform_index(rng, weights.size()));
  const double u = uniform_unit(rng) * total;
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    if (u < acc) return i;
  }
  return weights.size() - 1;  // guard against accumulated rounding
}

}  // namespace opseg
