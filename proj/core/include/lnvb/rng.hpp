#pragma once

#include <cstdint>
#include <random>

namespace lnvb {

/// Random stream used throughout the library. Callers own their streams;
/// nothing in the library keeps hidden global state.
using Rng = std::mt19937_64;

/// Derives an independent stream for sub-task `index` of a run seeded with
/// `seed` (grid cells, chains, replicates).
inline Rng derive_stream(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                    0x6c6e7662u};
  return Rng(seq);
}

/// Uniform draw on the open interval (0, 1).
inline double uniform_open(Rng& rng) {
  // 53 random bits, shifted off zero.
  const double u = (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
  return u;
}

inline double standard_normal(Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  return dist(rng);
}

}  // namespace lnvb
