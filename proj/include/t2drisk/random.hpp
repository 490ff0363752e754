#pragma once

#include <cstdint>
#include <random>

namespace t2drisk {

using Rng = std::mt19937_64;

/// Independent stream for (seed, stream index). Used wherever work is split
/// into replicates, trials or chunks so each piece is reproducible on its own.
inline Rng derive_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    0x74326472u};
  return Rng(seq);
}

/// Uniform on the open interval (0, 1).
inline double uniform_open(Rng& rng) {
  for (;;) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    if (u > 0.0) return u;
  }
}

}  // namespace t2drisk
