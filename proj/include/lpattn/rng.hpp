#pragma once

#include <bit>
#include <cstdint>
#include <random>

namespace lpattn {

using Rng = std::mt19937_64;

/// Uniform double in [0, 1) built from the top 53 bits, identical on every
/// standard library.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t value) {
  return splitmix64(seed ^ splitmix64(value));
}

/// Seed for one grid cell: independent of every other cell yet reproducible.
inline std::uint64_t run_seed(std::uint64_t base, double p, int fold) {
  return hash_combine(hash_combine(base, std::bit_cast<std::uint64_t>(p)), static_cast<std::uint64_t>(fold));
}

}  // namespace lpattn
