#pragma once

#include <cstdint>
#include <random>

namespace hjblab {

// splitmix64 finalizer; decorrelates adjacent seeds.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Engine for path k of a run seeded with `seed`. Counter-based (seed xor k),
/// so results do not depend on how paths are scheduled across workers.
inline std::mt19937_64 path_engine(std::uint64_t seed, std::uint64_t path_index) {
  return std::mt19937_64(mix64(seed ^ path_index));
}

}  // namespace hjblab
