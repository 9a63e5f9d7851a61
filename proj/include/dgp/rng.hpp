#pragma once

#include <cstdint>
#include <random>

namespace dgp {

// splitmix64 step; used to derive decorrelated sub-seeds from a master seed
// so that independent components (data generation, optimizer restarts,
// inducing-point init, ...) draw from independent streams.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Sub-seed `index` of master seed `seed`. Stable across platforms.
inline std::uint64_t sub_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t s = seed;
  std::uint64_t v = 0;
  for (std::uint64_t i = 0; i <= index; ++i) v = splitmix64(s);
  return v;
}

inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t index) {
  return std::mt19937_64(sub_seed(seed, index));
}

}  // namespace dgp
