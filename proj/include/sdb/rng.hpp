#pragma once

#include <cstdint>
#include <random>

namespace sdb {

using Rng = std::mt19937_64;

// splitmix64; used to derive decorrelated child seeds from (seed, index) pairs.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

inline Rng episode_rng(std::uint64_t seed, std::uint64_t episode_index) {
  return Rng(mix_seed(seed, episode_index));
}

template <typename Scalar>
Scalar uniform(Rng& rng, Scalar lo, Scalar hi) {
  return std::uniform_real_distribution<Scalar>(lo, hi)(rng);
}

template <typename Scalar>
Scalar gaussian(Rng& rng, Scalar mean = 0, Scalar stddev = 1) {
  return std::normal_distribution<Scalar>(mean, stddev)(rng);
}

inline int uniform_int(Rng& rng, int lo, int hi_inclusive) {
  return std::uniform_int_distribution<int>(lo, hi_inclusive)(rng);
}

}  // namespace sdb
