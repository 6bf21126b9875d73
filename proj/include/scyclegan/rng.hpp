#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace scg {

/// SplitMix64 finalizer; the mixing step behind every counter-based stream.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Hashes an ordered tuple of counters into one 64-bit key.
inline std::uint64_t hash_counters(std::initializer_list<std::uint64_t> counters) {
  std::uint64_t h = 0x5c0f1e2d3c4b5a69ULL;
  for (auto c : counters) h = mix64(h ^ mix64(c));
  return h;
}

/// Seeded engine for generators that need a sequential stream.
inline std::mt19937_64 make_engine(std::initializer_list<std::uint64_t> counters) {
  return std::mt19937_64(hash_counters(counters));
}

}  // namespace scg
