#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace scalei {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Counter-based seed derivation: every (root, a, b, ...) path gets an
/// independent stream, so no generator state is ever shared between stages.
inline std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = splitmix64(root);
  for (auto p : path) s = splitmix64(s ^ splitmix64(p + 0x632be59bd9b4e019ULL));
  return s;
}

// Named stream identifiers used with derive_seed.
namespace stream {
inline constexpr std::uint64_t graph = 1;
inline constexpr std::uint64_t mechanism = 2;
inline constexpr std::uint64_t mixing = 3;
inline constexpr std::uint64_t environments = 4;
inline constexpr std::uint64_t samples = 5;
inline constexpr std::uint64_t audit = 6;
inline constexpr std::uint64_t refine = 7;
}  // namespace stream

}  // namespace scalei
