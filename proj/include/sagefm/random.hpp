#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace sagefm {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; used to derive independent stream seeds from a base
/// seed plus a tuple of indices (epoch, center, fraction, ...).
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = mix64(base);
  for (std::uint64_t p : parts) h = mix64(h ^ p);
  return h;
}

}  // namespace sagefm
