#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace gresnet {

using Rng = std::mt19937_64;

/// Derives an independent subseed from a master seed and a stable label, so
/// that every consumer of randomness ("init/layer3", "dropout", "split", ...)
/// gets its own stream regardless of call order elsewhere.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view label) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::uint64_t z = master ^ (h + 0x9e3779b97f4a7c15ULL + (master << 6) + (master >> 2));
  // splitmix64 finalizer
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline Rng make_rng(std::uint64_t master, std::string_view label) {
  return Rng(derive_seed(master, label));
}

/// Uniform double in [0, 1) from the top 53 bits; independent of the
/// standard library's distribution implementation.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace gresnet
