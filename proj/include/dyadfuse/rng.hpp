#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace dyadfuse {

using Rng = std::mt19937_64;

/// Per-purpose sub-seed: splitmix64 over (run seed XOR FNV-1a(purpose)).
/// Every random stream in the library is derived this way from one run seed,
/// so toggling one component never shifts another component's stream.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose) {
  std::uint64_t h = 1469598103934665603ULL;
  for (char c : purpose) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  std::uint64_t z = seed ^ h;
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline Rng make_rng(std::uint64_t seed, std::string_view purpose) {
  return Rng(derive_seed(seed, purpose));
}

}  // namespace dyadfuse
