#pragma once

// Counter-based random numbers: every draw is a pure function of
// (seed, stream, a, b, c), so noise for (iteration, batch element, step) can be
// generated in any order and reproduced exactly.

#include <cmath>
#include <cstdint>
#include <numbers>

namespace dfbsde::rng {

enum Stream : std::uint64_t {
  kParamInit = 1,
  kTrainNoise = 2,
  kInitialState = 3,
  kEvalNoise = 4,
  kEvalInitialState = 5,
  kWalkNoise = 6,
  kTest = 99,
};

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t hash(std::uint64_t seed, std::uint64_t stream, std::uint64_t a, std::uint64_t b = 0,
                             std::uint64_t c = 0, std::uint64_t d = 0) {
  std::uint64_t h = mix64(seed);
  h = mix64(h ^ stream);
  h = mix64(h ^ a);
  h = mix64(h ^ b);
  h = mix64(h ^ c);
  return mix64(h ^ d);
}

/// Uniform in the open interval (0, 1).
constexpr double to_unit(std::uint64_t bits) {
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

inline double uniform(std::uint64_t seed, std::uint64_t stream, std::uint64_t a, std::uint64_t b = 0,
                      std::uint64_t c = 0) {
  return to_unit(hash(seed, stream, a, b, c, 0));
}

/// Standard normal via Box-Muller on two independent counter draws.
inline double normal(std::uint64_t seed, std::uint64_t stream, std::uint64_t a, std::uint64_t b = 0,
                     std::uint64_t c = 0) {
  const double u1 = to_unit(hash(seed, stream, a, b, c, 0));
  const double u2 = to_unit(hash(seed, stream, a, b, c, 1));
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace dfbsde::rng
