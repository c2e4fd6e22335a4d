#pragma once

// Counter-based random stream.
//
// Draw n of a stream is a pure function of (seed, n):
//   z = seed + (n + 1) * 0x9E3779B97F4A7C15
//   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//   out = z ^ (z >> 31)
// i.e. the SplitMix64 finalizer applied to a Weyl sequence. All arithmetic is
// on uint64_t so the sequence is identical on every platform.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>

#include "armkit/error.hpp"

namespace armkit {

inline constexpr std::uint64_t splitmix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Per-purpose stream constants. A sub-stream seed is `seed ^ constant`.
namespace stream {
inline constexpr std::uint64_t kWeights = 0x57E1'6475'0000'0001ULL;
inline constexpr std::uint64_t kArm = 0xA4A4'0000'0000'0002ULL;
inline constexpr std::uint64_t kDecode = 0xDEC0'DE00'0000'0003ULL;
inline constexpr std::uint64_t kInsertion = 0x1A5E'4700'0000'0004ULL;
inline constexpr std::uint64_t kTheory = 0x7E04'9000'0000'0005ULL;
inline constexpr std::uint64_t kData = 0xDA7A'0000'0000'0006ULL;
}  // namespace stream

inline constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t purpose) noexcept {
  return seed ^ purpose;
}

class RngStream {
 public:
  explicit constexpr RngStream(std::uint64_t seed = 0, std::uint64_t counter = 0) noexcept
      : seed_(seed), counter_(counter) {}

  constexpr std::uint64_t seed() const noexcept { return seed_; }
  constexpr std::uint64_t counter() const noexcept { return counter_; }

  // One 64-bit draw; advances the counter by 1.
  constexpr std::uint64_t next_u64() noexcept {
    ++counter_;
    return splitmix64(seed_ + counter_ * 0x9E3779B97F4A7C15ULL);
  }

  // Uniform double in [0, 1) with 53 random bits; advances the counter by 1.
  double next_unit() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Independent stream for index `i` of a family (e.g. one per Monte-Carlo block).
  RngStream substream(std::uint64_t i) const noexcept {
    return RngStream(splitmix64(seed_ ^ splitmix64(i + 0x5EED'5EED'5EED'5EEDULL)), 0);
  }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_;
};

// Uniform value in [lo, hi); returns lo when lo == hi. Always advances the counter by 1.
template <typename T = double>
T uniform(RngStream& rng, T lo, T hi) {
  if (!(lo <= hi)) throw ValueError("uniform: lo must not exceed hi");
  const double u = rng.next_unit();
  if (lo == hi) return lo;
  T v = static_cast<T>(static_cast<double>(lo) + (static_cast<double>(hi) - static_cast<double>(lo)) * u);
  // Rounding to T can land on hi; keep the half-open contract.
  if (v >= hi) v = std::nextafter(hi, lo);
  if (v < lo) v = lo;
  return v;
}

// Standard normal via Box-Muller; advances the counter by 2.
inline double normal(RngStream& rng) {
  const double u1 = 1.0 - rng.next_unit();  // (0, 1]
  const double u2 = rng.next_unit();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace armkit
