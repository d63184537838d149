#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace msgnet {

// Counter-based splittable generator.
//
// A stream is identified by a 64-bit key. The n-th draw (n = 1, 2, ...) is
//   mix64(key + n * 0x9E3779B97F4A7C15)
// where mix64 is the SplitMix64 finalizer. split(s) derives the key of an
// independent child stream as mix64(key ^ mix64(s + 0x9E3779B97F4A7C15)).
// Every value is a pure function of (key, counter), so any position in any
// stream can be reproduced without replay.
class Rng {
 public:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

  explicit constexpr Rng(std::uint64_t key = 0, std::uint64_t counter = 0)
      : key_(key), counter_(counter) {}

  static constexpr std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  constexpr Rng split(std::uint64_t stream) const {
    return Rng(mix64(key_ ^ mix64(stream + kGamma)), 0);
  }

  constexpr std::uint64_t next_u64() {
    ++counter_;
    return mix64(key_ + counter_ * kGamma);
  }

  // Uniform in [0, 1) with 53 bits of precision.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Modulo bias is below 2^-40 for the sizes used here.
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

  // Standard normal via Box-Muller; consumes two draws per sample.
  double normal() {
    double u1 = uniform();
    const double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  constexpr std::uint64_t key() const { return key_; }
  constexpr std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_;
};

}  // namespace msgnet
