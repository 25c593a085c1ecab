#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace protoreg {

/// Counter-based 64-bit generator. Draw k of a stream is
///
///   mix(key + (k + 1) * 0x9E3779B97F4A7C15),  key = mix(seed ^ (stream * 0xD1B54A32D192ED03))
///
/// where mix is the SplitMix64 finaliser (shifts 30/27/31, multipliers
/// 0xBF58476D1CE4E5B9 and 0x94D049BB133111EB). Every draw is a pure function of
/// (seed, stream, k), so fixtures reproduce in any language.
class CounterRng {
 public:
  static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;
  static constexpr std::uint64_t kStreamMul = 0xD1B54A32D192ED03ull;

  static constexpr std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0)
      : key_(mix(seed ^ (stream * kStreamMul))) {}

  std::uint64_t bits_at(std::uint64_t counter) const { return mix(key_ + (counter + 1) * kGolden); }

  std::uint64_t next_bits() { return bits_at(counter_++); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return double(next_bits() >> 11) * 0x1.0p-53; }

  /// Standard normal via Box-Muller; consumes two draws per value.
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace protoreg
