#pragma once

#include <cstdint>

namespace advcal {

/// Counter-based generator built on the SplitMix64 finalizer.
///
/// A draw is a pure function of (seed, stream, counter):
///   key   = mix(seed ^ mix(stream + kGolden))
///   value = mix(key + counter * kGolden)
/// with kGolden = 0x9E3779B97F4A7C15 and mix() the SplitMix64 finalizer
/// (multipliers 0xBF58476D1CE4E5B9, 0x94D049BB133111EB). Because a draw
/// depends only on its counter, any partition of a stream into blocks
/// reproduces the serial sequence exactly.
class CounterRng {
 public:
  static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

  constexpr CounterRng(std::uint64_t seed, std::uint64_t stream = 0,
                       std::uint64_t counter = 0) noexcept
      : key_(mix(seed ^ mix(stream + kGolden))), counter_(counter) {}

  static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Raw 64-bit draw at an absolute counter position.
  constexpr std::uint64_t at(std::uint64_t counter) const noexcept {
    return mix(key_ + counter * kGolden);
  }

  constexpr std::uint64_t next() noexcept { return at(counter_++); }

  /// Uniform double in [0,1) from the top 53 bits.
  static constexpr double to_unit(std::uint64_t bits) noexcept {
    return static_cast<double>(bits >> 11) * 0x1.0p-53;
  }

  constexpr double uniform() noexcept { return to_unit(next()); }
  constexpr double uniform_at(std::uint64_t counter) const noexcept {
    return to_unit(at(counter));
  }

  constexpr std::uint64_t counter() const noexcept { return counter_; }
  constexpr void seek(std::uint64_t counter) noexcept { counter_ = counter; }

  // UniformRandomBitGenerator interface, so <random> distributions work.
  using result_type = std::uint64_t;
  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return ~result_type{0}; }
  constexpr result_type operator()() noexcept { return next(); }

 private:
  std::uint64_t key_;
  std::uint64_t counter_;
};

/// Derives a child seed from a parent seed and a small tuple of indices.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a,
                                    std::uint64_t b = 0) noexcept {
  return CounterRng::mix(CounterRng::mix(seed + CounterRng::kGolden * (a + 1)) ^
                         (b * 0xD1B54A32D192ED03ULL));
}

}  // namespace advcal
