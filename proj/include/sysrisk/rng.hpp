#pragma once

#include <cstdint>

namespace sysrisk {

/// Counter-based generator: the value at position `counter` of stream
/// `seed` is a pure function of the pair, so draws can be produced in any
/// order (or in parallel blocks) without changing the output.
///
/// The mixing function is the SplitMix64 finaliser applied to
/// `seed * phi + counter`; stream seeds are pre-mixed so adjacent seeds do
/// not share overlapping counter ranges.
class CounterRng {
 public:
  explicit constexpr CounterRng(std::uint64_t seed) noexcept : key_(mix(seed ^ kStreamSalt)) {}

  constexpr std::uint64_t bits(std::uint64_t counter) const noexcept {
    return mix(key_ + (counter + 1) * kGolden);
  }

  /// Uniform in the open interval (0, 1); never returns 0 or 1.
  constexpr double uniform_open(std::uint64_t counter) const noexcept {
    return (static_cast<double>(bits(counter) >> 11) + 0.5) * 0x1.0p-53;
  }

  constexpr std::uint64_t seed_key() const noexcept { return key_; }

  static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;
  static constexpr std::uint64_t kStreamSalt = 0x5eed5eed5eed5eedULL;
  std::uint64_t key_;
};

}  // namespace sysrisk
