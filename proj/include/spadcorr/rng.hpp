#pragma once

#include <cstdint>
#include <limits>

namespace spadcorr {

/// Stream purposes; each (seed, frame_id, purpose) triple owns an independent substream.
enum class RngPurpose : std::uint64_t {
  Pairs = 1,
  Dark = 2,
  Crosstalk = 3,
  PixelOffsets = 4,
  Test = 99,
};

constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Counter-based generator: output n is mix64(key + n * golden). The key is a hash of
/// (seed, stream, purpose), so any substream can be regenerated without touching the others.
/// Satisfies UniformRandomBitGenerator, so the <random> distributions work on top of it.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  CounterRng(std::uint64_t seed, std::uint64_t stream, RngPurpose purpose)
      : key_(mix64(mix64(mix64(seed ^ 0x5851f42d4c957f2dULL) + stream) +
                   static_cast<std::uint64_t>(purpose))) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    counter_ += kGolden;
    return mix64(key_ + counter_);
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

 private:
  static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace spadcorr
