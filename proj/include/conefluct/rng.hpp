#pragma once

// Counter-based random streams. Every path draws from its own Philox4x32-10
// stream keyed by the master seed and addressed by the path index, so the
// draws a path sees do not depend on how paths are assigned to workers.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>

namespace conefluct {

class Philox4x32 {
 public:
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static constexpr Counter generate(Counter ctr, Key key) {
    for (int round = 0; round < 10; ++round) {
      if (round > 0) {
        key[0] += kW0;
        key[1] += kW1;
      }
      const std::uint64_t p0 = std::uint64_t{kM0} * ctr[0];
      const std::uint64_t p1 = std::uint64_t{kM1} * ctr[2];
      ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0],
             static_cast<std::uint32_t>(p1),
             static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1],
             static_cast<std::uint32_t>(p0)};
    }
    return ctr;
  }

 private:
  static constexpr std::uint32_t kM0 = 0xD2511F53u;
  static constexpr std::uint32_t kM1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kW0 = 0x9E3779B9u;
  static constexpr std::uint32_t kW1 = 0xBB67AE85u;
};

/// SplitMix64 finalizer, used to derive purpose-specific seeds from a master seed.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  return mix64(seed ^ mix64(tag));
}

/// Stream `stream_id` of the family keyed by `seed`. Satisfies
/// UniformRandomBitGenerator so it can feed <random> distributions.
class PathStream {
 public:
  using result_type = std::uint32_t;

  PathStream(std::uint64_t seed, std::uint64_t stream_id)
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
        stream_{static_cast<std::uint32_t>(stream_id),
                static_cast<std::uint32_t>(stream_id >> 32)} {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    if (pos_ == 4) refill();
    return buffer_[pos_++];
  }

  std::uint64_t next_u64() {
    const std::uint64_t hi = (*this)();
    return (hi << 32) | (*this)();
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform on the open interval (0, 1).
  double uniform_open() { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

  double exponential() { return -std::log(uniform_open()); }

 private:
  void refill() {
    buffer_ = Philox4x32::generate(
        {stream_[0], stream_[1], static_cast<std::uint32_t>(block_),
         static_cast<std::uint32_t>(block_ >> 32)},
        key_);
    ++block_;
    pos_ = 0;
  }

  Philox4x32::Key key_;
  std::array<std::uint32_t, 2> stream_;
  std::uint64_t block_ = 0;
  Philox4x32::Counter buffer_{};
  int pos_ = 4;
};

}  // namespace conefluct
