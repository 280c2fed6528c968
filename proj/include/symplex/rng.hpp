#pragma once

// Counter-based random streams (Philox4x32-10). A stream is addressed by
// (seed, purpose, index), so e.g. the noise drawn at step s never depends on
// how many draws happened at other steps.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>

namespace symplex {

enum class StreamPurpose : std::uint32_t {
  Init = 1,
  Noise = 2,
  Sample = 3,
  Retry = 4,
  Variation = 5,
  TrainNoise = 6,
  TrainTime = 7,
  Shuffle = 8,
  ParamInit = 9,
  Split = 10,
  Test = 100,
};

class Philox4x32 {
 public:
  using Block = std::array<std::uint32_t, 4>;

  static Block generate(Block counter, std::array<std::uint32_t, 2> key) {
    constexpr std::uint32_t kM0 = 0xD2511F53, kM1 = 0xCD9E8D57;
    constexpr std::uint32_t kW0 = 0x9E3779B9, kW1 = 0xBB67AE85;
    for (int round = 0; round < 10; ++round) {
      const std::uint64_t p0 = std::uint64_t{kM0} * counter[0];
      const std::uint64_t p1 = std::uint64_t{kM1} * counter[2];
      counter = {static_cast<std::uint32_t>(p1 >> 32) ^ counter[1] ^ key[0], static_cast<std::uint32_t>(p1),
                 static_cast<std::uint32_t>(p0 >> 32) ^ counter[3] ^ key[1], static_cast<std::uint32_t>(p0)};
      key[0] += kW0;
      key[1] += kW1;
    }
    return counter;
  }
};

/// Deterministic stream of uniforms and normals; satisfies UniformRandomBitGenerator.
class RandomStream {
 public:
  using result_type = std::uint32_t;

  RandomStream(std::uint64_t seed, StreamPurpose purpose, std::uint64_t index = 0)
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
        index_(index),
        purpose_(static_cast<std::uint32_t>(purpose)) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    if (pos_ == 4) refill();
    return buffer_[pos_++];
  }

  /// Uniform on [0, 1) with 53 bits of resolution.
  double uniform() {
    const std::uint64_t hi = (*this)() >> 5;
    const std::uint64_t lo = (*this)() >> 6;
    return static_cast<double>(hi * 67108864ULL + lo) * (1.0 / 9007199254740992.0);
  }

  /// Standard normal via Box-Muller.
  double normal() {
    if (hasSpare_) {
      hasSpare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    hasSpare_ = true;
    return r * std::cos(theta);
  }

  std::uint64_t below(std::uint64_t n) {
    // Rejection sampling to avoid modulo bias.
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
    for (;;) {
      const std::uint64_t v = (std::uint64_t{(*this)()} << 32) | (*this)();
      if (v < limit) return v % n;
    }
  }

 private:
  void refill() {
    // The 64-bit stream index is folded into the counter together with the block number.
    const Philox4x32::Block counter = {static_cast<std::uint32_t>(block_), static_cast<std::uint32_t>(block_ >> 32),
                                       static_cast<std::uint32_t>(index_),
                                       purpose_ ^ (static_cast<std::uint32_t>(index_ >> 32) << 8)};
    buffer_ = Philox4x32::generate(counter, key_);
    ++block_;
    pos_ = 0;
  }

  std::array<std::uint32_t, 2> key_;
  std::uint64_t index_;
  std::uint32_t purpose_;
  std::uint64_t block_ = 0;
  Philox4x32::Block buffer_{};
  int pos_ = 4;
  bool hasSpare_ = false;
  double spare_ = 0.0;
};

}  // namespace symplex
