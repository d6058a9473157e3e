#pragma once

// Counter-based random streams.
//
// Every random draw in the library is a pure function of (seed, stream id,
// position).  Stream ids are derived by mixing small integer tags with
// splitmix64, so a per-interval stream for iteration k of an MCMC run is the
// same no matter which thread happens to evaluate it.

#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <numbers>

namespace spdou {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Fold a list of tags into one 64-bit stream id.
constexpr std::uint64_t stream_id(std::initializer_list<std::uint64_t> tags) {
  std::uint64_t h = 0x6A09E667F3BCC909ULL;
  for (std::uint64_t t : tags) h = splitmix64(h ^ splitmix64(t));
  return h;
}

/// Philox4x32-10 block function.
class Philox4x32 {
 public:
  using Block = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static constexpr Block apply(Block ctr, Key key) {
    for (int round = 0; round < 10; ++round) {
      const std::uint64_t p0 = std::uint64_t{kM0} * ctr[0];
      const std::uint64_t p1 = std::uint64_t{kM1} * ctr[2];
      const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
      const auto lo0 = static_cast<std::uint32_t>(p0);
      const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
      const auto lo1 = static_cast<std::uint32_t>(p1);
      ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
      key[0] += kW0;
      key[1] += kW1;
    }
    return ctr;
  }

 private:
  static constexpr std::uint32_t kM0 = 0xD2511F53;
  static constexpr std::uint32_t kM1 = 0xCD9E8D57;
  static constexpr std::uint32_t kW0 = 0x9E3779B9;
  static constexpr std::uint32_t kW1 = 0xBB67AE85;
};

/// A reproducible stream of uniforms and normals keyed by (seed, id).
///
/// Satisfies UniformRandomBitGenerator so it can also drive <random>
/// distributions, though the library itself only uses `uniform()` and
/// `normal()` to stay independent of the standard library's distribution
/// implementations.
class RandomStream {
 public:
  using result_type = std::uint64_t;

  RandomStream(std::uint64_t seed, std::uint64_t id)
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
        hi_{static_cast<std::uint32_t>(id), static_cast<std::uint32_t>(id >> 32)} {}

  /// Child stream; independent of the parent's position.
  RandomStream split(std::uint64_t tag) const {
    const std::uint64_t seed = (std::uint64_t{key_[1]} << 32) | key_[0];
    const std::uint64_t id = (std::uint64_t{hi_[1]} << 32) | hi_[0];
    return RandomStream(seed, stream_id({id, tag}));
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    if (pos_ == 2) refill();
    return buf_[pos_++];
  }

  /// Uniform on the open interval (0, 1).
  double uniform() { return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53; }

  /// Standard normal via Box-Muller; the sine branch is cached.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double r = std::sqrt(-2.0 * std::log(uniform()));
    const double a = 2.0 * std::numbers::pi * uniform();
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

 private:
  void refill() {
    const Philox4x32::Block ctr{static_cast<std::uint32_t>(counter_),
                                static_cast<std::uint32_t>(counter_ >> 32), hi_[0], hi_[1]};
    const auto out = Philox4x32::apply(ctr, key_);
    buf_[0] = (std::uint64_t{out[1]} << 32) | out[0];
    buf_[1] = (std::uint64_t{out[3]} << 32) | out[2];
    ++counter_;
    pos_ = 0;
  }

  Philox4x32::Key key_;
  std::array<std::uint32_t, 2> hi_;
  std::uint64_t counter_ = 0;
  std::array<std::uint64_t, 2> buf_{};
  int pos_ = 2;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace spdou
