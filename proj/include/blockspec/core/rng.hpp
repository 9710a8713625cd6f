// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace blockspec {

/// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
///
/// Every draw is a pure function of (key, counter), so sampling decisions can
/// be keyed by (seed, stream, absolute position) and replayed independently of
/// the order in which they are requested.
class Philox {
 public:
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static Counter block(Counter ctr, Key key) {
    for (int round = 0; round < 10; ++round) {
      ctr = single_round(ctr, key);
      key[0] += kW0;
      key[1] += kW1;
    }
    return ctr;
  }

 private:
  static constexpr std::uint32_t kM0 = 0xD2511F53u;
  static constexpr std::uint32_t kM1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kW0 = 0x9E3779B9u;
  static constexpr std::uint32_t kW1 = 0xBB67AE85u;

  static Counter single_round(const Counter& c, const Key& k) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(kM0) * c[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(kM1) * c[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
    const auto lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
    const auto lo1 = static_cast<std::uint32_t>(p1);
    return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
  }
};

/// Named streams so independent decisions at the same position never share
/// random numbers.
enum class RngStream : std::uint32_t {
  kInit = 1,
  kSample = 2,
  kDraft = 3,
  kAccept = 4,
  kResidual = 5,
  kBonus = 6,
  kAnchors = 7,
  kShuffle = 8,
  kData = 9,
};

/// Stateless keyed draws: `uniform(seed, stream, index)` always returns the
/// same value for the same triple.
class CounterRng {
 public:
  static std::array<std::uint32_t, 4> bits(std::uint64_t seed, RngStream stream,
                                           std::uint64_t index, std::uint32_t lane = 0) {
    const Philox::Key key{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
    const Philox::Counter ctr{static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                              static_cast<std::uint32_t>(stream), lane};
    return Philox::block(ctr, key);
  }

  /// Uniform double in [0, 1) with 53 random bits.
  static double uniform(std::uint64_t seed, RngStream stream, std::uint64_t index,
                        std::uint32_t lane = 0) {
    const auto b = bits(seed, stream, index, lane);
    const std::uint64_t v = (static_cast<std::uint64_t>(b[0]) << 21) ^ (b[1] >> 11);
    return static_cast<double>(v) * (1.0 / 9007199254740992.0);
  }
};

/// Sequential engine over a Philox stream, for places where a plain stream of
/// draws is more convenient (initialization, shuffles, data generation).
class PhiloxEngine {
 public:
  PhiloxEngine(std::uint64_t seed, RngStream stream, std::uint32_t lane = 0)
      : seed_(seed), stream_(stream), lane_(lane) {}

  double uniform() { return CounterRng::uniform(seed_, stream_, counter_++, lane_); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    if (n <= 1) return 0;
    const auto b = CounterRng::bits(seed_, stream_, counter_++, lane_);
    const std::uint64_t v = (static_cast<std::uint64_t>(b[0]) << 32) | b[1];
    // Multiply-shift; the bias for n << 2^64 is far below anything observable here.
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(v) * n) >> 64);
  }

  /// Integer in [lo, hi] inclusive.
  std::int64_t range(std::int64_t lo, std::int64_t hi) {
    return lo + static_cast<std::int64_t>(below(static_cast<std::uint64_t>(hi - lo + 1)));
  }

  /// Standard normal via Box-Muller.
  double normal() {
    double u1 = uniform();
    const double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  template <typename It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      const auto j = below(i);
      std::swap(first[i - 1], first[j]);
    }
  }

 private:
  std::uint64_t seed_;
  RngStream stream_;
  std::uint32_t lane_;
  std::uint64_t counter_ = 0;
};

/// Mixes several integers into one seed (splitmix64 finalizer).
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0) {
  auto fmix = [](std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  };
  return fmix(fmix(fmix(a) ^ b) ^ c);
}

}  // namespace blockspec
