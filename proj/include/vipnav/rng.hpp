#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace vipnav {

/// SplitMix64 finalizer. Bijective on 64-bit words.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Counter-based random stream.
///
/// Draw i of a stream is a pure function of (seed, stream id, i), so any
/// stream can be reconstructed on any thread without shared state. Child
/// streams are derived with substream(key); the derivation is also pure, so
/// "image 17 of epoch 3" always sees the same numbers no matter which worker
/// processes it.
///
/// Only integer arithmetic and <cmath> log/sqrt/cos are used, which keeps
/// draw sequences stable across standard libraries (unlike the
/// std::*_distribution family, whose algorithms are implementation-defined).
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed, std::uint64_t stream = 0) noexcept
      : seed_(seed), stream_(stream), key_(mix64(seed ^ mix64(stream + kStreamSalt))) {}

  [[nodiscard]] RngStream substream(std::uint64_t key) const noexcept {
    return RngStream(seed_, mix64(stream_ ^ mix64(key + kChildSalt)));
  }

  std::uint64_t next_u64() noexcept { return mix64(key_ + (++counter_) * kGolden); }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n) noexcept {
    // Lemire's nearly-divisionless rejection.
    std::uint64_t x = next_u64();
    __uint128_t m = static_cast<__uint128_t>(x) * n;
    auto low = static_cast<std::uint64_t>(m);
    if (low < n) {
      const std::uint64_t threshold = (0 - n) % n;
      while (low < threshold) {
        x = next_u64();
        m = static_cast<__uint128_t>(x) * n;
        low = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  bool bernoulli(double p) noexcept { return uniform() < p; }

  /// Box-Muller, one normal per call (no cached second value, so the draw
  /// count per call is always exactly two).
  double normal(double mean = 0.0, double stddev = 1.0) noexcept {
    double u1 = uniform();
    const double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Normal(mean, stddev) re-drawn until |x - mean| <= bound.
  double truncated_normal(double mean, double stddev, double bound) noexcept {
    for (;;) {
      const double x = normal(mean, stddev);
      if (std::abs(x - mean) <= bound) return x;
    }
  }

  [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }
  [[nodiscard]] std::uint64_t stream() const noexcept { return stream_; }
  [[nodiscard]] std::uint64_t counter() const noexcept { return counter_; }

 private:
  static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;
  static constexpr std::uint64_t kStreamSalt = 0xD1B54A32D192ED03ull;
  static constexpr std::uint64_t kChildSalt = 0x8CB92BA72F3D8DD7ull;

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace vipnav
