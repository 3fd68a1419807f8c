#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace aqt {

/// Seedable, splittable random stream.
///
/// Algorithm: std::mt19937_64 seeded through std::seed_seq with the four
/// 32-bit words (seed lo, seed hi, stream lo, stream hi). Both pieces are fully
/// specified by the C++ standard, and uniform doubles are taken from the top 53
/// bits of each draw, so a (seed, stream) pair yields the same sequence on any
/// conforming standard library.
class RandomStream {
 public:
  static constexpr std::string_view kAlgorithm = "mt19937_64/seed_seq(seed,stream)";

  explicit RandomStream(std::uint64_t seed, std::uint64_t stream = 0) : engine_(make_engine(seed, stream)) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Standard normal via Box-Muller (the stdlib distributions are not
  /// reproducible across implementations).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  /// Uniform integer in [0, n) by rejection.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x = engine_();
    while (x >= limit) x = engine_();
    return x % n;
  }

  /// Fisher-Yates shuffle.
  template <typename It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      const auto j = below(i);
      std::swap(first[i - 1], first[j]);
    }
  }

 private:
  static std::mt19937_64 make_engine(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    return std::mt19937_64(seq);
  }

  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace aqt
