#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace oavl {

// Counter-based SplitMix64 generator. Each consumer owns its generator and
// picks an explicit stream id, so draws never depend on call order elsewhere
// in the program. All distribution mappings are implemented here (not via
// <random> distributions) so output is identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0) noexcept
      : key_(mix(seed ^ mix(stream + 0x632BE59BD9B4E019ULL))) {}

  std::uint64_t next_u64() noexcept { return mix(key_ + kGolden * ++counter_); }

  // Uniform integer in [lo, hi] (inclusive), by rejection sampling.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) noexcept {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    if (span == 0) {
      return static_cast<std::int64_t>(next_u64());
    }
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    std::uint64_t x = next_u64();
    while (x >= limit) {
      x = next_u64();
    }
    return lo + static_cast<std::int64_t>(x % span);
  }

  // Uniform double in [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  bool bernoulli(double p) noexcept { return uniform() < p; }

  // Standard normal via Box-Muller (one value per call, no cached spare).
  double normal() noexcept {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  // Derives an independent generator for a sub-consumer.
  Rng fork(std::uint64_t stream) noexcept { return Rng(next_u64(), stream); }

  // Fisher-Yates.
  template <typename Container>
  void shuffle(Container& c) noexcept {
    for (std::size_t i = c.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(i) - 1));
      using std::swap;
      swap(c[i - 1], c[j]);
    }
  }

 private:
  static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

  static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace oavl
