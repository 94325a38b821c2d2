#pragma once

// Seeded random source with distribution code pinned in this library, so that
// draws are identical across standard-library implementations.

#include <cmath>
#include <cstdint>
#include <random>
#include <utility>

namespace scalemix {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform on the open interval (0, 1), 53-bit resolution.
  double uniform() {
    for (;;) {
      const double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
      if (u > 0.0) return u;
    }
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    for (;;) {
      const std::uint64_t r = engine_();
      if (r < limit) return r % n;
    }
  }

  /// Standard normal (Marsaglia polar method).
  double normal();

  double exponential() { return -std::log(uniform()); }

  /// Gamma(shape, 1) by Marsaglia-Tsang; shape < 1 uses the U^(1/shape) boost.
  double gamma(double shape);

  std::mt19937_64& engine() noexcept { return engine_; }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Fisher-Yates shuffle driven by Rng::below.
template <typename It>
void shuffle(It first, It last, Rng& rng) {
  const auto n = static_cast<std::uint64_t>(last - first);
  for (std::uint64_t i = n; i > 1; --i) {
    const std::uint64_t j = rng.below(i);
    std::swap(first[i - 1], first[j]);
  }
}

}  // namespace scalemix
