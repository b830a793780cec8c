#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace b2t {

// Deterministic random stream. Draws are fixed arithmetic on raw mt19937_64
// words rather than std:: distributions (whose output is implementation
// defined), so one seed reproduces the same values everywhere.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // uniform in [lo, hi)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // standard normal via Box-Muller; two uniforms per draw, no cached state
  double gaussian() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // unbiased integer in [0, n)
  std::uint64_t index(std::uint64_t n) {
    const std::uint64_t max = ~std::uint64_t{0};
    const std::uint64_t rem = (max % n + 1) % n;  // 2^64 mod n
    std::uint64_t x = engine_();
    if (rem != 0) {
      const std::uint64_t limit = max - rem + 1;
      while (x >= limit) x = engine_();
    }
    return x % n;
  }

  // Fisher-Yates shuffle driven by this stream
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[index(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace b2t
