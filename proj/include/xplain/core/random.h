#ifndef XPLAIN_CORE_RANDOM_H_
#define XPLAIN_CORE_RANDOM_H_

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <utility>
#include <vector>

namespace xplain {

// The engine is fully specified by the standard; the distribution helpers
// below are written out so that seeded output does not depend on the
// standard library's distribution implementations.
using Rng = std::mt19937_64;

// Uniform in [0, 1).
inline double UniformUnit(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double UniformReal(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * UniformUnit(rng);
}

// Uniform in [0, n). n must be positive.
inline std::size_t UniformIndex(Rng& rng, std::size_t n) {
  return static_cast<std::size_t>(UniformUnit(rng) * static_cast<double>(n)) %
         n;
}

inline bool Bernoulli(Rng& rng, double p) { return UniformUnit(rng) < p; }

// Box-Muller; one draw per call.
inline double StandardNormal(Rng& rng) {
  double u1 = UniformUnit(rng);
  while (u1 <= 0.0) u1 = UniformUnit(rng);
  const double u2 = UniformUnit(rng);
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

template <typename T>
void Shuffle(std::vector<T>& values, Rng& rng) {
  for (std::size_t i = values.size(); i > 1; --i) {
    std::swap(values[i - 1], values[UniformIndex(rng, i)]);
  }
}

}  // namespace xplain

#endif  // XPLAIN_CORE_RANDOM_H_
