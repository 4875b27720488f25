#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "voxelformer/common.hpp"

namespace vxf {

// Deterministic RNG. mt19937_64 is fully specified by the standard and the
// distributions below are hand-rolled, so identical seeds give identical
// streams on every platform (std::normal_distribution etc. are
// implementation-defined and are deliberately avoided).
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed), gen_(seed) {}

  uint64_t seed() const { return seed_; }

  // uniform in [0,1) with 53-bit resolution
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; draws a fresh pair per call (no cached spare)
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // integer in [0, n)
  int64_t uniform_int(int64_t n) {
    require(n > 0, "Rng::uniform_int: n must be positive");
    const uint64_t un = static_cast<uint64_t>(n);
    const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    uint64_t x = gen_();
    while (x >= limit) x = gen_();
    return static_cast<int64_t>(x % un);
  }

  // Marsaglia-Tsang, with the standard boost for shape < 1
  double gamma(double shape) {
    require(shape > 0.0, "Rng::gamma: shape must be positive");
    if (shape < 1.0) {
      const double u = uniform();
      return gamma(shape + 1.0) * std::pow(u > 0 ? u : 1e-300, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      const double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (u > 0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v)))
        return d * v;
    }
  }

  double beta(double a, double b) {
    const double x = gamma(a);
    const double y = gamma(b);
    return x / (x + y);
  }

  // Fisher-Yates
  std::vector<int64_t> permutation(int64_t n) {
    std::vector<int64_t> p(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) p[static_cast<size_t>(i)] = i;
    for (int64_t i = n - 1; i > 0; --i)
      std::swap(p[static_cast<size_t>(i)],
                p[static_cast<size_t>(uniform_int(i + 1))]);
    return p;
  }

  // Derive an independent, reproducible sub-stream keyed on (seed, tag),
  // without consuming state from this stream. splitmix64 finalizer.
  Rng fork(uint64_t tag) const {
    uint64_t z = seed_ + 0x9E3779B97F4A7C15ull * (tag + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return Rng(z ^ (z >> 31));
  }

  Rng fork(uint64_t tag_a, uint64_t tag_b) const {
    return fork(tag_a).fork(tag_b);
  }

 private:
  uint64_t seed_;
  std::mt19937_64 gen_;
};

}  // namespace vxf
