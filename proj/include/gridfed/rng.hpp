#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <vector>

namespace gridfed {

// Platform-independent random stream over std::mt19937_64 with hand-written
// uniform, normal and Dirichlet transforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  // Seed derived from a base seed and any number of integer tags, so that
  // (seed, building, purpose) triples get decorrelated streams.
  template <typename... Tags>
  static Rng derive(std::uint64_t seed, Tags... tags) {
    std::uint64_t h = mix(seed);
    ((h = mix(h ^ static_cast<std::uint64_t>(tags))), ...);
    return Rng(h);
  }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    // Rejection sampling to avoid modulo bias.
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x = 0;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  // Standard normal via Box-Muller; the spare value is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  // Flat Dirichlet(1, ..., 1) sample of the given dimension.
  std::vector<double> dirichlet(std::size_t dim) {
    std::vector<double> w(dim);
    double total = 0.0;
    for (auto& x : w) {
      double u = 0.0;
      do {
        u = uniform();
      } while (u <= 0.0);
      x = -std::log(u);
      total += x;
    }
    for (auto& x : w) x /= total;
    return w;
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    // splitmix64 finalizer
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace gridfed
