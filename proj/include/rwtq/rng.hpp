#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace rwtq {

// SplitMix64 finalizer; used to derive independent substream seeds.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t mix64(std::uint64_t seed, std::uint64_t tag) {
  return mix64(mix64(seed) ^ tag);
}

// Deterministic random stream. mt19937_64 is bit-exact across conforming
// standard libraries; uniform/normal are generated in-house because the
// std distributions are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(mix64(seed)), seed_(seed) {}

  // Independent substream; children with distinct tags never overlap in practice.
  Rng child(std::uint64_t tag) const { return Rng(mix64(seed_, tag)); }
  Rng child(std::uint64_t tag1, std::uint64_t tag2) const {
    return Rng(mix64(mix64(seed_, tag1), tag2));
  }
  Rng child(std::uint64_t tag1, std::uint64_t tag2, std::uint64_t tag3) const {
    return Rng(mix64(mix64(mix64(seed_, tag1), tag2), tag3));
  }

  std::uint64_t bits() { return eng_(); }

  // Uniform on [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer on [0, n); n >= 1. Rejection keeps the draw unbiased.
  std::uint64_t uniform_int(std::uint64_t n) {
    const std::uint64_t limit = ~std::uint64_t(0) - ~std::uint64_t(0) % n;
    std::uint64_t x;
    do {
      x = eng_();
    } while (x >= limit);
    return x % n;
  }

  // Standard normal via Box-Muller; second value cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::mt19937_64 eng_;
  std::uint64_t seed_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace rwtq
