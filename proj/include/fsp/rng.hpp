#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

#include "fsp/common.hpp"

namespace fsp {

// SplitMix64. Self-contained so streams are bit-identical across platforms
// and standard library versions (std:: distributions are not portable).
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 bits of mantissa.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n), unbiased (rejection sampling).
  uint64_t uniform_int(uint64_t n) {
    FSP_CHECK_ARG(n > 0, "uniform_int: n must be positive");
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  // Standard normal, Box-Muller with cached spare.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 == 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Derived independent stream. Streams for (seed, tag) pairs are stable, so
  // e.g. data order never depends on how many draws the model init consumed.
  Rng fork(std::string_view tag) const {
    return Rng(fnv1a64(tag, state_ ^ 0x5851f42d4c957f2dull));
  }
  Rng fork(uint64_t salt) const {
    uint64_t h = state_ ^ (salt * 0x9e3779b97f4a7c15ull + 0x2545f4914f6cdd1dull);
    h = (h ^ (h >> 33)) * 0xff51afd7ed558ccdull;
    return Rng(h ^ (h >> 33));
  }

 private:
  uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace fsp
