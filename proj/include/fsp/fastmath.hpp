#pragma once

// Transcendentals for the float training path. The scalar libm calls do not
// auto-vectorize; these polynomial versions do, and the softmax/gelu loops
// are hot enough for that to matter (~3x end-to-end step time). The double
// path keeps libm so the 64-bit gradient-check suites see full precision.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>

namespace fsp {

// exp(x) for float, |rel err| < 2e-7 over the non-clamped range.
// Cephes-style: x = n*ln2 + r, exp(r) by degree-5 polynomial, 2^n by exponent
// bits. Fully branch-free, vectorizes under -O3.
inline float fast_exp(float x) {
  x = std::min(88.0f, std::max(-87.0f, x));
  const float t = x * 1.44269504088896341f + 12582912.0f;  // round via magic shift
  const float n = t - 12582912.0f;
  float r = x - n * 0.693359375f;
  r -= n * -2.12194440e-4f;
  float p = 1.9875691500e-4f;
  p = p * r + 1.3981999507e-3f;
  p = p * r + 8.3334519073e-3f;
  p = p * r + 4.1665795894e-2f;
  p = p * r + 1.6666665459e-1f;
  p = p * r + 5.0000001201e-1f;
  p = p * r * r + r + 1.0f;
  const int32_t e = (static_cast<int32_t>(n) + 127) << 23;
  return p * std::bit_cast<float>(e);
}

inline double fast_exp(double x) { return std::exp(x); }

inline float fast_tanh(float x) {
  // tanh(x) = 1 - 2 / (exp(2x) + 1)
  return 1.0f - 2.0f / (fast_exp(2.0f * x) + 1.0f);
}

inline double fast_tanh(double x) { return std::tanh(x); }

inline float fast_sigmoid(float x) { return 1.0f / (1.0f + fast_exp(-x)); }
inline double fast_sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : 1.0 - 1.0 / (1.0 + std::exp(x));
}

}  // namespace fsp
