#pragma once

// Shared test helpers: central finite differences and brute-force loss
// oracles. These stay independent of the autodiff implementation they check:
// the oracles are plain loops over doubles.

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "fsp/tensor.hpp"

namespace fsp_test {

inline double rel_err(double a, double b) {
  const double scale = std::max({1.0, std::abs(a), std::abs(b)});
  return std::abs(a - b) / scale;
}

// Central finite differences of a scalar functional w.r.t. the elements of
// x (perturbed in place).
inline std::vector<double> finite_diff(const std::function<double()>& eval,
                                       fsp::Tensor<double>& x, double eps = 1e-5) {
  std::vector<double> g(static_cast<size_t>(x.numel()));
  for (int64_t i = 0; i < x.numel(); ++i) {
    const double saved = x[i];
    x[i] = saved + eps;
    const double fp = eval();
    x[i] = saved - eps;
    const double fm = eval();
    x[i] = saved;
    g[static_cast<size_t>(i)] = (fp - fm) / (2.0 * eps);
  }
  return g;
}

// Brute-force softmax cross entropy: normalized probabilities computed
// directly, -log p[target], averaged over unmasked rows.
inline double oracle_softmax_ce(const std::vector<double>& logits, int64_t n, int64_t v,
                                const std::vector<int32_t>& targets,
                                const std::vector<uint8_t>& mask) {
  double acc = 0.0;
  int64_t kept = 0;
  for (int64_t i = 0; i < n; ++i) {
    if (!mask[static_cast<size_t>(i)]) continue;
    double denom = 0.0;
    for (int64_t j = 0; j < v; ++j) denom += std::exp(logits[static_cast<size_t>(i * v + j)]);
    const double p = std::exp(logits[static_cast<size_t>(i * v + targets[static_cast<size_t>(i)])]) / denom;
    acc += -std::log(p);
    ++kept;
  }
  return kept ? acc / static_cast<double>(kept) : 0.0;
}

// Elementwise weighted BCE from the definition (safe only for moderate z).
inline double oracle_weighted_bce(const std::vector<double>& z, const std::vector<double>& a,
                                  const std::vector<double>& w, int64_t n, int64_t v,
                                  const std::vector<uint8_t>& mask) {
  double acc = 0.0;
  int64_t kept = 0;
  for (int64_t i = 0; i < n; ++i) {
    if (!mask[static_cast<size_t>(i)]) continue;
    double row = 0.0;
    for (int64_t j = 0; j < v; ++j) {
      const double zi = z[static_cast<size_t>(i * v + j)];
      const double ai = a[static_cast<size_t>(i * v + j)];
      const double s = 1.0 / (1.0 + std::exp(-zi));
      row += -w[static_cast<size_t>(j)] * (ai * std::log(s) + (1.0 - ai) * std::log(1.0 - s));
    }
    acc += row;
    ++kept;
  }
  return kept ? acc / static_cast<double>(kept) : 0.0;
}

inline double oracle_l2(const std::vector<double>& p, const std::vector<double>& t,
                        int64_t n, int64_t h, const std::vector<uint8_t>& mask) {
  double acc = 0.0;
  int64_t kept = 0;
  for (int64_t i = 0; i < n; ++i) {
    if (!mask[static_cast<size_t>(i)]) continue;
    double row = 0.0;
    for (int64_t j = 0; j < h; ++j) {
      const double d = p[static_cast<size_t>(i * h + j)] - t[static_cast<size_t>(i * h + j)];
      row += d * d;
    }
    acc += row / static_cast<double>(h);
    ++kept;
  }
  return kept ? acc / static_cast<double>(kept) : 0.0;
}

}  // namespace fsp_test
