#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "fsp/tensor.hpp"

namespace fsp {

// Named trainable tensor with a persistent gradient buffer. The tape views
// these buffers, so gradients accumulate here across backward passes until
// zero_grad().
template <class Real>
struct Param {
  std::string name;
  Tensor<Real> value;
  Tensor<Real> grad;
  bool decay = true;  // decoupled weight decay applies only to weight matrices

  Param() = default;
  Param(std::string n, Tensor<Real> v, bool d)
      : name(std::move(n)), value(std::move(v)), grad(Tensor<Real>::zeros(value.shape())),
        decay(d) {}
};

template <class Real>
void zero_grads(std::vector<Param<Real>>& params) {
  for (auto& p : params) p.grad.zero();
}

template <class Real>
int64_t param_count(const std::vector<Param<Real>>& params) {
  int64_t n = 0;
  for (const auto& p : params) n += p.value.numel();
  return n;
}

template <class Real>
double grad_global_norm(const std::vector<Param<Real>>& params) {
  double sq = 0.0;
  for (const auto& p : params) {
    const Real* g = p.grad.data();
    for (int64_t i = 0; i < p.grad.numel(); ++i)
      sq += static_cast<double>(g[i]) * static_cast<double>(g[i]);
  }
  return std::sqrt(sq);
}

// Global L2-norm clipping. If ||g|| > max_norm, scales every gradient by
// max_norm/||g||; returns the applied scale (1 when no clipping).
template <class Real>
Real clip_grad_norm(std::vector<Param<Real>>& params, Real max_norm) {
  FSP_CHECK_ARG(max_norm > Real(0), "clip_grad_norm: max_norm must be > 0");
  double sq = 0.0;
  for (const auto& p : params) {
    const Real* g = p.grad.data();
    for (int64_t i = 0; i < p.grad.numel(); ++i)
      sq += static_cast<double>(g[i]) * static_cast<double>(g[i]);
  }
  const double norm = std::sqrt(sq);
  if (norm <= static_cast<double>(max_norm) || norm == 0.0) return Real(1);
  const Real s = static_cast<Real>(static_cast<double>(max_norm) / norm);
  for (auto& p : params) {
    Real* g = p.grad.data();
    for (int64_t i = 0; i < p.grad.numel(); ++i) g[i] *= s;
  }
  return s;
}

// AdamW with bias correction and decoupled weight decay.
template <class Real>
class AdamW {
 public:
  struct Hyper {
    Real lr = Real(3e-4);
    Real beta1 = Real(0.9);
    Real beta2 = Real(0.95);
    Real eps = Real(1e-8);
    Real weight_decay = Real(0);
  };

  AdamW() = default;
  explicit AdamW(Hyper h) : hyper_(h) {}

  const Hyper& hyper() const { return hyper_; }
  Hyper& hyper() { return hyper_; }
  int64_t step_count() const { return t_; }

  // One update over all params. Throws NumericError (step rejected, params
  // untouched) if any gradient is non-finite.
  void step(std::vector<Param<Real>>& params) {
    ensure_state(params);
    for (const auto& p : params) {
      FSP_CHECK(p.grad.all_finite(), NumericError,
                "adamw: non-finite gradient in '", p.name, "', step rejected");
    }
    ++t_;
    const Real b1 = hyper_.beta1, b2 = hyper_.beta2;
    const Real bc1 = Real(1) - std::pow(b1, static_cast<Real>(t_));
    const Real bc2 = Real(1) - std::pow(b2, static_cast<Real>(t_));
    for (size_t k = 0; k < params.size(); ++k) {
      Param<Real>& p = params[k];
      Real* w = p.value.data();
      const Real* g = p.grad.data();
      Real* m = m_[k].data();
      Real* v = v_[k].data();
      const Real wd = p.decay ? hyper_.weight_decay : Real(0);
      const int64_t n = p.value.numel();
      for (int64_t i = 0; i < n; ++i) {
        m[i] = b1 * m[i] + (Real(1) - b1) * g[i];
        v[i] = b2 * v[i] + (Real(1) - b2) * g[i] * g[i];
        const Real mhat = m[i] / bc1;
        const Real vhat = v[i] / bc2;
        w[i] -= hyper_.lr * (mhat / (std::sqrt(vhat) + hyper_.eps) + wd * w[i]);
      }
    }
  }

 private:
  void ensure_state(const std::vector<Param<Real>>& params) {
    if (!m_.empty()) {
      FSP_CHECK_CFG(m_.size() == params.size(), "adamw: parameter set changed");
      return;
    }
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const auto& p : params) {
      m_.push_back(Tensor<Real>::zeros(p.value.shape()));
      v_.push_back(Tensor<Real>::zeros(p.value.shape()));
    }
  }

  Hyper hyper_;
  int64_t t_ = 0;
  std::vector<Tensor<Real>> m_, v_;
};

}  // namespace fsp
