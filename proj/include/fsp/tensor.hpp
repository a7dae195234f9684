#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <memory>
#include <mutex>
#include <new>
#include <string>
#include <unordered_map>
#include <vector>

#include "fsp/common.hpp"
#include "fsp/rng.hpp"

namespace fsp {

using Shape = std::vector<int64_t>;

namespace detail {

// Recycles tensor buffers across training steps. A step allocates hundreds
// of MB of activations; without reuse the page-fault cost alone dominates
// the GEMMs. Fully thread-safe: buffers may be freed from any thread.
class BufferPool {
 public:
  static BufferPool& instance() {
    static BufferPool pool;
    return pool;
  }

  void* acquire(size_t bytes) {
    {
      std::lock_guard<std::mutex> lock(mu_);
      auto it = free_.find(bytes);
      if (it != free_.end() && !it->second.empty()) {
        void* p = it->second.back();
        it->second.pop_back();
        cached_ -= bytes;
        return p;
      }
    }
    return ::operator new(bytes, std::align_val_t(64));
  }

  void release(void* p, size_t bytes) {
    {
      std::lock_guard<std::mutex> lock(mu_);
      if (cached_ + bytes <= max_cached_) {
        free_[bytes].push_back(p);
        cached_ += bytes;
        return;
      }
    }
    ::operator delete(p, std::align_val_t(64));
  }

 private:
  BufferPool() {
    if (const char* mb = std::getenv("FSP_POOL_MB"))
      max_cached_ = static_cast<size_t>(std::atoll(mb)) << 20;
  }
  std::mutex mu_;
  std::unordered_map<size_t, std::vector<void*>> free_;
  size_t cached_ = 0;
  size_t max_cached_ = size_t(5) << 30;
};

}  // namespace detail

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) {
    FSP_CHECK_DIM(d > 0, "non-positive dimension ", d);
    n *= d;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// Dense row-major tensor. The buffer is shared between copies; reshaped()
// aliases storage, clone() deep-copies. Gradient bookkeeping lives in the
// autodiff tape, not here. Tensor(shape) zero-fills; uninit() skips the fill
// for buffers an op is about to overwrite.
template <class Real>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape) : Tensor(std::move(shape), ZeroInit{}) {}

  Tensor(Shape shape, std::vector<Real> values) {
    shape_ = std::move(shape);
    numel_ = shape_numel(shape_);
    FSP_CHECK_DIM(numel_ == static_cast<int64_t>(values.size()), "value count ",
                  values.size(), " does not match shape ", shape_str(shape_));
    buf_ = alloc(numel_);
    std::copy(values.begin(), values.end(), buf_.get());
  }

  static Tensor uninit(Shape shape) { return Tensor(std::move(shape), NoInit{}); }
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, Real v) {
    Tensor t = uninit(std::move(shape));
    t.fill(v);
    return t;
  }
  static Tensor randn(Shape shape, Rng& rng, Real stddev = Real(1)) {
    Tensor t = uninit(std::move(shape));
    Real* p = t.data();
    for (int64_t i = 0; i < t.numel(); ++i) p[i] = static_cast<Real>(rng.normal()) * stddev;
    return t;
  }

  bool defined() const { return static_cast<bool>(buf_); }
  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t size(int i) const { return shape_.at(static_cast<size_t>(i)); }
  int64_t numel() const { return numel_; }

  Real* data() { return buf_.get(); }
  const Real* data() const { return buf_.get(); }

  Real& operator[](int64_t i) { return buf_[i]; }
  Real operator[](int64_t i) const { return buf_[i]; }
  Real& at2(int64_t i, int64_t j) { return buf_[i * shape_[1] + j]; }
  Real at2(int64_t i, int64_t j) const { return buf_[i * shape_[1] + j]; }

  void fill(Real v) { std::fill(buf_.get(), buf_.get() + numel_, v); }
  void zero() {
    std::memset(static_cast<void*>(buf_.get()), 0, sizeof(Real) * static_cast<size_t>(numel_));
  }

  // Same storage, new shape.
  Tensor reshaped(Shape shape) const {
    FSP_CHECK_DIM(shape_numel(shape) == numel_, "reshape ", shape_str(shape_), " -> ",
                  shape_str(shape), " changes element count");
    Tensor t;
    t.shape_ = std::move(shape);
    t.buf_ = buf_;
    t.numel_ = numel_;
    return t;
  }

  Tensor clone() const {
    Tensor t = uninit(shape_);
    std::copy(buf_.get(), buf_.get() + numel_, t.data());
    return t;
  }

  std::vector<Real> to_vector() const {
    return std::vector<Real>(buf_.get(), buf_.get() + numel_);
  }

  bool shares_buffer(const Tensor& o) const { return buf_ == o.buf_; }

  bool all_finite() const {
    for (int64_t i = 0; i < numel_; ++i) {
      if (!std::isfinite(static_cast<double>(buf_[i]))) return false;
    }
    return true;
  }

  template <class Other>
  Tensor<Other> cast() const {
    Tensor<Other> t = Tensor<Other>::uninit(shape_);
    Other* dst = t.data();
    for (int64_t i = 0; i < numel_; ++i) dst[i] = static_cast<Other>(buf_[i]);
    return t;
  }

 private:
  struct ZeroInit {};
  struct NoInit {};
  Tensor(Shape shape, ZeroInit) {
    shape_ = std::move(shape);
    numel_ = shape_numel(shape_);
    buf_ = alloc(numel_);
    zero();
  }
  Tensor(Shape shape, NoInit) {
    shape_ = std::move(shape);
    numel_ = shape_numel(shape_);
    buf_ = alloc(numel_);
  }
  static std::shared_ptr<Real[]> alloc(int64_t n) {
    const size_t bytes = sizeof(Real) * static_cast<size_t>(n);
    Real* p = static_cast<Real*>(detail::BufferPool::instance().acquire(bytes));
    return std::shared_ptr<Real[]>(
        p, [bytes](Real* q) { detail::BufferPool::instance().release(q, bytes); });
  }

  Shape shape_;
  std::shared_ptr<Real[]> buf_;
  int64_t numel_ = 0;

  template <class R>
  friend class Tensor;
};

template <class Real>
void check_same_shape(const Tensor<Real>& a, const Tensor<Real>& b, const char* who) {
  FSP_CHECK_DIM(a.shape() == b.shape(), who, ": shape mismatch ", shape_str(a.shape()),
                " vs ", shape_str(b.shape()));
}

}  // namespace fsp
