#pragma once

#include <deque>
#include <functional>
#include <utility>
#include <vector>

#include "fsp/blas.hpp"
#include "fsp/tensor.hpp"

namespace fsp {

// Reverse-mode autodiff at tensor-op granularity. A Tape owns the nodes of
// one forward pass; creation order is a valid topological order, so the
// backward sweep is a reverse walk. Tapes are single-writer: one tape, one
// thread, one forward+backward.

template <class Real>
struct Node {
  Tensor<Real> value;
  Tensor<Real> grad;  // defined iff requires_grad
  bool requires_grad = false;
  std::function<void()> backward;  // empty for leaves and no-grad nodes
};

template <class Real>
class Tape;

template <class Real>
class Var {
 public:
  Var() = default;

  const Tensor<Real>& value() const { return node_->value; }
  Tensor<Real>& value() { return node_->value; }
  const Tensor<Real>& grad() const { return node_->grad; }
  Tensor<Real>& grad() { return node_->grad; }
  bool requires_grad() const { return node_ != nullptr && node_->requires_grad; }
  bool defined() const { return node_ != nullptr; }

  const Shape& shape() const { return node_->value.shape(); }
  int64_t size(int i) const { return node_->value.size(i); }

  Tape<Real>* tape() const { return tape_; }

 private:
  friend class Tape<Real>;
  Var(Node<Real>* n, Tape<Real>* t, size_t idx) : node_(n), tape_(t), idx_(idx) {}
  Node<Real>* node_ = nullptr;
  Tape<Real>* tape_ = nullptr;
  size_t idx_ = 0;
};

template <class Real>
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }
  size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  // Constant input; never receives gradient.
  Var<Real> constant(Tensor<Real> v) { return push(std::move(v), false); }

  // Differentiable input owning a fresh zeroed gradient buffer.
  Var<Real> input(Tensor<Real> v) { return push(std::move(v), grad_enabled_); }

  // Parameter view: value and gradient buffers are shared with the caller, so
  // accumulated gradients land directly in the optimizer's buffers.
  Var<Real> param(const Tensor<Real>& value, const Tensor<Real>& grad) {
    if (!grad_enabled_) return push_shared(value, Tensor<Real>(), false);
    check_same_shape(value, grad, "tape.param");
    return push_shared(value, grad, true);
  }

  // Internal: fresh node for an op output.
  Var<Real> make(Tensor<Real> value, bool requires_grad) {
    return push(std::move(value), requires_grad && grad_enabled_);
  }

  // Internal: node aliasing existing buffers (reshape-style views).
  Var<Real> make_alias(Tensor<Real> value, Tensor<Real> grad, bool requires_grad) {
    Node<Real> n;
    n.value = std::move(value);
    n.requires_grad = requires_grad && grad_enabled_;
    if (n.requires_grad) n.grad = std::move(grad);
    nodes_.push_back(std::move(n));
    return Var<Real>(&nodes_.back(), this, nodes_.size() - 1);
  }

  void set_backward(Var<Real> v, std::function<void()> fn) {
    v.node_->backward = std::move(fn);
  }

  Node<Real>* node_of(Var<Real> v) { return v.node_; }

  // Seeds d(root)/d(root) = 1 and sweeps the tape in reverse creation order.
  void backward(Var<Real> root) {
    FSP_CHECK_ARG(grad_enabled_, "backward on a no-grad tape");
    FSP_CHECK_ARG(root.defined() && root.tape_ == this, "backward: foreign var");
    FSP_CHECK_DIM(root.value().numel() == 1, "backward root must be scalar");
    if (!root.requires_grad()) return;
    root.grad()[0] += Real(1);
    for (size_t i = root.idx_ + 1; i-- > 0;) {
      if (nodes_[i].backward) nodes_[i].backward();
    }
  }

 private:
  Var<Real> push(Tensor<Real> v, bool requires_grad) {
    Node<Real> n;
    n.value = std::move(v);
    n.requires_grad = requires_grad;
    if (requires_grad) n.grad = Tensor<Real>::zeros(n.value.shape());
    nodes_.push_back(std::move(n));
    return Var<Real>(&nodes_.back(), this, nodes_.size() - 1);
  }
  Var<Real> push_shared(const Tensor<Real>& v, const Tensor<Real>& g, bool requires_grad) {
    Node<Real> n;
    n.value = v;
    n.grad = g;
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var<Real>(&nodes_.back(), this, nodes_.size() - 1);
  }

  std::deque<Node<Real>> nodes_;
  bool grad_enabled_;
};

namespace detail {
template <class Real>
Tape<Real>* common_tape(const Var<Real>& a, const Var<Real>& b) {
  FSP_CHECK_ARG(a.tape() != nullptr && a.tape() == b.tape(),
                "operands from different tapes");
  return a.tape();
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Core ops
// ---------------------------------------------------------------------------

// c = a + b, same shape.
template <class Real>
Var<Real> add(Var<Real> a, Var<Real> b) {
  Tape<Real>* tape = detail::common_tape(a, b);
  check_same_shape(a.value(), b.value(), "add");
  Tensor<Real> out = Tensor<Real>::uninit(a.shape());
  const Real* pa = a.value().data();
  const Real* pb = b.value().data();
  Real* po = out.data();
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];

  Var<Real> c = tape->make(std::move(out), a.requires_grad() || b.requires_grad());
  if (c.requires_grad()) {
    Node<Real>* na = tape->node_of(a);
    Node<Real>* nb = tape->node_of(b);
    Node<Real>* nc = tape->node_of(c);
    tape->set_backward(c, [na, nb, nc, n] {
      const Real* g = nc->grad.data();
      if (na->requires_grad) {
        Real* ga = na->grad.data();
        for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
      }
      if (nb->requires_grad) {
        Real* gb = nb->grad.data();
        for (int64_t i = 0; i < n; ++i) gb[i] += g[i];
      }
    });
  }
  return c;
}

// y = x + bias (bias broadcast over rows). x: [N,C], bias: [C].
template <class Real>
Var<Real> add_bias(Var<Real> x, Var<Real> bias) {
  Tape<Real>* tape = detail::common_tape(x, bias);
  FSP_CHECK_DIM(x.value().rank() == 2 && bias.value().rank() == 1 &&
                    x.size(1) == bias.size(0),
                "add_bias: x ", shape_str(x.shape()), " bias ", shape_str(bias.shape()));
  const int64_t rows = x.size(0), cols = x.size(1);
  Tensor<Real> out = Tensor<Real>::uninit(x.shape());
  const Real* px = x.value().data();
  const Real* pb = bias.value().data();
  Real* po = out.data();
  for (int64_t i = 0; i < rows; ++i) {
    const Real* xi = px + i * cols;
    Real* oi = po + i * cols;
    for (int64_t j = 0; j < cols; ++j) oi[j] = xi[j] + pb[j];
  }

  Var<Real> y = tape->make(std::move(out), x.requires_grad() || bias.requires_grad());
  if (y.requires_grad()) {
    Node<Real>* nx = tape->node_of(x);
    Node<Real>* nb = tape->node_of(bias);
    Node<Real>* ny = tape->node_of(y);
    tape->set_backward(y, [nx, nb, ny, rows, cols] {
      const Real* g = ny->grad.data();
      if (nx->requires_grad) {
        Real* gx = nx->grad.data();
        for (int64_t i = 0; i < rows * cols; ++i) gx[i] += g[i];
      }
      if (nb->requires_grad) {
        Real* gb = nb->grad.data();
        for (int64_t i = 0; i < rows; ++i) {
          const Real* gi = g + i * cols;
          for (int64_t j = 0; j < cols; ++j) gb[j] += gi[j];
        }
      }
    });
  }
  return y;
}

template <class Real>
Var<Real> scale(Var<Real> a, Real c) {
  Tape<Real>* tape = a.tape();
  Tensor<Real> out = Tensor<Real>::uninit(a.shape());
  const Real* pa = a.value().data();
  Real* po = out.data();
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * c;

  Var<Real> y = tape->make(std::move(out), a.requires_grad());
  if (y.requires_grad()) {
    Node<Real>* na = tape->node_of(a);
    Node<Real>* ny = tape->node_of(y);
    tape->set_backward(y, [na, ny, c, n] {
      const Real* g = ny->grad.data();
      Real* ga = na->grad.data();
      for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * c;
    });
  }
  return y;
}

// C[m,n] = A[m,k] * B[k,n]. Backward: dA += dC*B^T, dB += A^T*dC.
template <class Real>
Var<Real> matmul(Var<Real> a, Var<Real> b) {
  Tape<Real>* tape = detail::common_tape(a, b);
  FSP_CHECK_DIM(a.value().rank() == 2 && b.value().rank() == 2 && a.size(1) == b.size(0),
                "matmul: ", shape_str(a.shape()), " x ", shape_str(b.shape()));
  const int m = static_cast<int>(a.size(0));
  const int k = static_cast<int>(a.size(1));
  const int n = static_cast<int>(b.size(1));
  Tensor<Real> out = Tensor<Real>::uninit({m, n});
  gemm(false, false, m, n, k, Real(1), a.value().data(), k, b.value().data(), n,
       Real(0), out.data(), n);

  Var<Real> c = tape->make(std::move(out), a.requires_grad() || b.requires_grad());
  if (c.requires_grad()) {
    Node<Real>* na = tape->node_of(a);
    Node<Real>* nb = tape->node_of(b);
    Node<Real>* nc = tape->node_of(c);
    tape->set_backward(c, [na, nb, nc, m, n, k] {
      const Real* g = nc->grad.data();
      if (na->requires_grad) {
        gemm(false, true, m, k, n, Real(1), g, n, nb->value.data(), n, Real(1),
             na->grad.data(), k);
      }
      if (nb->requires_grad) {
        gemm(true, false, k, n, m, Real(1), na->value.data(), k, g, n, Real(1),
             nb->grad.data(), n);
      }
    });
  }
  return c;
}

// C[m,n] = A[m,k] * B[n,k]^T (used for tied unembedding).
template <class Real>
Var<Real> matmul_nt(Var<Real> a, Var<Real> b) {
  Tape<Real>* tape = detail::common_tape(a, b);
  FSP_CHECK_DIM(a.value().rank() == 2 && b.value().rank() == 2 && a.size(1) == b.size(1),
                "matmul_nt: ", shape_str(a.shape()), " x ", shape_str(b.shape()), "^T");
  const int m = static_cast<int>(a.size(0));
  const int k = static_cast<int>(a.size(1));
  const int n = static_cast<int>(b.size(0));
  Tensor<Real> out = Tensor<Real>::uninit({m, n});
  gemm(false, true, m, n, k, Real(1), a.value().data(), k, b.value().data(), k,
       Real(0), out.data(), n);

  Var<Real> c = tape->make(std::move(out), a.requires_grad() || b.requires_grad());
  if (c.requires_grad()) {
    Node<Real>* na = tape->node_of(a);
    Node<Real>* nb = tape->node_of(b);
    Node<Real>* nc = tape->node_of(c);
    tape->set_backward(c, [na, nb, nc, m, n, k] {
      const Real* g = nc->grad.data();
      if (na->requires_grad) {
        gemm(false, false, m, k, n, Real(1), g, n, nb->value.data(), k, Real(1),
             na->grad.data(), k);
      }
      if (nb->requires_grad) {
        gemm(true, false, n, k, m, Real(1), g, n, na->value.data(), k, Real(1),
             nb->grad.data(), k);
      }
    });
  }
  return c;
}

// View with a new shape; storage and gradient buffers are aliased, so no
// backward function is needed.
template <class Real>
Var<Real> reshape(Var<Real> a, Shape shape) {
  Tape<Real>* tape = a.tape();
  Tensor<Real> v = a.value().reshaped(shape);
  Tensor<Real> g;
  if (a.requires_grad()) g = a.grad().reshaped(shape);
  return tape->make_alias(std::move(v), std::move(g), a.requires_grad());
}

// out[N, c0+c1+...] = [x0 | x1 | ...], column-wise concatenation.
template <class Real>
Var<Real> concat_cols(const std::vector<Var<Real>>& xs) {
  FSP_CHECK_ARG(!xs.empty(), "concat_cols: empty input");
  Tape<Real>* tape = xs[0].tape();
  const int64_t rows = xs[0].size(0);
  int64_t total = 0;
  bool needs_grad = false;
  for (const auto& x : xs) {
    FSP_CHECK_DIM(x.value().rank() == 2 && x.size(0) == rows, "concat_cols: row mismatch");
    total += x.size(1);
    needs_grad = needs_grad || x.requires_grad();
  }
  Tensor<Real> out = Tensor<Real>::uninit({rows, total});
  Real* po = out.data();
  int64_t off = 0;
  for (const auto& x : xs) {
    const int64_t c = x.size(1);
    const Real* px = x.value().data();
    for (int64_t i = 0; i < rows; ++i)
      std::copy(px + i * c, px + (i + 1) * c, po + i * total + off);
    off += c;
  }

  Var<Real> y = tape->make(std::move(out), needs_grad);
  if (y.requires_grad()) {
    std::vector<Node<Real>*> nodes;
    nodes.reserve(xs.size());
    for (const auto& x : xs) nodes.push_back(tape->node_of(x));
    Node<Real>* ny = tape->node_of(y);
    tape->set_backward(y, [nodes, ny, rows, total] {
      const Real* g = ny->grad.data();
      int64_t off = 0;
      for (Node<Real>* nx : nodes) {
        const int64_t c = nx->value.size(1);
        if (nx->requires_grad) {
          Real* gx = nx->grad.data();
          for (int64_t i = 0; i < rows; ++i) {
            const Real* gi = g + i * total + off;
            Real* go = gx + i * c;
            for (int64_t j = 0; j < c; ++j) go[j] += gi[j];
          }
        }
        off += c;
      }
    });
  }
  return y;
}

// Scalar sum of all elements (mostly for gradient checks).
template <class Real>
Var<Real> sum_all(Var<Real> a) {
  Tape<Real>* tape = a.tape();
  const Real* pa = a.value().data();
  const int64_t n = a.value().numel();
  Real acc = Real(0);
  for (int64_t i = 0; i < n; ++i) acc += pa[i];
  Var<Real> y = tape->make(Tensor<Real>({1}, {acc}), a.requires_grad());
  if (y.requires_grad()) {
    Node<Real>* na = tape->node_of(a);
    Node<Real>* ny = tape->node_of(y);
    tape->set_backward(y, [na, ny, n] {
      const Real g = ny->grad[0];
      Real* ga = na->grad.data();
      for (int64_t i = 0; i < n; ++i) ga[i] += g;
    });
  }
  return y;
}

}  // namespace fsp
