#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "fsp/autodiff.hpp"
#include "fsp/fastmath.hpp"

namespace fsp {

// Token-id buffer shared by datasets, model and losses.
using TokenId = int32_t;

// ---------------------------------------------------------------------------
// embedding: out[i,:] = table[tokens[i],:]
// ---------------------------------------------------------------------------
template <class Real>
Var<Real> embedding(const std::vector<TokenId>& tokens, Var<Real> table) {
  Tape<Real>* tape = table.tape();
  FSP_CHECK_DIM(table.value().rank() == 2, "embedding: table must be [V,d]");
  const int64_t v = table.size(0), d = table.size(1);
  const int64_t n = static_cast<int64_t>(tokens.size());
  for (TokenId t : tokens)
    FSP_CHECK_ARG(t >= 0 && t < v, "token id ", t, " out of range [0,", v, ")");

  Tensor<Real> out = Tensor<Real>::uninit({n, d});
  const Real* pt = table.value().data();
  Real* po = out.data();
  for (int64_t i = 0; i < n; ++i)
    std::copy(pt + tokens[i] * d, pt + (tokens[i] + 1) * d, po + i * d);

  Var<Real> y = tape->make(std::move(out), table.requires_grad());
  if (y.requires_grad()) {
    Node<Real>* ntab = tape->node_of(table);
    Node<Real>* ny = tape->node_of(y);
    tape->set_backward(y, [ntab, ny, tokens, d, n] {
      const Real* g = ny->grad.data();
      Real* gt = ntab->grad.data();
      for (int64_t i = 0; i < n; ++i) {
        Real* row = gt + tokens[i] * d;
        const Real* gi = g + i * d;
        for (int64_t j = 0; j < d; ++j) row[j] += gi[j];
      }
    });
  }
  return y;
}

// x: [B*T, C] (rows grouped by batch), pos: [Tmax, C]; adds pos[t] to row (b,t).
template <class Real>
Var<Real> add_position(Var<Real> x, Var<Real> pos, int64_t batch, int64_t seq_len) {
  Tape<Real>* tape = detail::common_tape(x, pos);
  FSP_CHECK_DIM(x.value().rank() == 2 && x.size(0) == batch * seq_len,
                "add_position: bad x shape ", shape_str(x.shape()));
  FSP_CHECK_DIM(pos.value().rank() == 2 && pos.size(0) >= seq_len &&
                    pos.size(1) == x.size(1),
                "add_position: bad pos shape ", shape_str(pos.shape()));
  const int64_t c = x.size(1);
  Tensor<Real> out = Tensor<Real>::uninit(x.shape());
  const Real* px = x.value().data();
  const Real* pp = pos.value().data();
  Real* po = out.data();
  for (int64_t b = 0; b < batch; ++b) {
    for (int64_t t = 0; t < seq_len; ++t) {
      const Real* xi = px + (b * seq_len + t) * c;
      const Real* pi = pp + t * c;
      Real* oi = po + (b * seq_len + t) * c;
      for (int64_t j = 0; j < c; ++j) oi[j] = xi[j] + pi[j];
    }
  }

  Var<Real> y = tape->make(std::move(out), x.requires_grad() || pos.requires_grad());
  if (y.requires_grad()) {
    Node<Real>* nx = tape->node_of(x);
    Node<Real>* np = tape->node_of(pos);
    Node<Real>* ny = tape->node_of(y);
    tape->set_backward(y, [nx, np, ny, batch, seq_len, c] {
      const Real* g = ny->grad.data();
      if (nx->requires_grad) {
        Real* gx = nx->grad.data();
        const int64_t n = batch * seq_len * c;
        for (int64_t i = 0; i < n; ++i) gx[i] += g[i];
      }
      if (np->requires_grad) {
        Real* gp = np->grad.data();
        for (int64_t b = 0; b < batch; ++b)
          for (int64_t t = 0; t < seq_len; ++t) {
            const Real* gi = g + (b * seq_len + t) * c;
            Real* pi = gp + t * c;
            for (int64_t j = 0; j < c; ++j) pi[j] += gi[j];
          }
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// layer_norm over the last dimension, then affine. x: [N,H].
// ---------------------------------------------------------------------------
template <class Real>
Var<Real> layer_norm(Var<Real> x, Var<Real> gamma, Var<Real> beta, Real eps = Real(1e-5)) {
  Tape<Real>* tape = x.tape();
  FSP_CHECK_DIM(x.value().rank() == 2, "layer_norm: x must be [N,H]");
  const int64_t n = x.size(0), h = x.size(1);
  FSP_CHECK_DIM(gamma.value().rank() == 1 && gamma.size(0) == h &&
                    beta.value().rank() == 1 && beta.size(0) == h,
                "layer_norm: gamma/beta must be [H]");

  Tensor<Real> out = Tensor<Real>::uninit(x.shape());
  Tensor<Real> mean = Tensor<Real>::uninit({n});
  Tensor<Real> rstd = Tensor<Real>::uninit({n});
  const Real* px = x.value().data();
  const Real* pg = gamma.value().data();
  const Real* pb = beta.value().data();
  Real* po = out.data();
  for (int64_t i = 0; i < n; ++i) {
    const Real* xi = px + i * h;
    Real m = Real(0);
    for (int64_t j = 0; j < h; ++j) m += xi[j];
    m /= static_cast<Real>(h);
    Real v = Real(0);
    for (int64_t j = 0; j < h; ++j) {
      const Real d = xi[j] - m;
      v += d * d;
    }
    v /= static_cast<Real>(h);
    const Real rs = Real(1) / std::sqrt(v + eps);
    mean[i] = m;
    rstd[i] = rs;
    Real* oi = po + i * h;
    for (int64_t j = 0; j < h; ++j) oi[j] = (xi[j] - m) * rs * pg[j] + pb[j];
  }

  const bool needs = x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
  Var<Real> y = tape->make(std::move(out), needs);
  if (y.requires_grad()) {
    Node<Real>* nx = tape->node_of(x);
    Node<Real>* ng = tape->node_of(gamma);
    Node<Real>* nb = tape->node_of(beta);
    Node<Real>* ny = tape->node_of(y);
    tape->set_backward(y, [nx, ng, nb, ny, mean, rstd, n, h] {
      const Real* g = ny->grad.data();
      const Real* px = nx->value.data();
      const Real* pg = ng->value.data();
      for (int64_t i = 0; i < n; ++i) {
        const Real* xi = px + i * h;
        const Real* gi = g + i * h;
        const Real m = mean[i];
        const Real rs = rstd[i];
        // dgamma/dbeta
        if (ng->requires_grad) {
          Real* gg = ng->grad.data();
          for (int64_t j = 0; j < h; ++j) gg[j] += gi[j] * (xi[j] - m) * rs;
        }
        if (nb->requires_grad) {
          Real* gb = nb->grad.data();
          for (int64_t j = 0; j < h; ++j) gb[j] += gi[j];
        }
        if (nx->requires_grad) {
          // dx = rs * (dvec - mean(dvec) - xhat * mean(dvec * xhat)),
          // where dvec = g * gamma and xhat = (x - m) * rs.
          Real sum_d = Real(0), sum_dx = Real(0);
          for (int64_t j = 0; j < h; ++j) {
            const Real dv = gi[j] * pg[j];
            sum_d += dv;
            sum_dx += dv * (xi[j] - m) * rs;
          }
          const Real inv_h = Real(1) / static_cast<Real>(h);
          Real* gx = nx->grad.data() + i * h;
          for (int64_t j = 0; j < h; ++j) {
            const Real dv = gi[j] * pg[j];
            const Real xh = (xi[j] - m) * rs;
            gx[j] += rs * (dv - sum_d * inv_h - xh * sum_dx * inv_h);
          }
        }
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// gelu, tanh approximation (GPT-2 convention)
// ---------------------------------------------------------------------------
template <class Real>
Var<Real> gelu(Var<Real> x) {
  Tape<Real>* tape = x.tape();
  const int64_t n = x.value().numel();
  Tensor<Real> out = Tensor<Real>::uninit(x.shape());
  const Real* px = x.value().data();
  Real* po = out.data();
  const Real k = Real(0.7978845608028654);  // sqrt(2/pi)
  const Real c3 = Real(0.044715);
  for (int64_t i = 0; i < n; ++i) {
    const Real v = px[i];
    const Real u = k * (v + c3 * v * v * v);
    po[i] = Real(0.5) * v * (Real(1) + fast_tanh(u));
  }

  Var<Real> y = tape->make(std::move(out), x.requires_grad());
  if (y.requires_grad()) {
    Node<Real>* nx = tape->node_of(x);
    Node<Real>* ny = tape->node_of(y);
    tape->set_backward(y, [nx, ny, n, k, c3] {
      const Real* g = ny->grad.data();
      const Real* px = nx->value.data();
      Real* gx = nx->grad.data();
      for (int64_t i = 0; i < n; ++i) {
        const Real v = px[i];
        const Real u = k * (v + c3 * v * v * v);
        const Real th = fast_tanh(u);
        const Real sech2 = Real(1) - th * th;
        const Real du = k * (Real(1) + Real(3) * c3 * v * v);
        gx[i] += g[i] * (Real(0.5) * (Real(1) + th) + Real(0.5) * v * sech2 * du);
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Fused causal multi-head self-attention core.
// qkv: [B*T, 3C] laid out [q | k | v]; returns [B*T, C].
// Softmax probabilities are saved for the backward pass.
// ---------------------------------------------------------------------------
template <class Real>
Var<Real> causal_self_attention(Var<Real> qkv, int64_t batch, int64_t seq_len, int n_heads) {
  Tape<Real>* tape = qkv.tape();
  FSP_CHECK_DIM(qkv.value().rank() == 2 && qkv.size(0) == batch * seq_len &&
                    qkv.size(1) % 3 == 0,
                "attention: bad qkv shape ", shape_str(qkv.shape()));
  const int64_t c = qkv.size(1) / 3;
  FSP_CHECK_DIM(c % n_heads == 0, "attention: C=", c, " not divisible by heads=", n_heads);
  const int64_t hd = c / n_heads;
  const Real inv_sqrt_hd = Real(1) / std::sqrt(static_cast<Real>(hd));
  const int64_t row = 3 * c;

  Tensor<Real> out = Tensor<Real>::uninit({batch * seq_len, c});
  Tensor<Real> probs = Tensor<Real>::uninit({batch * n_heads, seq_len, seq_len});

  const Real* pqkv = qkv.value().data();
  Real* po = out.data();
  Real* pp = probs.data();
  const int T = static_cast<int>(seq_len);
  const int HD = static_cast<int>(hd);

  for (int64_t b = 0; b < batch; ++b) {
    for (int h = 0; h < n_heads; ++h) {
      const Real* q = pqkv + b * seq_len * row + h * hd;
      const Real* k = q + c;
      const Real* v = k + c;
      Real* pr = pp + (b * n_heads + h) * seq_len * seq_len;
      // scores = q * k^T / sqrt(hd)
      gemm(false, true, T, T, HD, inv_sqrt_hd, q, static_cast<int>(row), k,
           static_cast<int>(row), Real(0), pr, T);
      // causal softmax per row; positions j > i are excluded
      for (int64_t i = 0; i < seq_len; ++i) {
        Real* ri = pr + i * seq_len;
        Real mx = ri[0];
        for (int64_t j = 1; j <= i; ++j) mx = std::max(mx, ri[j]);
        Real denom = Real(0);
        for (int64_t j = 0; j <= i; ++j) {
          ri[j] = fast_exp(ri[j] - mx);
          denom += ri[j];
        }
        const Real inv = Real(1) / denom;
        for (int64_t j = 0; j <= i; ++j) ri[j] *= inv;
        for (int64_t j = i + 1; j < seq_len; ++j) ri[j] = Real(0);
      }
      // out = probs * v
      gemm(false, false, T, HD, T, Real(1), pr, T, v, static_cast<int>(row), Real(0),
           po + b * seq_len * c + h * hd, static_cast<int>(c));
    }
  }

  Var<Real> y = tape->make(std::move(out), qkv.requires_grad());
  if (y.requires_grad()) {
    Node<Real>* nq = tape->node_of(qkv);
    Node<Real>* ny = tape->node_of(y);
    tape->set_backward(y, [nq, ny, probs, batch, seq_len, n_heads, c, hd, row,
                           inv_sqrt_hd] {
      const int T = static_cast<int>(seq_len);
      const int HD = static_cast<int>(hd);
      const Real* pqkv = nq->value.data();
      const Real* pp = probs.data();
      const Real* g = ny->grad.data();
      Real* gqkv = nq->grad.data();
      std::vector<Real> dprobs(static_cast<size_t>(seq_len * seq_len));
      for (int64_t b = 0; b < batch; ++b) {
        for (int h = 0; h < n_heads; ++h) {
          const Real* q = pqkv + b * seq_len * row + h * hd;
          const Real* k = q + c;
          const Real* v = k + c;
          Real* gq = gqkv + b * seq_len * row + h * hd;
          Real* gk = gq + c;
          Real* gv = gk + c;
          const Real* pr = pp + (b * n_heads + h) * seq_len * seq_len;
          const Real* gy = g + b * seq_len * c + h * hd;
          // dv += probs^T * dy
          gemm(true, false, T, HD, T, Real(1), pr, T, gy, static_cast<int>(c), Real(1),
               gv, static_cast<int>(row));
          // dprobs = dy * v^T
          gemm(false, true, T, T, HD, Real(1), gy, static_cast<int>(c), v,
               static_cast<int>(row), Real(0), dprobs.data(), T);
          // dscores = probs .* (dprobs - rowsum(dprobs .* probs)), causal rows
          for (int64_t i = 0; i < seq_len; ++i) {
            Real* di = dprobs.data() + i * seq_len;
            const Real* pi = pr + i * seq_len;
            Real dot = Real(0);
            for (int64_t j = 0; j <= i; ++j) dot += di[j] * pi[j];
            for (int64_t j = 0; j <= i; ++j) di[j] = pi[j] * (di[j] - dot);
            for (int64_t j = i + 1; j < seq_len; ++j) di[j] = Real(0);
          }
          // dq += dscores * k / sqrt(hd); dk += dscores^T * q / sqrt(hd)
          gemm(false, false, T, HD, T, inv_sqrt_hd, dprobs.data(), T, k,
               static_cast<int>(row), Real(1), gq, static_cast<int>(row));
          gemm(true, false, T, HD, T, inv_sqrt_hd, dprobs.data(), T, q,
               static_cast<int>(row), Real(1), gk, static_cast<int>(row));
        }
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Loss ops. All three take a per-row mask; masked rows contribute zero loss
// and zero gradient. An all-masked batch yields loss 0 (degenerate case, not
// an error).
// ---------------------------------------------------------------------------

// Mean over unmasked rows of -log softmax(logits)[target].
// logits: [N,V]; targets: [N]; mask: [N] (nonzero = keep).
template <class Real>
Var<Real> softmax_cross_entropy(Var<Real> logits, std::vector<TokenId> targets,
                                std::vector<uint8_t> mask) {
  Tape<Real>* tape = logits.tape();
  FSP_CHECK_DIM(logits.value().rank() == 2, "cross_entropy: logits must be [N,V]");
  const int64_t n = logits.size(0), v = logits.size(1);
  FSP_CHECK_DIM(static_cast<int64_t>(targets.size()) == n &&
                    static_cast<int64_t>(mask.size()) == n,
                "cross_entropy: targets/mask size mismatch");

  int64_t kept = 0;
  for (int64_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    FSP_CHECK_ARG(targets[i] >= 0 && targets[i] < v, "cross_entropy: target ",
                  targets[i], " out of [0,", v, ")");
    ++kept;
  }

  Tensor<Real> lse = Tensor<Real>::uninit({n > 0 ? n : 1});
  const Real* pl = logits.value().data();
  Real acc = Real(0);
  for (int64_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    const Real* li = pl + i * v;
    Real mx = li[0];
    for (int64_t j = 1; j < v; ++j) mx = std::max(mx, li[j]);
    Real s = Real(0);
    for (int64_t j = 0; j < v; ++j) s += fast_exp(li[j] - mx);
    const Real l = mx + std::log(s);
    lse[i] = l;
    acc += l - li[targets[i]];
  }
  const Real loss = kept > 0 ? acc / static_cast<Real>(kept) : Real(0);

  Var<Real> y = tape->make(Tensor<Real>({1}, {loss}), logits.requires_grad());
  if (y.requires_grad() && kept > 0) {
    Node<Real>* nl = tape->node_of(logits);
    Node<Real>* ny = tape->node_of(y);
    tape->set_backward(y, [nl, ny, lse, targets = std::move(targets),
                           mask = std::move(mask), n, v, kept] {
      const Real g = ny->grad[0] / static_cast<Real>(kept);
      const Real* pl = nl->value.data();
      Real* gl = nl->grad.data();
      for (int64_t i = 0; i < n; ++i) {
        if (!mask[i]) continue;
        const Real* li = pl + i * v;
        Real* gi = gl + i * v;
        const Real l = lse[i];
        for (int64_t j = 0; j < v; ++j) gi[j] += g * fast_exp(li[j] - l);
        gi[targets[i]] -= g;
      }
    });
  }
  return y;
}

// Mean over unmasked rows of -sum_j w[j] * (a*log(sig(z)) + (1-a)*log(1-sig(z))).
// Stable form: w * (max(z,0) - z*a + log1p(exp(-|z|))).
// logits/targets: [N,V]; weights: [V] (empty tensor = uniform 1); mask: [N].
template <class Real>
Var<Real> weighted_sigmoid_bce(Var<Real> logits, Tensor<Real> targets,
                               Tensor<Real> weights, std::vector<uint8_t> mask) {
  Tape<Real>* tape = logits.tape();
  FSP_CHECK_DIM(logits.value().rank() == 2, "bce: logits must be [N,V]");
  const int64_t n = logits.size(0), v = logits.size(1);
  check_same_shape(logits.value(), targets, "bce logits/targets");
  FSP_CHECK_DIM(static_cast<int64_t>(mask.size()) == n, "bce: mask size mismatch");
  const bool has_w = weights.defined();
  if (has_w) {
    FSP_CHECK_DIM(weights.rank() == 1 && weights.size(0) == v, "bce: weights must be [V]");
    for (int64_t j = 0; j < v; ++j)
      FSP_CHECK_ARG(std::isfinite(static_cast<double>(weights[j])) && weights[j] >= Real(0),
                    "bce: weight[", j, "] negative or non-finite");
  }

  int64_t kept = 0;
  for (int64_t i = 0; i < n; ++i) kept += mask[i] ? 1 : 0;

  const Real* pl = logits.value().data();
  const Real* pa = targets.data();
  Real acc = Real(0);
  for (int64_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    const Real* li = pl + i * v;
    const Real* ai = pa + i * v;
    Real row = Real(0);
    for (int64_t j = 0; j < v; ++j) {
      const Real z = li[j];
      const Real a = ai[j];
      const Real w = has_w ? weights[j] : Real(1);
      row += w * (std::max(z, Real(0)) - z * a + std::log1p(fast_exp(-std::abs(z))));
    }
    acc += row;
  }
  const Real loss = kept > 0 ? acc / static_cast<Real>(kept) : Real(0);

  Var<Real> y = tape->make(Tensor<Real>({1}, {loss}), logits.requires_grad());
  if (y.requires_grad() && kept > 0) {
    Node<Real>* nl = tape->node_of(logits);
    Node<Real>* ny = tape->node_of(y);
    tape->set_backward(y, [nl, ny, targets, weights, has_w, mask = std::move(mask), n,
                           v, kept] {
      const Real g = ny->grad[0] / static_cast<Real>(kept);
      const Real* pl = nl->value.data();
      const Real* pa = targets.data();
      Real* gl = nl->grad.data();
      for (int64_t i = 0; i < n; ++i) {
        if (!mask[i]) continue;
        const Real* li = pl + i * v;
        const Real* ai = pa + i * v;
        Real* gi = gl + i * v;
        for (int64_t j = 0; j < v; ++j) {
          const Real z = li[j];
          const Real s = fast_sigmoid(z);
          const Real w = has_w ? weights[j] : Real(1);
          gi[j] += g * w * (s - ai[j]);
        }
      }
    });
  }
  return y;
}

// Mean over unmasked rows of mean_j (pred - target)^2. target carries no
// gradient (frozen teacher output).
template <class Real>
Var<Real> l2_match(Var<Real> pred, Tensor<Real> target, std::vector<uint8_t> mask) {
  Tape<Real>* tape = pred.tape();
  FSP_CHECK_DIM(pred.value().rank() == 2, "l2_match: pred must be [N,H]");
  check_same_shape(pred.value(), target, "l2_match");
  const int64_t n = pred.size(0), h = pred.size(1);
  FSP_CHECK_DIM(static_cast<int64_t>(mask.size()) == n, "l2_match: mask size mismatch");

  int64_t kept = 0;
  for (int64_t i = 0; i < n; ++i) kept += mask[i] ? 1 : 0;

  const Real* pp = pred.value().data();
  const Real* pt = target.data();
  Real acc = Real(0);
  for (int64_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    const Real* pi = pp + i * h;
    const Real* ti = pt + i * h;
    Real row = Real(0);
    for (int64_t j = 0; j < h; ++j) {
      const Real d = pi[j] - ti[j];
      row += d * d;
    }
    acc += row / static_cast<Real>(h);
  }
  const Real loss = kept > 0 ? acc / static_cast<Real>(kept) : Real(0);

  Var<Real> y = tape->make(Tensor<Real>({1}, {loss}), pred.requires_grad());
  if (y.requires_grad() && kept > 0) {
    Node<Real>* np = tape->node_of(pred);
    Node<Real>* ny = tape->node_of(y);
    tape->set_backward(y, [np, ny, target, mask = std::move(mask), n, h, kept] {
      const Real g = ny->grad[0] * Real(2) / (static_cast<Real>(kept) * static_cast<Real>(h));
      const Real* pp = np->value.data();
      const Real* pt = target.data();
      Real* gp = np->grad.data();
      for (int64_t i = 0; i < n; ++i) {
        if (!mask[i]) continue;
        const Real* pi = pp + i * h;
        const Real* ti = pt + i * h;
        Real* gi = gp + i * h;
        for (int64_t j = 0; j < h; ++j) gi[j] += g * (pi[j] - ti[j]);
      }
    });
  }
  return y;
}

}  // namespace fsp
