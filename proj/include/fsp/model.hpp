#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "fsp/ops.hpp"
#include "fsp/optim.hpp"

namespace fsp {

// Auxiliary head output flavor:
//  - TokenLogits: one transformer block, final norm, then the shared
//    unembedding (multi-token / skip-token prediction heads).
//  - SummaryLogits: block + norm + dedicated d->V projection (multi-hot
//    future-summary heads trained with BCE).
//  - SummaryVector: block + norm + dedicated d->summary_dim projection
//    (matches a teacher hidden state under an l2 loss).
enum class AuxHeadKind { TokenLogits, SummaryLogits, SummaryVector };

inline const char* to_string(AuxHeadKind k) {
  switch (k) {
    case AuxHeadKind::TokenLogits: return "token-logits";
    case AuxHeadKind::SummaryLogits: return "summary-logits";
    case AuxHeadKind::SummaryVector: return "summary-vector";
  }
  return "?";
}

struct ModelConfig {
  int n_layers = 12;
  int d_model = 384;
  int n_heads = 6;
  int mlp_factor = 4;
  int vocab_size = 0;
  int max_seq_len = 0;
  int n_aux_heads = 0;
  AuxHeadKind aux_head_kind = AuxHeadKind::TokenLogits;
  // When set, aux head i additionally consumes embeddings of i+1 future-token
  // streams through a linear merge (reduced-teacher-forcing wiring).
  bool aux_inject_tokens = false;
  int summary_dim = 0;  // SummaryVector width; 0 = d_model
  bool tie_unembedding = true;

  static ModelConfig gpt_mini(int vocab, int max_seq) {
    ModelConfig c;
    c.n_layers = 12;
    c.d_model = 384;
    c.n_heads = 6;
    c.mlp_factor = 4;
    c.vocab_size = vocab;
    c.max_seq_len = max_seq;
    return c;
  }

  int summary_width() const { return summary_dim > 0 ? summary_dim : d_model; }

  void validate() const {
    FSP_CHECK_CFG(n_layers >= 1 && d_model >= 1 && n_heads >= 1 && mlp_factor >= 1,
                  "model: non-positive size field");
    FSP_CHECK_CFG(d_model % n_heads == 0, "model: d_model ", d_model,
                  " not divisible by n_heads ", n_heads);
    FSP_CHECK_CFG(vocab_size >= 2, "model: vocab_size must be >= 2");
    FSP_CHECK_CFG(max_seq_len >= 1, "model: max_seq_len must be >= 1");
    FSP_CHECK_CFG(n_aux_heads >= 0, "model: n_aux_heads must be >= 0");
  }

  // Closed-form parameter count; the test suite checks it against the sum of
  // allocated tensor sizes.
  int64_t expected_param_count() const {
    const int64_t d = d_model, f = mlp_factor, v = vocab_size;
    const int64_t block = (4 + 2 * f) * d * d + (9 + f) * d;
    int64_t n = v * d + static_cast<int64_t>(max_seq_len) * d;  // tok + pos
    n += static_cast<int64_t>(n_layers) * block;
    n += 2 * d;  // final norm
    if (!tie_unembedding) n += v * d;
    for (int i = 0; i < n_aux_heads; ++i) {
      n += block + 2 * d;  // aux block + its final norm
      if (aux_inject_tokens) n += (static_cast<int64_t>(i) + 2) * d * d + d;  // merge
      if (aux_head_kind == AuxHeadKind::SummaryLogits) n += d * v + v;
      if (aux_head_kind == AuxHeadKind::SummaryVector)
        n += d * static_cast<int64_t>(summary_width()) + summary_width();
    }
    return n;
  }
};

template <class Real>
struct ForwardResult {
  Var<Real> backbone;  // backbone output, pre final norm  [B*T, d]
  Var<Real> hidden;    // after final norm (pre-unembedding) [B*T, d]
  std::vector<Var<Real>> block_outputs;  // filled when record_blocks
};

// GPT-style causal transformer: token+position embeddings, pre-norm blocks,
// final norm, (tied) unembedding, plus optional auxiliary heads that read the
// backbone output. Heads never read each other.
template <class Real>
class Gpt {
 public:
  Gpt(ModelConfig cfg, uint64_t init_seed) : cfg_(cfg) {
    cfg_.validate();
    build(init_seed);
  }

  const ModelConfig& config() const { return cfg_; }
  std::vector<Param<Real>>& params() { return params_; }
  const std::vector<Param<Real>>& params() const { return params_; }

  Param<Real>& param(const std::string& name) {
    for (auto& p : params_)
      if (p.name == name) return p;
    throw ConfigError("no parameter named '" + name + "'");
  }
  const Param<Real>& param(const std::string& name) const {
    return const_cast<Gpt*>(this)->param(name);
  }

  int64_t param_element_count() const { return fsp::param_count(params_); }

  // f_h(f_s(tokens)): runs the backbone and final norm. tokens is a
  // row-major [B,T] buffer.
  ForwardResult<Real> forward_hidden(Tape<Real>& tape, const std::vector<TokenId>& tokens,
                                     int64_t batch, int64_t seq_len,
                                     bool record_blocks = false) const {
    FSP_CHECK_ARG(static_cast<int64_t>(tokens.size()) == batch * seq_len,
                  "forward: token buffer size mismatch");
    FSP_CHECK_ARG(seq_len <= cfg_.max_seq_len, "forward: T=", seq_len,
                  " exceeds max_seq_len=", cfg_.max_seq_len);
    ForwardResult<Real> out;
    Var<Real> tok = embedding(tokens, pv(tape, "tok_emb"));
    Var<Real> x = add_position(tok, pv(tape, "pos_emb"), batch, seq_len);
    for (int l = 0; l < cfg_.n_layers; ++l) {
      x = block_forward(tape, x, "h" + std::to_string(l) + ".", batch, seq_len);
      if (record_blocks) out.block_outputs.push_back(x);
    }
    out.backbone = x;
    out.hidden = layer_norm(x, pv(tape, "lnf.g"), pv(tape, "lnf.b"));
    return out;
  }

  // Next-token logits [B*T, V] from the post-norm hidden state.
  Var<Real> ntp_logits(Tape<Real>& tape, Var<Real> hidden) const {
    return matmul_nt(hidden, pv(tape, cfg_.tie_unembedding ? "tok_emb" : "unembed"));
  }

  // Auxiliary head forward. extra_token_streams carries the future tokens a
  // reduced-teacher-forcing head consumes (one [B*T] stream per injected
  // offset); it must be empty for heads built without injection.
  Var<Real> aux_forward(Tape<Real>& tape, Var<Real> backbone, int head_index,
                        const std::vector<std::vector<TokenId>>& extra_token_streams,
                        int64_t batch, int64_t seq_len) const {
    FSP_CHECK_CFG(head_index >= 0 && head_index < cfg_.n_aux_heads,
                  "aux_forward: head ", head_index, " out of range (n_aux_heads=",
                  cfg_.n_aux_heads, ")");
    const std::string pre = "aux" + std::to_string(head_index) + ".";
    Var<Real> x = backbone;
    if (cfg_.aux_inject_tokens) {
      FSP_CHECK_CFG(static_cast<int>(extra_token_streams.size()) == head_index + 1,
                    "aux_forward: head ", head_index, " expects ", head_index + 1,
                    " injected token streams, got ", extra_token_streams.size());
      std::vector<Var<Real>> parts = {backbone};
      for (const auto& stream : extra_token_streams)
        parts.push_back(embedding(stream, pv(tape, "tok_emb")));
      Var<Real> merged = concat_cols(parts);
      x = add_bias(matmul(merged, pv(tape, pre + "merge.w")), pv(tape, pre + "merge.b"));
    } else {
      FSP_CHECK_CFG(extra_token_streams.empty(),
                    "aux_forward: extra tokens supplied to a head without injection wiring");
    }
    x = block_forward(tape, x, pre + "h.", batch, seq_len);
    x = layer_norm(x, pv(tape, pre + "lnf.g"), pv(tape, pre + "lnf.b"));
    switch (cfg_.aux_head_kind) {
      case AuxHeadKind::TokenLogits:
        return ntp_logits(tape, x);  // shared unembedding
      case AuxHeadKind::SummaryLogits:
      case AuxHeadKind::SummaryVector:
        return add_bias(matmul(x, pv(tape, pre + "proj.w")), pv(tape, pre + "proj.b"));
    }
    throw ConfigError("aux_forward: bad head kind");
  }

  uint64_t weight_hash() const {
    uint64_t h = 1469598103934665603ull;
    for (const auto& p : params_) {
      h = fnv1a64(p.name, h);
      h = fnv1a64_bytes(p.value.data(), sizeof(Real) * static_cast<size_t>(p.value.numel()), h);
    }
    return h;
  }

 private:
  Var<Real> pv(Tape<Real>& tape, const std::string& name) const {
    // one tape node per param per forward; cached per tape
    const Param<Real>& p = param_ref(name);
    return tape.param(p.value, p.grad);
  }

  const Param<Real>& param_ref(const std::string& name) const {
    auto it = index_.find(name);
    FSP_CHECK_CFG(it != index_.end(), "no parameter named '", name, "'");
    return params_[it->second];
  }

  Var<Real> block_forward(Tape<Real>& tape, Var<Real> x, const std::string& pre,
                          int64_t batch, int64_t seq_len) const {
    Var<Real> a = layer_norm(x, pv(tape, pre + "ln1.g"), pv(tape, pre + "ln1.b"));
    Var<Real> qkv = add_bias(matmul(a, pv(tape, pre + "attn.wqkv")), pv(tape, pre + "attn.bqkv"));
    Var<Real> att = causal_self_attention(qkv, batch, seq_len, cfg_.n_heads);
    Var<Real> proj = add_bias(matmul(att, pv(tape, pre + "attn.wo")), pv(tape, pre + "attn.bo"));
    x = add(x, proj);
    Var<Real> m = layer_norm(x, pv(tape, pre + "ln2.g"), pv(tape, pre + "ln2.b"));
    Var<Real> fc = gelu(add_bias(matmul(m, pv(tape, pre + "mlp.wfc")), pv(tape, pre + "mlp.bfc")));
    Var<Real> mlp = add_bias(matmul(fc, pv(tape, pre + "mlp.wproj")), pv(tape, pre + "mlp.bproj"));
    return add(x, mlp);
  }

  // --- construction ------------------------------------------------------

  void build(uint64_t seed) {
    const int64_t d = cfg_.d_model;
    const int64_t v = cfg_.vocab_size;
    add_param(seed, "tok_emb", {v, d}, InitKind::Normal);
    add_param(seed, "pos_emb", {cfg_.max_seq_len, d}, InitKind::Normal);
    for (int l = 0; l < cfg_.n_layers; ++l) add_block(seed, "h" + std::to_string(l) + ".");
    add_param(seed, "lnf.g", {d}, InitKind::One);
    add_param(seed, "lnf.b", {d}, InitKind::Zero);
    if (!cfg_.tie_unembedding) add_param(seed, "unembed", {v, d}, InitKind::Normal);
    for (int i = 0; i < cfg_.n_aux_heads; ++i) {
      const std::string pre = "aux" + std::to_string(i) + ".";
      if (cfg_.aux_inject_tokens) {
        add_param(seed, pre + "merge.w", {(static_cast<int64_t>(i) + 2) * d, d},
                  InitKind::Normal);
        add_param(seed, pre + "merge.b", {d}, InitKind::Zero);
      }
      add_block(seed, pre + "h.");
      add_param(seed, pre + "lnf.g", {d}, InitKind::One);
      add_param(seed, pre + "lnf.b", {d}, InitKind::Zero);
      if (cfg_.aux_head_kind == AuxHeadKind::SummaryLogits) {
        add_param(seed, pre + "proj.w", {d, v}, InitKind::Normal);
        add_param(seed, pre + "proj.b", {v}, InitKind::Zero);
      } else if (cfg_.aux_head_kind == AuxHeadKind::SummaryVector) {
        add_param(seed, pre + "proj.w", {d, cfg_.summary_width()}, InitKind::Normal);
        add_param(seed, pre + "proj.b", {cfg_.summary_width()}, InitKind::Zero);
      }
    }
    index_.clear();
    for (size_t i = 0; i < params_.size(); ++i) index_[params_[i].name] = i;
  }

  void add_block(uint64_t seed, const std::string& pre) {
    const int64_t d = cfg_.d_model;
    const int64_t f = cfg_.mlp_factor;
    add_param(seed, pre + "ln1.g", {d}, InitKind::One);
    add_param(seed, pre + "ln1.b", {d}, InitKind::Zero);
    add_param(seed, pre + "attn.wqkv", {d, 3 * d}, InitKind::Normal);
    add_param(seed, pre + "attn.bqkv", {3 * d}, InitKind::Zero);
    add_param(seed, pre + "attn.wo", {d, d}, InitKind::Residual);
    add_param(seed, pre + "attn.bo", {d}, InitKind::Zero);
    add_param(seed, pre + "ln2.g", {d}, InitKind::One);
    add_param(seed, pre + "ln2.b", {d}, InitKind::Zero);
    add_param(seed, pre + "mlp.wfc", {d, f * d}, InitKind::Normal);
    add_param(seed, pre + "mlp.bfc", {f * d}, InitKind::Zero);
    add_param(seed, pre + "mlp.wproj", {f * d, d}, InitKind::Residual);
    add_param(seed, pre + "mlp.bproj", {d}, InitKind::Zero);
  }

  enum class InitKind { Zero, One, Normal, Residual };

  void add_param(uint64_t seed, const std::string& name, Shape shape, InitKind kind) {
    // Per-tensor derived stream: init draws for one tensor never depend on
    // which other tensors exist (aux heads must not shift backbone init).
    Rng rng = Rng(seed).fork(name);
    Tensor<Real> t;
    switch (kind) {
      case InitKind::Zero:
        t = Tensor<Real>::zeros(shape);
        break;
      case InitKind::One:
        t = Tensor<Real>::full(shape, Real(1));
        break;
      case InitKind::Normal:
        t = Tensor<Real>::randn(shape, rng, Real(0.02));
        break;
      case InitKind::Residual:
        t = Tensor<Real>::randn(
            shape, rng,
            Real(0.02) / std::sqrt(Real(2) * static_cast<Real>(cfg_.n_layers)));
        break;
    }
    const bool decay = t.rank() >= 2;
    params_.emplace_back(name, std::move(t), decay);
  }

  ModelConfig cfg_;
  std::vector<Param<Real>> params_;
  std::unordered_map<std::string, size_t> index_;
};

}  // namespace fsp
