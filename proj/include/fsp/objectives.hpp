#pragma once

// The six training objectives. Every objective shares the same next-token
// term; they differ only in what the auxiliary head(s) predict about the
// future. This is the only module that knows what "future" means:
//
//   ntp       no auxiliary signal
//   mtp       head i predicts the token at offset t+2+i
//   ds-mtp    like mtp, but head i also consumes embeddings of the
//             intermediate tokens x_{t+1..t+1+i}, bypassing the backbone
//   mtp-skip  one head predicts x_{t+delta}, delta ~ U{2..min(tau, future)},
//             resampled every batch
//   fsp-bce   one head predicts the multi-hot set of tokens in the window
//             {x_{t+2}..x_{t+tau}} under (tf-idf) reweighted BCE
//   fsp-revlm one head regresses the frozen reverse-LM summary of x_{>=t+2}

#include <memory>
#include <string>
#include <vector>

#include "fsp/model.hpp"
#include "fsp/teacher.hpp"
#include "fsp/tfidf.hpp"

namespace fsp {

enum class ObjectiveKind { Ntp, Mtp, DsMtp, MtpSkip, FspBce, FspRevLm };

inline const char* to_string(ObjectiveKind k) {
  switch (k) {
    case ObjectiveKind::Ntp: return "ntp";
    case ObjectiveKind::Mtp: return "mtp";
    case ObjectiveKind::DsMtp: return "ds-mtp";
    case ObjectiveKind::MtpSkip: return "mtp-skip";
    case ObjectiveKind::FspBce: return "fsp-bce";
    case ObjectiveKind::FspRevLm: return "fsp-revlm";
  }
  return "?";
}

inline ObjectiveKind objective_kind_from(const std::string& s) {
  if (s == "ntp") return ObjectiveKind::Ntp;
  if (s == "mtp") return ObjectiveKind::Mtp;
  if (s == "ds-mtp") return ObjectiveKind::DsMtp;
  if (s == "mtp-skip") return ObjectiveKind::MtpSkip;
  if (s == "fsp-bce") return ObjectiveKind::FspBce;
  if (s == "fsp-revlm") return ObjectiveKind::FspRevLm;
  throw ConfigError("unknown objective '" + s + "'");
}

enum class BceWeighting { Uniform, TfIdf };

struct ObjectiveSpec {
  ObjectiveKind kind = ObjectiveKind::Ntp;
  int n_aux = 1;   // mtp / ds-mtp auxiliary head count
  int tau = 2;     // mtp-skip / fsp-bce future window
  BceWeighting weighting = BceWeighting::TfIdf;
  std::string teacher_checkpoint;           // fsp-revlm
  int teacher_layer = 0;                    // 0 = last, k >= 1 = block k
  double lambda_aux = 1.0;

  void validate() const {
    FSP_CHECK_CFG(std::isfinite(lambda_aux) && lambda_aux >= 0.0,
                  "objective: lambda_aux must be finite and >= 0");
    if (kind == ObjectiveKind::Mtp || kind == ObjectiveKind::DsMtp)
      FSP_CHECK_CFG(n_aux >= 1, "objective: n_aux must be >= 1");
    if (kind == ObjectiveKind::MtpSkip || kind == ObjectiveKind::FspBce)
      FSP_CHECK_CFG(tau >= 2, "objective: tau must be >= 2 (window {t+2..t+tau})");
    if (kind == ObjectiveKind::FspRevLm)
      FSP_CHECK_CFG(!teacher_checkpoint.empty(),
                    "objective: fsp-revlm requires a teacher checkpoint");
  }

  int model_aux_heads() const {
    switch (kind) {
      case ObjectiveKind::Ntp: return 0;
      case ObjectiveKind::Mtp:
      case ObjectiveKind::DsMtp: return n_aux;
      default: return 1;
    }
  }
  AuxHeadKind aux_head_kind() const {
    switch (kind) {
      case ObjectiveKind::FspBce: return AuxHeadKind::SummaryLogits;
      case ObjectiveKind::FspRevLm: return AuxHeadKind::SummaryVector;
      default: return AuxHeadKind::TokenLogits;
    }
  }
  bool inject_tokens() const { return kind == ObjectiveKind::DsMtp; }

  // Applies the objective's head requirements onto a model config.
  void configure_model(ModelConfig& cfg, int teacher_width = 0) const {
    cfg.n_aux_heads = model_aux_heads();
    cfg.aux_head_kind = aux_head_kind();
    cfg.aux_inject_tokens = inject_tokens();
    if (kind == ObjectiveKind::FspRevLm && teacher_width > 0) cfg.summary_dim = teacher_width;
  }
};

// ---------------------------------------------------------------------------
// Target builders (pure, independently testable)
// ---------------------------------------------------------------------------

struct ShiftTargets {
  std::vector<TokenId> targets;  // [B*T]
  std::vector<uint8_t> valid;    // [B*T], 1 where the target exists in-sequence
};

// Next token: position p predicts tokens[p+1].
inline ShiftTargets ntp_targets(const Batch& b) {
  ShiftTargets out;
  out.targets.assign(static_cast<size_t>(b.rows()), 0);
  out.valid.assign(static_cast<size_t>(b.rows()), 0);
  for (int64_t r = 0; r < b.batch; ++r) {
    const int64_t len = b.seq_len[static_cast<size_t>(r)];
    for (int64_t p = 0; p + 1 < len; ++p) {
      out.targets[static_cast<size_t>(r * b.seq + p)] = b.at(r, p + 1);
      out.valid[static_cast<size_t>(r * b.seq + p)] = 1;
    }
  }
  return out;
}

// Multi-token head `head_index` (0-based): position p predicts
// tokens[p + 2 + head_index]; positions whose target falls beyond the
// sequence are masked (never read out of bounds).
inline ShiftTargets mtp_targets(const Batch& b, int head_index) {
  FSP_CHECK_ARG(head_index >= 0, "mtp_targets: bad head index");
  const int64_t off = 2 + head_index;
  ShiftTargets out;
  out.targets.assign(static_cast<size_t>(b.rows()), 0);
  out.valid.assign(static_cast<size_t>(b.rows()), 0);
  for (int64_t r = 0; r < b.batch; ++r) {
    const int64_t len = b.seq_len[static_cast<size_t>(r)];
    for (int64_t p = 0; p + off < len; ++p) {
      out.targets[static_cast<size_t>(r * b.seq + p)] = b.at(r, p + off);
      out.valid[static_cast<size_t>(r * b.seq + p)] = 1;
    }
  }
  return out;
}

// Random-offset future token: position p predicts tokens[p + delta] with
// delta uniform on {2 .. min(tau, len-1-p)}; resampled per call (per batch).
inline ShiftTargets mtp_skip_targets(const Batch& b, int tau, Rng& rng) {
  FSP_CHECK_ARG(tau >= 2, "mtp_skip_targets: tau must be >= 2");
  ShiftTargets out;
  out.targets.assign(static_cast<size_t>(b.rows()), 0);
  out.valid.assign(static_cast<size_t>(b.rows()), 0);
  for (int64_t r = 0; r < b.batch; ++r) {
    const int64_t len = b.seq_len[static_cast<size_t>(r)];
    for (int64_t p = 0; p < len; ++p) {
      const int64_t max_delta = std::min<int64_t>(tau, len - 1 - p);
      if (max_delta < 2) continue;  // empty future window
      const int64_t delta = 2 + static_cast<int64_t>(rng.uniform_int(
                                    static_cast<uint64_t>(max_delta - 1)));
      out.targets[static_cast<size_t>(r * b.seq + p)] = b.at(r, p + delta);
      out.valid[static_cast<size_t>(r * b.seq + p)] = 1;
    }
  }
  return out;
}

// Multi-hot future summary a(t, tau): bit i set iff token i occurs in
// {tokens[p+2] .. tokens[min(p+tau, len-1)]}. Window clipped at the sequence
// end; empty windows are masked rows.
template <class Real>
Tensor<Real> fsp_bce_target(const Batch& b, int tau, int vocab,
                            std::vector<uint8_t>* valid_out) {
  FSP_CHECK_ARG(tau >= 2, "fsp_bce_target: tau must be >= 2");
  Tensor<Real> multihot = Tensor<Real>::zeros({b.rows(), vocab});
  std::vector<uint8_t> valid(static_cast<size_t>(b.rows()), 0);
  Real* m = multihot.data();
  for (int64_t r = 0; r < b.batch; ++r) {
    const int64_t len = b.seq_len[static_cast<size_t>(r)];
    for (int64_t p = 0; p < len; ++p) {
      const int64_t lo = p + 2;
      const int64_t hi = std::min<int64_t>(p + tau, len - 1);
      if (lo > hi) continue;
      Real* row = m + (r * b.seq + p) * vocab;
      for (int64_t j = lo; j <= hi; ++j) row[b.at(r, j)] = Real(1);
      valid[static_cast<size_t>(r * b.seq + p)] = 1;
    }
  }
  if (valid_out) *valid_out = std::move(valid);
  return multihot;
}

// Injected token streams for a reduced-teacher-forcing head: stream m carries
// tokens[p + 1 + m] (m = 0..head_index). Out-of-range slots hold the pad id;
// every position with a padded slot is masked by the head's target validity.
inline std::vector<std::vector<TokenId>> ds_injection_streams(const Batch& b, int head_index,
                                                              TokenId pad = 0) {
  std::vector<std::vector<TokenId>> streams;
  streams.reserve(static_cast<size_t>(head_index + 1));
  for (int m = 0; m <= head_index; ++m) {
    std::vector<TokenId> s(static_cast<size_t>(b.rows()), pad);
    for (int64_t r = 0; r < b.batch; ++r) {
      const int64_t len = b.seq_len[static_cast<size_t>(r)];
      for (int64_t p = 0; p + 1 + m < len; ++p)
        s[static_cast<size_t>(r * b.seq + p)] = b.at(r, p + 1 + m);
    }
    streams.push_back(std::move(s));
  }
  return streams;
}

inline std::vector<uint8_t> and_masks(const std::vector<uint8_t>& a,
                                      const std::vector<uint8_t>& b) {
  FSP_CHECK_ARG(a.size() == b.size(), "mask size mismatch");
  std::vector<uint8_t> out(a.size());
  for (size_t i = 0; i < a.size(); ++i) out[i] = a[i] && b[i];
  return out;
}

// ---------------------------------------------------------------------------
// Loss assembly
// ---------------------------------------------------------------------------

// Per-run immutable state an objective needs beyond the model: BCE weights,
// the frozen teacher and its precomputed summary cache.
template <class Real>
struct ObjectiveContext {
  ObjectiveSpec spec;
  Tensor<Real> bce_weights;                   // undefined => uniform
  std::shared_ptr<const Gpt<Real>> teacher;   // fsp-revlm only
  SummaryLayer teacher_layer;
  std::shared_ptr<const SummaryCache> summary_cache;  // optional
};

template <class Real>
struct LossParts {
  Var<Real> total;
  double ntp = 0.0;
  double aux = 0.0;
};

namespace detail {

// Gathers teacher summaries for a batch, preferring the cache.
template <class Real>
ExtractedSummaries<Real> batch_summaries(const ObjectiveContext<Real>& ctx, const Batch& b) {
  const int width = ctx.teacher->config().d_model;
  if (ctx.summary_cache) {
    ExtractedSummaries<Real> out;
    out.vectors = Tensor<Real>::zeros({b.rows(), width});
    out.valid.assign(static_cast<size_t>(b.rows()), 0);
    bool complete = true;
    for (int64_t r = 0; r < b.batch && complete; ++r) {
      const int64_t len = b.seq_len[static_cast<size_t>(r)];
      std::vector<TokenId> seq(b.tokens.begin() + r * b.seq,
                               b.tokens.begin() + r * b.seq + len);
      const std::vector<float>* rows = ctx.summary_cache->find(token_hash(seq));
      if (!rows) {
        complete = false;
        break;
      }
      const int64_t n_rows = static_cast<int64_t>(rows->size()) / width;
      for (int64_t t = 0; t < n_rows; ++t) {
        Real* dst = out.vectors.data() + (r * b.seq + t) * width;
        for (int w = 0; w < width; ++w)
          dst[w] = static_cast<Real>((*rows)[static_cast<size_t>(t * width + w)]);
        out.valid[static_cast<size_t>(r * b.seq + t)] = 1;
      }
    }
    if (complete) return out;
  }
  return extract_summaries(*ctx.teacher, b, ctx.teacher_layer);
}

}  // namespace detail

// Total loss for one batch under the configured objective. With
// lambda_aux == 0 the auxiliary path is skipped entirely, so the computation
// (and therefore the whole training trajectory) is bit-identical to ntp.
template <class Real>
LossParts<Real> objective_loss(Tape<Real>& tape, const Gpt<Real>& model,
                               const ObjectiveContext<Real>& ctx, const Batch& batch,
                               Rng& objective_rng) {
  const ObjectiveSpec& spec = ctx.spec;
  auto fwd = model.forward_hidden(tape, batch.tokens, batch.batch, batch.seq);
  Var<Real> logits = model.ntp_logits(tape, fwd.hidden);
  ShiftTargets ntp_t = ntp_targets(batch);
  Var<Real> ntp = softmax_cross_entropy(logits, ntp_t.targets,
                                        and_masks(batch.loss_mask, ntp_t.valid));

  LossParts<Real> out;
  out.ntp = static_cast<double>(ntp.value()[0]);
  const Real lambda = static_cast<Real>(spec.lambda_aux);
  if (spec.kind == ObjectiveKind::Ntp || spec.lambda_aux == 0.0) {
    out.total = ntp;
    return out;
  }

  Var<Real> aux_sum;
  auto accumulate = [&](Var<Real> term) {
    out.aux += static_cast<double>(term.value()[0]);
    aux_sum = aux_sum.defined() ? add(aux_sum, term) : term;
  };

  switch (spec.kind) {
    case ObjectiveKind::Mtp: {
      for (int i = 0; i < spec.n_aux; ++i) {
        Var<Real> head = model.aux_forward(tape, fwd.backbone, i, {}, batch.batch, batch.seq);
        ShiftTargets t = mtp_targets(batch, i);
        accumulate(softmax_cross_entropy(head, t.targets,
                                         and_masks(batch.loss_mask, t.valid)));
      }
      break;
    }
    case ObjectiveKind::DsMtp: {
      for (int i = 0; i < spec.n_aux; ++i) {
        Var<Real> head = model.aux_forward(tape, fwd.backbone, i,
                                           ds_injection_streams(batch, i), batch.batch,
                                           batch.seq);
        ShiftTargets t = mtp_targets(batch, i);
        accumulate(softmax_cross_entropy(head, t.targets,
                                         and_masks(batch.loss_mask, t.valid)));
      }
      break;
    }
    case ObjectiveKind::MtpSkip: {
      Var<Real> head = model.aux_forward(tape, fwd.backbone, 0, {}, batch.batch, batch.seq);
      ShiftTargets t = mtp_skip_targets(batch, spec.tau, objective_rng);
      accumulate(softmax_cross_entropy(head, t.targets,
                                       and_masks(batch.loss_mask, t.valid)));
      break;
    }
    case ObjectiveKind::FspBce: {
      Var<Real> head = model.aux_forward(tape, fwd.backbone, 0, {}, batch.batch, batch.seq);
      std::vector<uint8_t> valid;
      Tensor<Real> target =
          fsp_bce_target<Real>(batch, spec.tau, model.config().vocab_size, &valid);
      accumulate(weighted_sigmoid_bce(head, target, ctx.bce_weights,
                                      and_masks(batch.loss_mask, valid)));
      break;
    }
    case ObjectiveKind::FspRevLm: {
      FSP_CHECK_CFG(ctx.teacher != nullptr, "fsp-revlm: no teacher model loaded");
      FSP_CHECK_CFG(ctx.teacher->config().d_model == model.config().summary_width(),
                    "fsp-revlm: student summary head width ", model.config().summary_width(),
                    " != teacher width ", ctx.teacher->config().d_model);
      Var<Real> head = model.aux_forward(tape, fwd.backbone, 0, {}, batch.batch, batch.seq);
      ExtractedSummaries<Real> s = detail::batch_summaries(ctx, batch);
      accumulate(l2_match(head, s.vectors, and_masks(batch.loss_mask, s.valid)));
      break;
    }
    case ObjectiveKind::Ntp:
      break;  // unreachable
  }

  out.total = aux_sum.defined() ? add(ntp, scale(aux_sum, lambda)) : ntp;
  return out;
}

}  // namespace fsp
