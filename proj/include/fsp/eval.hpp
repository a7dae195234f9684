#pragma once

// Greedy decoding and task metrics. Evaluation always goes through the
// next-token head; auxiliary heads are training-only and are ignored here.

#include <cmath>
#include <optional>
#include <vector>

#include "fsp/dataset.hpp"
#include "fsp/metrics.hpp"
#include "fsp/model.hpp"

namespace fsp {

// Argmax continuation of one prefix until `stop` or `max_new` tokens.
template <class Real>
std::vector<TokenId> greedy_decode(const Gpt<Real>& model, std::vector<TokenId> prefix,
                                   int max_new, TokenId stop) {
  FSP_CHECK_ARG(static_cast<int>(prefix.size()) + max_new <= model.config().max_seq_len,
                "greedy_decode: prefix + max_new exceeds max_seq_len");
  std::vector<TokenId> out;
  for (int k = 0; k < max_new; ++k) {
    Tape<Real> tape(false);
    const int64_t t = static_cast<int64_t>(prefix.size());
    auto fwd = model.forward_hidden(tape, prefix, 1, t);
    auto logits = model.ntp_logits(tape, fwd.hidden);
    const Real* row = logits.value().data() + (t - 1) * model.config().vocab_size;
    TokenId best = 0;
    for (int v = 1; v < model.config().vocab_size; ++v)
      if (row[v] > row[best]) best = static_cast<TokenId>(v);
    out.push_back(best);
    if (best == stop) break;
    prefix.push_back(best);
  }
  return out;
}

// Batched greedy decode for same-length prefixes. Emits exactly `max_new`
// tokens per row (rows keep decoding past an early stop token; callers
// compare against the full expected continuation).
template <class Real>
std::vector<std::vector<TokenId>> greedy_decode_batch(const Gpt<Real>& model,
                                                      const std::vector<std::vector<TokenId>>& prefixes,
                                                      int max_new) {
  if (prefixes.empty()) return {};
  const int64_t B = static_cast<int64_t>(prefixes.size());
  const int64_t P = static_cast<int64_t>(prefixes[0].size());
  for (const auto& p : prefixes)
    FSP_CHECK_ARG(static_cast<int64_t>(p.size()) == P, "decode batch: ragged prefixes");
  FSP_CHECK_ARG(P + max_new <= model.config().max_seq_len,
                "decode batch: prefix + max_new exceeds max_seq_len");

  std::vector<TokenId> buf(static_cast<size_t>(B * (P + max_new)));
  const int64_t stride = P + max_new;
  for (int64_t b = 0; b < B; ++b)
    std::copy(prefixes[static_cast<size_t>(b)].begin(), prefixes[static_cast<size_t>(b)].end(),
              buf.begin() + b * stride);

  std::vector<std::vector<TokenId>> out(static_cast<size_t>(B));
  for (int k = 0; k < max_new; ++k) {
    const int64_t t = P + k;
    std::vector<TokenId> window(static_cast<size_t>(B * t));
    for (int64_t b = 0; b < B; ++b)
      std::copy(buf.begin() + b * stride, buf.begin() + b * stride + t,
                window.begin() + b * t);
    Tape<Real> tape(false);
    auto fwd = model.forward_hidden(tape, window, B, t);
    auto logits = model.ntp_logits(tape, fwd.hidden);
    const int v = model.config().vocab_size;
    for (int64_t b = 0; b < B; ++b) {
      const Real* row = logits.value().data() + (b * t + (t - 1)) * v;
      TokenId best = 0;
      for (int j = 1; j < v; ++j)
        if (row[j] > row[best]) best = static_cast<TokenId>(j);
      buf[static_cast<size_t>(b * stride + t)] = best;
      out[static_cast<size_t>(b)].push_back(best);
    }
  }
  return out;
}

// Temperature sampling from BOS for `n_samples` sequences of fixed length.
// Seeded per sample so distinct samples differ but reruns are identical.
template <class Real>
std::vector<std::vector<TokenId>> sample_unconditional(const Gpt<Real>& model, TokenId bos,
                                                       int length, int n_samples,
                                                       double temperature, uint64_t seed) {
  std::vector<std::vector<TokenId>> prefixes(static_cast<size_t>(n_samples),
                                             std::vector<TokenId>{bos});
  std::vector<Rng> rngs;
  rngs.reserve(static_cast<size_t>(n_samples));
  for (int i = 0; i < n_samples; ++i) rngs.push_back(Rng(seed).fork(static_cast<uint64_t>(i)));

  const int v = model.config().vocab_size;
  std::vector<std::vector<TokenId>> out(static_cast<size_t>(n_samples));
  for (int k = 0; k < length; ++k) {
    const int64_t t = 1 + k;
    std::vector<TokenId> window(static_cast<size_t>(n_samples) * static_cast<size_t>(t));
    for (int i = 0; i < n_samples; ++i)
      std::copy(prefixes[static_cast<size_t>(i)].begin(), prefixes[static_cast<size_t>(i)].end(),
                window.begin() + static_cast<int64_t>(i) * t);
    Tape<Real> tape(false);
    auto fwd = model.forward_hidden(tape, window, n_samples, t);
    auto logits = model.ntp_logits(tape, fwd.hidden);
    for (int i = 0; i < n_samples; ++i) {
      const Real* row = logits.value().data() + (static_cast<int64_t>(i) * t + (t - 1)) * v;
      TokenId pick = 0;
      if (temperature <= 0.0) {
        for (int j = 1; j < v; ++j)
          if (row[j] > row[pick]) pick = static_cast<TokenId>(j);
      } else {
        // softmax at temperature, inverse-CDF draw
        double mx = row[0];
        for (int j = 1; j < v; ++j) mx = std::max(mx, static_cast<double>(row[j]));
        std::vector<double> p(static_cast<size_t>(v));
        double denom = 0;
        for (int j = 0; j < v; ++j) {
          p[static_cast<size_t>(j)] = std::exp((static_cast<double>(row[j]) - mx) / temperature);
          denom += p[static_cast<size_t>(j)];
        }
        double u = rngs[static_cast<size_t>(i)].uniform() * denom;
        double acc = 0;
        pick = static_cast<TokenId>(v - 1);
        for (int j = 0; j < v; ++j) {
          acc += p[static_cast<size_t>(j)];
          if (u < acc) {
            pick = static_cast<TokenId>(j);
            break;
          }
        }
      }
      prefixes[static_cast<size_t>(i)].push_back(pick);
      out[static_cast<size_t>(i)].push_back(pick);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Task metrics
// ---------------------------------------------------------------------------

// Fraction of instances whose decoded answer region matches the target path
// (and terminating EOS) token-for-token. Prefix tokens never count.
template <class Real>
double path_exact_match(const Gpt<Real>& model, const Dataset& test, const TaskMeta& meta,
                        int subset = 0, int decode_chunk = 512) {
  FSP_CHECK_ARG(meta.kind == TaskKind::PathStar, "path_exact_match: not a path-star dataset");
  const int64_t n = subset > 0
                        ? std::min<int64_t>(subset, static_cast<int64_t>(test.instances.size()))
                        : static_cast<int64_t>(test.instances.size());
  if (n == 0) return 0.0;
  int64_t hits = 0;
  for (int64_t begin = 0; begin < n; begin += decode_chunk) {
    const int64_t end = std::min(n, begin + decode_chunk);
    std::vector<std::vector<TokenId>> prefixes;
    std::vector<std::vector<TokenId>> expected;
    for (int64_t i = begin; i < end; ++i) {
      const TaskInstance& t = test.instances[static_cast<size_t>(i)];
      prefixes.emplace_back(t.tokens.begin(), t.tokens.begin() + t.answer_start + 1);
      expected.emplace_back(t.tokens.begin() + t.answer_start + 1, t.tokens.end());
    }
    const int max_new = static_cast<int>(expected[0].size());
    auto decoded = greedy_decode_batch(model, prefixes, max_new);
    for (size_t i = 0; i < decoded.size(); ++i)
      hits += decoded[i] == expected[i] ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

// Fraction of sampled generations that form a coherent sibling sequence.
template <class Real>
double sibling_coherence(const Gpt<Real>& model, const TaskMeta& meta, int n_samples,
                         double temperature, uint64_t seed) {
  FSP_CHECK_ARG(meta.kind == TaskKind::Sibling, "sibling_coherence: not a sibling dataset");
  const SiblingParams& p = meta.sibling;
  auto samples = sample_unconditional(model, p.specials().bos, p.k * p.block_width(),
                                      n_samples, temperature, seed);
  int64_t coherent = 0;
  for (const auto& s : samples)
    coherent += validate_sibling_sequence(s, p).coherent() ? 1 : 0;
  return static_cast<double>(coherent) / static_cast<double>(n_samples);
}

// Mean answer-region cross entropy on a dataset (forward only).
template <class Real>
double dataset_ntp_loss(const Gpt<Real>& model, const Dataset& ds, TokenId pad,
                        int chunk = 256) {
  double total = 0;
  int64_t total_rows = 0;
  const int64_t n = static_cast<int64_t>(ds.instances.size());
  for (int64_t begin = 0; begin < n; begin += chunk) {
    const int64_t end = std::min(n, begin + chunk);
    std::vector<int32_t> idxs;
    for (int64_t i = begin; i < end; ++i) idxs.push_back(static_cast<int32_t>(i));
    Batch b = make_batch(ds, idxs, pad);
    Tape<Real> tape(false);
    auto fwd = model.forward_hidden(tape, b.tokens, b.batch, b.seq);
    auto logits = model.ntp_logits(tape, fwd.hidden);
    std::vector<TokenId> targets(static_cast<size_t>(b.rows()), 0);
    std::vector<uint8_t> mask(static_cast<size_t>(b.rows()), 0);
    int64_t kept = 0;
    for (int64_t r = 0; r < b.batch; ++r)
      for (int64_t p = 0; p + 1 < b.seq_len[static_cast<size_t>(r)]; ++p) {
        const size_t at = static_cast<size_t>(r * b.seq + p);
        if (!b.loss_mask[at]) continue;
        targets[at] = b.at(r, p + 1);
        mask[at] = 1;
        ++kept;
      }
    auto loss = softmax_cross_entropy(logits, targets, mask);
    total += static_cast<double>(loss.value()[0]) * static_cast<double>(kept);
    total_rows += kept;
  }
  return total_rows ? total / static_cast<double>(total_rows) : 0.0;
}

// Steps-to-convergence of a method relative to the matched NTP run. nullopt
// in either slot means "did not converge" and propagates.
inline std::optional<double> convergence_ratio(std::optional<int64_t> method_step,
                                               std::optional<int64_t> ntp_step) {
  if (!method_step.has_value() || !ntp_step.has_value() || *ntp_step <= 0)
    return std::nullopt;
  return static_cast<double>(*method_step) / static_cast<double>(*ntp_step);
}

}  // namespace fsp
