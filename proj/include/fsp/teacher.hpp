#pragma once

// Reverse language model support: sequence reversal, frozen-teacher summary
// extraction aligned to forward positions, and the on-disk summary cache.
//
// Alignment: the teacher consumes the reversed sequence, so its hidden state
// at reversed index j = T-3-t (0-based) has seen exactly the forward tokens
// x_{>= t+2}. That state is the future summary supervising forward position t.

#include <cstring>
#include <fstream>
#include <unordered_map>
#include <vector>

#include "fsp/dataset.hpp"
#include "fsp/model.hpp"

namespace fsp {

inline std::vector<TokenId> reverse_sequence(const std::vector<TokenId>& tokens) {
  return std::vector<TokenId>(tokens.rbegin(), tokens.rend());
}

// Reverses every instance; the whole reversed sequence (minus the final
// position) is supervised — the teacher is a plain next-token model on
// right-to-left text. Special tokens are reversed along with content.
inline Dataset reverse_dataset(const Dataset& ds) {
  Dataset out;
  out.vocab_size = ds.vocab_size;
  out.instances.reserve(ds.instances.size());
  for (const auto& t : ds.instances) {
    TaskInstance r;
    r.tokens = reverse_sequence(t.tokens);
    r.answer_start = 0;
    r.answer_end = t.length() - 1;
    out.instances.push_back(std::move(r));
  }
  return out;
}

// Extraction layer selector: 0 = post-final-norm output (the default), k >= 1
// = raw output of backbone block k.
struct SummaryLayer {
  int depth = 0;
  bool is_last() const { return depth == 0; }
};

template <class Real>
struct ExtractedSummaries {
  Tensor<Real> vectors;            // [B*T, width]; masked rows are zero
  std::vector<uint8_t> valid;      // [B*T]; 1 where t+2 <= true length
};

// Runs the frozen teacher on the reversed batch and gathers the aligned
// summary rows. Gradient-free by construction (no-grad tape).
template <class Real>
ExtractedSummaries<Real> extract_summaries(const Gpt<Real>& teacher, const Batch& batch,
                                           SummaryLayer layer = {}) {
  const ModelConfig& cfg = teacher.config();
  FSP_CHECK_CFG(layer.depth >= 0 && layer.depth <= cfg.n_layers,
                "extract_summaries: layer ", layer.depth, " out of range (model has ",
                cfg.n_layers, " blocks)");
  const int64_t B = batch.batch, T = batch.seq;
  const int64_t width = cfg.d_model;

  // reversed token block (per-row true length; padding stays at the tail)
  std::vector<TokenId> rev(batch.tokens.size());
  for (int64_t b = 0; b < B; ++b) {
    const int64_t len = batch.seq_len[static_cast<size_t>(b)];
    const TokenId* src = batch.tokens.data() + b * T;
    TokenId* dst = rev.data() + b * T;
    for (int64_t j = 0; j < len; ++j) dst[j] = src[len - 1 - j];
    for (int64_t j = len; j < T; ++j) dst[j] = src[j];
  }

  Tape<Real> tape(/*grad_enabled=*/false);
  auto fwd = teacher.forward_hidden(tape, rev, B, T, /*record_blocks=*/!layer.is_last());
  const Tensor<Real>& states =
      layer.is_last() ? fwd.hidden.value()
                      : fwd.block_outputs[static_cast<size_t>(layer.depth - 1)].value();

  ExtractedSummaries<Real> out;
  out.vectors = Tensor<Real>::zeros({B * T, width});
  out.valid.assign(static_cast<size_t>(B * T), 0);
  const Real* src = states.data();
  Real* dst = out.vectors.data();
  for (int64_t b = 0; b < B; ++b) {
    const int64_t len = batch.seq_len[static_cast<size_t>(b)];
    for (int64_t t = 0; t + 2 < len; ++t) {
      const int64_t j = len - 3 - t;  // reversed position that consumed x_{>=t+2}
      std::memcpy(dst + (b * T + t) * width, src + (b * T + j) * width,
                  sizeof(Real) * static_cast<size_t>(width));
      out.valid[static_cast<size_t>(b * T + t)] = 1;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Summary cache: avoids re-running teacher inference across epochs/reruns.
// File format (little-endian): magic "FSPSUMC1", u64 teacher checkpoint hash,
// u32 width, u32 sequence count; per sequence: u64 token hash, u32 T,
// u32 row count, then rows (t = 0 .. rows-1) of 32-bit floats.
// ---------------------------------------------------------------------------

inline constexpr char kSummaryCacheMagic[8] = {'F', 'S', 'P', 'S', 'U', 'M', 'C', '1'};

class SummaryCache {
 public:
  SummaryCache() = default;
  SummaryCache(uint64_t teacher_hash, int width) : teacher_hash_(teacher_hash), width_(width) {}

  uint64_t teacher_hash() const { return teacher_hash_; }
  int width() const { return width_; }
  size_t size() const { return rows_.size(); }

  void put(uint64_t seq_hash, int32_t seq_len, std::vector<float> rows) {
    rows_[seq_hash] = Entry{seq_len, std::move(rows)};
  }
  const std::vector<float>* find(uint64_t seq_hash) const {
    auto it = rows_.find(seq_hash);
    return it == rows_.end() ? nullptr : &it->second.data;
  }

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    FSP_CHECK(os.good(), IoError, "cannot open '", path, "' for writing");
    os.write(kSummaryCacheMagic, 8);
    detail::write_pod<uint64_t>(os, teacher_hash_);
    detail::write_pod<uint32_t>(os, static_cast<uint32_t>(width_));
    detail::write_pod<uint32_t>(os, static_cast<uint32_t>(rows_.size()));
    for (const auto& [h, e] : rows_) {
      detail::write_pod<uint64_t>(os, h);
      detail::write_pod<uint32_t>(os, static_cast<uint32_t>(e.seq_len));
      detail::write_pod<uint32_t>(os, static_cast<uint32_t>(e.data.size() / width_));
      os.write(reinterpret_cast<const char*>(e.data.data()),
               static_cast<std::streamsize>(e.data.size() * sizeof(float)));
    }
    FSP_CHECK(os.good(), IoError, "write failed for '", path, "'");
  }

  static SummaryCache load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    FSP_CHECK(is.good(), IoError, "cannot open summary cache '", path, "'");
    char magic[8];
    is.read(magic, 8);
    FSP_CHECK(is.good() && std::memcmp(magic, kSummaryCacheMagic, 8) == 0, IoError,
              "'", path, "' is not a summary cache (bad magic)");
    SummaryCache c;
    c.teacher_hash_ = detail::read_pod<uint64_t>(is);
    c.width_ = static_cast<int>(detail::read_pod<uint32_t>(is));
    const uint32_t count = detail::read_pod<uint32_t>(is);
    for (uint32_t i = 0; i < count; ++i) {
      const uint64_t h = detail::read_pod<uint64_t>(is);
      Entry e;
      e.seq_len = static_cast<int32_t>(detail::read_pod<uint32_t>(is));
      const uint32_t rows = detail::read_pod<uint32_t>(is);
      e.data.resize(static_cast<size_t>(rows) * static_cast<size_t>(c.width_));
      is.read(reinterpret_cast<char*>(e.data.data()),
              static_cast<std::streamsize>(e.data.size() * sizeof(float)));
      FSP_CHECK(is.good(), IoError, "summary cache '", path, "': truncated entry");
      c.rows_.emplace(h, std::move(e));
    }
    return c;
  }

 private:
  struct Entry {
    int32_t seq_len = 0;
    std::vector<float> data;  // valid rows t = 0 .. seq_len-3, row-major
  };
  uint64_t teacher_hash_ = 0;
  int width_ = 0;
  std::unordered_map<uint64_t, Entry> rows_;
};

// Builds the cache for a whole dataset with one batched teacher pass per
// chunk. Deterministic function of (teacher weights, dataset).
template <class Real>
SummaryCache precompute_summaries(const Gpt<Real>& teacher, const Dataset& ds,
                                  SummaryLayer layer = {}, int chunk = 256) {
  SummaryCache cache(teacher.weight_hash(), teacher.config().d_model);
  const int64_t n = static_cast<int64_t>(ds.instances.size());
  const TokenId pad = 0;
  for (int64_t begin = 0; begin < n; begin += chunk) {
    const int64_t end = std::min(n, begin + chunk);
    std::vector<int32_t> idxs;
    for (int64_t i = begin; i < end; ++i) idxs.push_back(static_cast<int32_t>(i));
    Batch b = make_batch(ds, idxs, pad);
    auto ex = extract_summaries(teacher, b, layer);
    const int width = teacher.config().d_model;
    for (int64_t r = 0; r < b.batch; ++r) {
      const int32_t len = b.seq_len[static_cast<size_t>(r)];
      const int32_t rows = std::max(0, len - 2);
      std::vector<float> data(static_cast<size_t>(rows) * static_cast<size_t>(width));
      for (int32_t t = 0; t < rows; ++t)
        for (int w = 0; w < width; ++w)
          data[static_cast<size_t>(t) * width + static_cast<size_t>(w)] =
              static_cast<float>(ex.vectors[(r * b.seq + t) * width + w]);
      cache.put(token_hash(ds.instances[static_cast<size_t>(idxs[static_cast<size_t>(r)])].tokens),
                len, std::move(data));
    }
  }
  return cache;
}

}  // namespace fsp
