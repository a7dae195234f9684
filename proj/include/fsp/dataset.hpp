#pragma once

// Dataset container and on-disk formats:
//  - binary (<split>.bin): u32 vocab size, u32 count; per instance u32 length,
//    u32 answer-span start, u32 answer-span end, u16 token ids. Little-endian.
//  - JSON-lines (<split>.jsonl): human-readable debug mirror.
//  - manifest.json: task kind, parameter echo, seed, counts, content hashes.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fsp/checkpoint.hpp"  // write_pod/read_pod, file_hash
#include "fsp/tasks.hpp"

namespace fsp {

struct Dataset {
  int32_t vocab_size = 0;
  std::vector<TaskInstance> instances;

  int32_t max_len() const {
    int32_t m = 0;
    for (const auto& t : instances) m = std::max(m, t.length());
    return m;
  }
  bool uniform_length() const {
    for (const auto& t : instances)
      if (t.length() != instances.front().length()) return false;
    return true;
  }
};

inline void save_dataset_bin(const std::string& path, const Dataset& ds) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  FSP_CHECK(os.good(), IoError, "cannot open '", path, "' for writing");
  detail::write_pod<uint32_t>(os, static_cast<uint32_t>(ds.vocab_size));
  detail::write_pod<uint32_t>(os, static_cast<uint32_t>(ds.instances.size()));
  for (const auto& t : ds.instances) {
    FSP_CHECK_ARG(ds.vocab_size <= 65536, "dataset: vocab too large for u16 ids");
    detail::write_pod<uint32_t>(os, static_cast<uint32_t>(t.tokens.size()));
    detail::write_pod<uint32_t>(os, static_cast<uint32_t>(t.answer_start));
    detail::write_pod<uint32_t>(os, static_cast<uint32_t>(t.answer_end));
    for (TokenId id : t.tokens) detail::write_pod<uint16_t>(os, static_cast<uint16_t>(id));
  }
  FSP_CHECK(os.good(), IoError, "write failed for '", path, "'");
}

inline Dataset load_dataset_bin(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  FSP_CHECK(is.good(), IoError, "cannot open dataset '", path, "'");
  Dataset ds;
  ds.vocab_size = static_cast<int32_t>(detail::read_pod<uint32_t>(is));
  const uint32_t count = detail::read_pod<uint32_t>(is);
  ds.instances.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    TaskInstance t;
    const uint32_t len = detail::read_pod<uint32_t>(is);
    t.answer_start = static_cast<int32_t>(detail::read_pod<uint32_t>(is));
    t.answer_end = static_cast<int32_t>(detail::read_pod<uint32_t>(is));
    t.tokens.resize(len);
    for (uint32_t j = 0; j < len; ++j)
      t.tokens[j] = static_cast<TokenId>(detail::read_pod<uint16_t>(is));
    FSP_CHECK_ARG(t.answer_start >= 0 && t.answer_start <= t.answer_end &&
                      t.answer_end < static_cast<int32_t>(len),
                  "dataset '", path, "': bad answer span in instance ", i);
    ds.instances.push_back(std::move(t));
  }
  return ds;
}

inline void save_dataset_jsonl(const std::string& path, const Dataset& ds) {
  std::ofstream os(path, std::ios::trunc);
  FSP_CHECK(os.good(), IoError, "cannot open '", path, "' for writing");
  for (const auto& t : ds.instances) {
    nlohmann::json j;
    j["tokens"] = t.tokens;
    j["answer_start"] = t.answer_start;
    j["answer_end"] = t.answer_end;
    os << j.dump() << "\n";
  }
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

// Row-major [B,T] token block plus per-row true lengths and the NTP loss
// mask (answer-region positions that have a next token). Rows shorter than T
// are padded; padded positions are never supervised.
struct Batch {
  std::vector<TokenId> tokens;     // [B*T]
  std::vector<int32_t> seq_len;    // [B]
  std::vector<uint8_t> loss_mask;  // [B*T]
  int64_t batch = 0;
  int64_t seq = 0;

  int64_t rows() const { return batch * seq; }
  TokenId at(int64_t b, int64_t t) const { return tokens[static_cast<size_t>(b * seq + t)]; }
};

inline Batch make_batch(const Dataset& ds, const std::vector<int32_t>& idxs, TokenId pad) {
  Batch b;
  b.batch = static_cast<int64_t>(idxs.size());
  int32_t max_len = 0;
  for (int32_t i : idxs) max_len = std::max(max_len, ds.instances[static_cast<size_t>(i)].length());
  b.seq = max_len;
  b.tokens.assign(static_cast<size_t>(b.batch * b.seq), pad);
  b.loss_mask.assign(static_cast<size_t>(b.batch * b.seq), 0);
  b.seq_len.resize(static_cast<size_t>(b.batch));
  for (int64_t r = 0; r < b.batch; ++r) {
    const TaskInstance& t = ds.instances[static_cast<size_t>(idxs[static_cast<size_t>(r)])];
    b.seq_len[static_cast<size_t>(r)] = t.length();
    std::copy(t.tokens.begin(), t.tokens.end(), b.tokens.begin() + r * b.seq);
    for (int32_t p = t.answer_start; p < t.answer_end; ++p)
      b.loss_mask[static_cast<size_t>(r * b.seq + p)] = 1;
  }
  return b;
}

// ---------------------------------------------------------------------------
// Task metadata + dataset directory layout
// ---------------------------------------------------------------------------

enum class TaskKind { PathStar, Sibling };

inline const char* to_string(TaskKind k) {
  return k == TaskKind::PathStar ? "path-star" : "sibling";
}

struct TaskMeta {
  TaskKind kind = TaskKind::PathStar;
  PathStarParams path_star;
  SiblingParams sibling;

  int vocab_size() const {
    return kind == TaskKind::PathStar ? path_star.vocab_size() : sibling.vocab_size();
  }
  Specials specials() const {
    return kind == TaskKind::PathStar ? path_star.specials() : sibling.specials();
  }
};

struct DataDir {
  TaskMeta meta;
  uint64_t seed = 0;
  Dataset train;
  Dataset test;
};

inline TaskInstance make_instance(const TaskMeta& meta, Rng& rng) {
  if (meta.kind == TaskKind::PathStar)
    return encode_path_star(gen_path_star_instance(meta.path_star, rng), meta.path_star);
  SiblingParams p = meta.sibling;
  SiblingInstance inst;
  inst.tokens.reserve(static_cast<size_t>(p.k * 4));
  for (int c = 0; c < p.k; ++c) {
    for (int s = 0; s < 3; ++s)
      inst.tokens.push_back(static_cast<TokenId>(
          p.support_begin(c, s) +
          static_cast<TokenId>(rng.uniform_int(static_cast<uint64_t>(p.n_values)))));
    inst.tokens.push_back(p.parent(c));
  }
  return encode_sibling(inst, p);
}

// Generates train/test splits that are disjoint at the instance level.
inline DataDir generate_data(const TaskMeta& meta, int n_train, int n_test, uint64_t seed) {
  if (meta.kind == TaskKind::PathStar) meta.path_star.validate();
  else meta.sibling.validate();
  DataDir d;
  d.meta = meta;
  d.seed = seed;
  d.train.vocab_size = meta.vocab_size();
  d.test.vocab_size = meta.vocab_size();
  std::unordered_set<uint64_t> taken;
  auto make = [&meta](Rng& rng) { return make_instance(meta, rng); };
  d.train.instances = draw_distinct(make, n_train, seed, taken, /*salt=*/0x7261696eull);
  if (n_test > 0)
    d.test.instances = draw_distinct(make, n_test, seed, taken, /*salt=*/0x74657374ull);
  return d;
}

inline nlohmann::json task_meta_json(const TaskMeta& meta) {
  nlohmann::json j;
  j["task"] = to_string(meta.kind);
  if (meta.kind == TaskKind::PathStar) {
    j["params"] = {{"degree", meta.path_star.degree},
                   {"path_len", meta.path_star.path_len},
                   {"n_nodes", meta.path_star.n_nodes}};
  } else {
    j["params"] = {{"k", meta.sibling.k}, {"n_values", meta.sibling.n_values}};
  }
  const Specials sp = meta.specials();
  j["vocab_size"] = meta.vocab_size();
  j["specials"] = {{"bos", sp.bos}, {"sep", sp.sep}, {"eq", sp.eq}, {"eos", sp.eos}};
  return j;
}

inline TaskMeta task_meta_from_json(const nlohmann::json& j) {
  TaskMeta meta;
  const std::string task = j.at("task").get<std::string>();
  if (task == "path-star") {
    meta.kind = TaskKind::PathStar;
    meta.path_star.degree = j.at("params").at("degree").get<int>();
    meta.path_star.path_len = j.at("params").at("path_len").get<int>();
    meta.path_star.n_nodes = j.at("params").at("n_nodes").get<int>();
  } else if (task == "sibling") {
    meta.kind = TaskKind::Sibling;
    meta.sibling.k = j.at("params").at("k").get<int>();
    meta.sibling.n_values = j.at("params").at("n_values").get<int>();
  } else {
    throw ConfigError("unknown task kind '" + task + "'");
  }
  return meta;
}

// Writes <dir>/{train.bin,test.bin,train.jsonl,test.jsonl,manifest.json}.
inline void write_data_dir(const std::string& dir, const DataDir& d) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const std::string train_bin = (fs::path(dir) / "train.bin").string();
  const std::string test_bin = (fs::path(dir) / "test.bin").string();
  save_dataset_bin(train_bin, d.train);
  save_dataset_jsonl((fs::path(dir) / "train.jsonl").string(), d.train);
  if (!d.test.instances.empty()) {
    save_dataset_bin(test_bin, d.test);
    save_dataset_jsonl((fs::path(dir) / "test.jsonl").string(), d.test);
  }

  nlohmann::json j = task_meta_json(d.meta);
  j["seed"] = d.seed;
  j["n_train"] = d.train.instances.size();
  j["n_test"] = d.test.instances.size();
  j["hashes"]["train"] = hex64(file_hash(train_bin));
  if (!d.test.instances.empty()) j["hashes"]["test"] = hex64(file_hash(test_bin));
  std::ofstream os(fs::path(dir) / "manifest.json");
  os << j.dump(2) << "\n";
  FSP_CHECK(os.good(), IoError, "cannot write manifest in '", dir, "'");
}

struct LoadedData {
  TaskMeta meta;
  Dataset train;
  Dataset test;  // may be empty
};

inline LoadedData load_data_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path mpath = fs::path(dir) / "manifest.json";
  FSP_CHECK(fs::exists(mpath), IoError, "no manifest.json under '", dir, "'");
  std::ifstream is(mpath);
  nlohmann::json j;
  is >> j;
  LoadedData out;
  out.meta = task_meta_from_json(j);
  out.train = load_dataset_bin((fs::path(dir) / "train.bin").string());
  if (fs::exists(fs::path(dir) / "test.bin"))
    out.test = load_dataset_bin((fs::path(dir) / "test.bin").string());
  FSP_CHECK_CFG(out.train.vocab_size == out.meta.vocab_size(),
                "dataset '", dir, "': vocab mismatch between manifest and train.bin");
  return out;
}

}  // namespace fsp
