#pragma once

// Run-artifact helpers shared by the trainer and the CLI: checkpoint config
// sidecars, summary-cache loading, abort dumps.

#include <filesystem>
#include <fstream>
#include <memory>

#include <json.hpp>

#include "fsp/checkpoint.hpp"
#include "fsp/config.hpp"
#include "fsp/teacher.hpp"

namespace fsp {

inline nlohmann::json model_config_json(const ModelConfig& c) {
  nlohmann::json j;
  j["n_layers"] = c.n_layers;
  j["d_model"] = c.d_model;
  j["n_heads"] = c.n_heads;
  j["mlp_factor"] = c.mlp_factor;
  j["vocab_size"] = c.vocab_size;
  j["max_seq_len"] = c.max_seq_len;
  j["n_aux_heads"] = c.n_aux_heads;
  j["aux_head_kind"] = to_string(c.aux_head_kind);
  j["aux_inject_tokens"] = c.aux_inject_tokens;
  j["summary_dim"] = c.summary_dim;
  j["tie_unembedding"] = c.tie_unembedding;
  return j;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.n_layers = j.at("n_layers").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.mlp_factor = j.at("mlp_factor").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.max_seq_len = j.at("max_seq_len").get<int>();
  c.n_aux_heads = j.at("n_aux_heads").get<int>();
  const std::string kind = j.at("aux_head_kind").get<std::string>();
  if (kind == "token-logits") c.aux_head_kind = AuxHeadKind::TokenLogits;
  else if (kind == "summary-logits") c.aux_head_kind = AuxHeadKind::SummaryLogits;
  else if (kind == "summary-vector") c.aux_head_kind = AuxHeadKind::SummaryVector;
  else throw ConfigError("bad aux_head_kind '" + kind + "'");
  c.aux_inject_tokens = j.at("aux_inject_tokens").get<bool>();
  c.summary_dim = j.at("summary_dim").get<int>();
  c.tie_unembedding = j.at("tie_unembedding").get<bool>();
  return c;
}

// Checkpoints carry a .json sidecar describing the architecture so frozen
// teachers can be reloaded from the file pair alone.
template <class Real>
void save_run_checkpoint(const std::string& path, const Gpt<Real>& model) {
  save_checkpoint(path, model);
  nlohmann::json j;
  j["model"] = model_config_json(model.config());
  j["weight_hash"] = hex64(model.weight_hash());
  std::ofstream os(path + ".json");
  os << j.dump(2) << "\n";
  FSP_CHECK(os.good(), IoError, "cannot write checkpoint sidecar for '", path, "'");
}

inline ModelConfig model_config_from_sidecar(const std::string& ckpt_path) {
  const std::string side = ckpt_path + ".json";
  std::ifstream is(side);
  FSP_CHECK(is.good(), IoError, "missing checkpoint sidecar '", side, "'");
  nlohmann::json j;
  is >> j;
  return model_config_from_json(j.at("model"));
}

// Loads the summary cache when it matches the teacher, otherwise (re)builds
// it; persists when a cache path is configured. Returns null when summaries
// should be computed on the fly.
template <class Real>
std::shared_ptr<const SummaryCache> load_or_build_summary_cache(const TrainConfig& cfg,
                                                                const Gpt<Real>& teacher,
                                                                const Dataset& train) {
  namespace fs = std::filesystem;
  if (!cfg.summary_precompute && cfg.summary_cache.empty()) return nullptr;
  if (!cfg.summary_cache.empty() && fs::exists(cfg.summary_cache)) {
    auto cache = std::make_shared<SummaryCache>(SummaryCache::load(cfg.summary_cache));
    if (cache->teacher_hash() == teacher.weight_hash()) return cache;
    // stale cache (different teacher): fall through and rebuild
  }
  auto cache = std::make_shared<SummaryCache>(
      precompute_summaries(teacher, train, SummaryLayer{cfg.objective.teacher_layer}));
  if (!cfg.summary_cache.empty()) cache->save(cfg.summary_cache);
  return cache;
}

inline std::string dump_batch(const std::string& run_dir, int64_t step, const Batch& batch) {
  namespace fs = std::filesystem;
  const std::string path = (fs::path(run_dir) / "abort_batch.json").string();
  nlohmann::json j;
  j["step"] = step;
  j["batch"] = batch.batch;
  j["seq"] = batch.seq;
  j["seq_len"] = batch.seq_len;
  j["tokens"] = batch.tokens;
  std::ofstream os(path);
  os << j.dump() << "\n";
  return path;
}

}  // namespace fsp
