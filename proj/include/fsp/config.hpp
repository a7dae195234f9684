#pragma once

// Flat key=value run configuration. Every field is addressable by key, both
// from config files and from --set overrides; unknown keys are errors. The
// canonical echo (sorted key=value lines) is what gets hashed for
// content-addressed run directories.

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "fsp/objectives.hpp"

namespace fsp {

struct TrainConfig {
  ObjectiveSpec objective;
  ModelConfig model = [] {
    ModelConfig m;
    m.vocab_size = 0;   // 0 = take from dataset
    m.max_seq_len = 0;  // 0 = take from dataset
    return m;
  }();

  double lr = 3e-4;
  double weight_decay = 1e-2;
  double grad_clip = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double adam_eps = 1e-8;
  int batch_size = 256;
  int epochs = 1;
  int64_t max_steps = 0;  // 0 = run all epochs
  int eval_every = 0;     // steps between evals; 0 = once per epoch
  int log_every = 1;      // steps between train-loss records
  uint64_t seed = 1;
  std::string precision = "f32";  // f32 | f64
  std::string lr_schedule = "constant";  // constant | cosine
  double lr_min_frac = 0.1;

  // optional early stop once an eval metric holds >= threshold twice in a row
  std::string stop_metric;  // e.g. "coherence"; empty = off
  double stop_threshold = 0.99;

  bool teacher_mode = false;  // train on reversed sequences, freeze at the end
  bool summary_precompute = true;
  std::string summary_cache;  // optional on-disk cache path

  std::string data_dir;
  std::string out_dir = "runs";
  std::string run_name = "run";

  int eval_subset = 512;        // test instances per periodic eval (0 = all)
  int eval_final_subset = 0;    // final eval (0 = all)
  int eval_train_subset = 2048; // train exact-match sample at final eval
  int eval_samples = 256;       // sibling coherence samples per eval
  double eval_temperature = 1.0;

  void validate() const {
    objective.validate();
    FSP_CHECK_CFG(lr > 0 && batch_size >= 1 && epochs >= 1, "config: bad lr/batch/epochs");
    FSP_CHECK_CFG(precision == "f32" || precision == "f64",
                  "config: precision must be f32 or f64");
    FSP_CHECK_CFG(lr_schedule == "constant" || lr_schedule == "cosine",
                  "config: lr_schedule must be constant or cosine");
    FSP_CHECK_CFG(!data_dir.empty(), "config: data.dir is required");
  }
};

namespace cfgdetail {

struct Field {
  const char* key;
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
};

inline int64_t to_int(const std::string& v) { return std::stoll(v); }
inline double to_real(const std::string& v) { return std::stod(v); }
inline bool to_bool(const std::string& v) {
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw ConfigError("bad boolean '" + v + "'");
}
inline std::string fmt_real(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);  // shortest round-trip
  return std::string(buf, end);
}

inline const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      {"objective.kind", [](const TrainConfig& c) { return std::string(to_string(c.objective.kind)); },
       [](TrainConfig& c, const std::string& v) { c.objective.kind = objective_kind_from(v); }},
      {"objective.n_aux", [](const TrainConfig& c) { return std::to_string(c.objective.n_aux); },
       [](TrainConfig& c, const std::string& v) { c.objective.n_aux = static_cast<int>(to_int(v)); }},
      {"objective.tau", [](const TrainConfig& c) { return std::to_string(c.objective.tau); },
       [](TrainConfig& c, const std::string& v) { c.objective.tau = static_cast<int>(to_int(v)); }},
      {"objective.weighting",
       [](const TrainConfig& c) {
         return std::string(c.objective.weighting == BceWeighting::TfIdf ? "tfidf" : "uniform");
       },
       [](TrainConfig& c, const std::string& v) {
         if (v == "tfidf") c.objective.weighting = BceWeighting::TfIdf;
         else if (v == "uniform") c.objective.weighting = BceWeighting::Uniform;
         else throw ConfigError("objective.weighting must be tfidf or uniform");
       }},
      {"objective.teacher", [](const TrainConfig& c) { return c.objective.teacher_checkpoint; },
       [](TrainConfig& c, const std::string& v) { c.objective.teacher_checkpoint = v; }},
      {"objective.teacher_layer",
       [](const TrainConfig& c) { return std::to_string(c.objective.teacher_layer); },
       [](TrainConfig& c, const std::string& v) {
         c.objective.teacher_layer = static_cast<int>(to_int(v));
       }},
      {"objective.lambda", [](const TrainConfig& c) { return fmt_real(c.objective.lambda_aux); },
       [](TrainConfig& c, const std::string& v) { c.objective.lambda_aux = to_real(v); }},

      {"model.n_layers", [](const TrainConfig& c) { return std::to_string(c.model.n_layers); },
       [](TrainConfig& c, const std::string& v) { c.model.n_layers = static_cast<int>(to_int(v)); }},
      {"model.d_model", [](const TrainConfig& c) { return std::to_string(c.model.d_model); },
       [](TrainConfig& c, const std::string& v) { c.model.d_model = static_cast<int>(to_int(v)); }},
      {"model.n_heads", [](const TrainConfig& c) { return std::to_string(c.model.n_heads); },
       [](TrainConfig& c, const std::string& v) { c.model.n_heads = static_cast<int>(to_int(v)); }},
      {"model.mlp_factor", [](const TrainConfig& c) { return std::to_string(c.model.mlp_factor); },
       [](TrainConfig& c, const std::string& v) { c.model.mlp_factor = static_cast<int>(to_int(v)); }},
      {"model.vocab_size", [](const TrainConfig& c) { return std::to_string(c.model.vocab_size); },
       [](TrainConfig& c, const std::string& v) { c.model.vocab_size = static_cast<int>(to_int(v)); }},
      {"model.max_seq_len", [](const TrainConfig& c) { return std::to_string(c.model.max_seq_len); },
       [](TrainConfig& c, const std::string& v) { c.model.max_seq_len = static_cast<int>(to_int(v)); }},
      {"model.tie_unembedding",
       [](const TrainConfig& c) { return std::string(c.model.tie_unembedding ? "1" : "0"); },
       [](TrainConfig& c, const std::string& v) { c.model.tie_unembedding = to_bool(v); }},

      {"train.lr", [](const TrainConfig& c) { return fmt_real(c.lr); },
       [](TrainConfig& c, const std::string& v) { c.lr = to_real(v); }},
      {"train.weight_decay", [](const TrainConfig& c) { return fmt_real(c.weight_decay); },
       [](TrainConfig& c, const std::string& v) { c.weight_decay = to_real(v); }},
      {"train.grad_clip", [](const TrainConfig& c) { return fmt_real(c.grad_clip); },
       [](TrainConfig& c, const std::string& v) { c.grad_clip = to_real(v); }},
      {"train.beta1", [](const TrainConfig& c) { return fmt_real(c.beta1); },
       [](TrainConfig& c, const std::string& v) { c.beta1 = to_real(v); }},
      {"train.beta2", [](const TrainConfig& c) { return fmt_real(c.beta2); },
       [](TrainConfig& c, const std::string& v) { c.beta2 = to_real(v); }},
      {"train.adam_eps", [](const TrainConfig& c) { return fmt_real(c.adam_eps); },
       [](TrainConfig& c, const std::string& v) { c.adam_eps = to_real(v); }},
      {"train.batch_size", [](const TrainConfig& c) { return std::to_string(c.batch_size); },
       [](TrainConfig& c, const std::string& v) { c.batch_size = static_cast<int>(to_int(v)); }},
      {"train.epochs", [](const TrainConfig& c) { return std::to_string(c.epochs); },
       [](TrainConfig& c, const std::string& v) { c.epochs = static_cast<int>(to_int(v)); }},
      {"train.max_steps", [](const TrainConfig& c) { return std::to_string(c.max_steps); },
       [](TrainConfig& c, const std::string& v) { c.max_steps = to_int(v); }},
      {"train.eval_every", [](const TrainConfig& c) { return std::to_string(c.eval_every); },
       [](TrainConfig& c, const std::string& v) { c.eval_every = static_cast<int>(to_int(v)); }},
      {"train.log_every", [](const TrainConfig& c) { return std::to_string(c.log_every); },
       [](TrainConfig& c, const std::string& v) { c.log_every = static_cast<int>(to_int(v)); }},
      {"train.seed", [](const TrainConfig& c) { return std::to_string(c.seed); },
       [](TrainConfig& c, const std::string& v) { c.seed = static_cast<uint64_t>(to_int(v)); }},
      {"train.precision", [](const TrainConfig& c) { return c.precision; },
       [](TrainConfig& c, const std::string& v) { c.precision = v; }},
      {"train.lr_schedule", [](const TrainConfig& c) { return c.lr_schedule; },
       [](TrainConfig& c, const std::string& v) { c.lr_schedule = v; }},
      {"train.lr_min_frac", [](const TrainConfig& c) { return fmt_real(c.lr_min_frac); },
       [](TrainConfig& c, const std::string& v) { c.lr_min_frac = to_real(v); }},
      {"train.stop_metric", [](const TrainConfig& c) { return c.stop_metric; },
       [](TrainConfig& c, const std::string& v) { c.stop_metric = v; }},
      {"train.stop_threshold", [](const TrainConfig& c) { return fmt_real(c.stop_threshold); },
       [](TrainConfig& c, const std::string& v) { c.stop_threshold = to_real(v); }},
      {"train.teacher_mode",
       [](const TrainConfig& c) { return std::string(c.teacher_mode ? "1" : "0"); },
       [](TrainConfig& c, const std::string& v) { c.teacher_mode = to_bool(v); }},
      {"train.summary_precompute",
       [](const TrainConfig& c) { return std::string(c.summary_precompute ? "1" : "0"); },
       [](TrainConfig& c, const std::string& v) { c.summary_precompute = to_bool(v); }},
      {"train.summary_cache", [](const TrainConfig& c) { return c.summary_cache; },
       [](TrainConfig& c, const std::string& v) { c.summary_cache = v; }},

      {"data.dir", [](const TrainConfig& c) { return c.data_dir; },
       [](TrainConfig& c, const std::string& v) { c.data_dir = v; }},
      {"out.dir", [](const TrainConfig& c) { return c.out_dir; },
       [](TrainConfig& c, const std::string& v) { c.out_dir = v; }},
      {"run.name", [](const TrainConfig& c) { return c.run_name; },
       [](TrainConfig& c, const std::string& v) { c.run_name = v; }},

      {"eval.subset", [](const TrainConfig& c) { return std::to_string(c.eval_subset); },
       [](TrainConfig& c, const std::string& v) { c.eval_subset = static_cast<int>(to_int(v)); }},
      {"eval.final_subset", [](const TrainConfig& c) { return std::to_string(c.eval_final_subset); },
       [](TrainConfig& c, const std::string& v) { c.eval_final_subset = static_cast<int>(to_int(v)); }},
      {"eval.train_subset", [](const TrainConfig& c) { return std::to_string(c.eval_train_subset); },
       [](TrainConfig& c, const std::string& v) { c.eval_train_subset = static_cast<int>(to_int(v)); }},
      {"eval.samples", [](const TrainConfig& c) { return std::to_string(c.eval_samples); },
       [](TrainConfig& c, const std::string& v) { c.eval_samples = static_cast<int>(to_int(v)); }},
      {"eval.temperature", [](const TrainConfig& c) { return fmt_real(c.eval_temperature); },
       [](TrainConfig& c, const std::string& v) { c.eval_temperature = to_real(v); }},
  };
  return f;
}

inline const Field& field(const std::string& key) {
  for (const auto& f : fields())
    if (key == f.key) return f;
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace cfgdetail

inline void apply_config_line(TrainConfig& cfg, const std::string& key,
                              const std::string& value) {
  cfgdetail::field(key).set(cfg, value);
}

// key=value per line; '#' starts a comment; blank lines ignored.
inline TrainConfig parse_config_text(const std::string& text, TrainConfig base = {}) {
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    // trim
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    const auto e = line.find_last_not_of(" \t\r");
    line = line.substr(b, e - b + 1);
    const size_t eq = line.find('=');
    FSP_CHECK_CFG(eq != std::string::npos, "config line ", lineno, ": expected key=value");
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    auto strip = [](std::string& s) {
      const auto b2 = s.find_first_not_of(" \t");
      const auto e2 = s.find_last_not_of(" \t");
      s = b2 == std::string::npos ? "" : s.substr(b2, e2 - b2 + 1);
    };
    strip(key);
    strip(value);
    apply_config_line(base, key, value);
  }
  return base;
}

inline TrainConfig load_config_file(const std::string& path, TrainConfig base = {}) {
  std::ifstream is(path);
  FSP_CHECK(is.good(), IoError, "cannot open config '", path, "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str(), std::move(base));
}

// "key=value" strings, e.g. from --set flags.
inline void apply_overrides(TrainConfig& cfg, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const size_t eq = o.find('=');
    FSP_CHECK_CFG(eq != std::string::npos, "override '", o, "': expected key=value");
    apply_config_line(cfg, o.substr(0, eq), o.substr(eq + 1));
  }
}

// Canonical sorted echo; identical configs echo identically.
inline std::string config_echo(const TrainConfig& cfg) {
  std::map<std::string, std::string> kv;
  for (const auto& f : cfgdetail::fields()) kv[f.key] = f.get(cfg);
  std::string out;
  for (const auto& [k, v] : kv) {
    out += k;
    out += "=";
    out += v;
    out += "\n";
  }
  return out;
}

// Content hash for run addressing. Output locations are not content: two
// sweeps writing to different roots must agree on the run identity.
inline uint64_t config_hash(const TrainConfig& cfg) {
  std::map<std::string, std::string> kv;
  for (const auto& f : cfgdetail::fields()) kv[f.key] = f.get(cfg);
  kv.erase("out.dir");
  kv.erase("run.name");
  std::string out;
  for (const auto& [k, v] : kv) {
    out += k;
    out += "=";
    out += v;
    out += "\n";
  }
  return fnv1a64(out);
}

}  // namespace fsp
