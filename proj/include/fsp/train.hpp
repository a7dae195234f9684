#pragma once

// Deterministic training loop: data order, initialization, objective
// randomness and eval sampling all run on independent streams derived from
// the run seed, so the batch sequence never depends on the objective and
// reruns are bit-identical.

#include <filesystem>
#include <functional>
#include <optional>

#include "fsp/config.hpp"
#include "fsp/eval.hpp"
#include "fsp/tfidf.hpp"
#include "fsp/train_support.hpp"

namespace fsp {

struct TrainOutcome {
  std::string run_dir;
  RunMetrics metrics;
  std::optional<int64_t> converged_step;
  nlohmann::json summary;
};

// Optional per-step observer for tests (batch order probes etc.).
using StepProbe = std::function<void(int64_t step, const Batch& batch)>;

template <class Real>
TrainOutcome train(const TrainConfig& cfg, const StepProbe& probe = {}) {
  namespace fs = std::filesystem;
  cfg.validate();
  ensure_blas_runtime();

  // --- data ---------------------------------------------------------------
  LoadedData data = load_data_dir(cfg.data_dir);
  if (cfg.teacher_mode) {
    data.train = reverse_dataset(data.train);
    data.test = reverse_dataset(data.test);
  }
  const TokenId pad = data.meta.specials().eos;
  const int64_t n_train = static_cast<int64_t>(data.train.instances.size());
  FSP_CHECK_CFG(n_train > 0, "train: empty training set");

  // --- teacher (fsp-revlm) --------------------------------------------------
  std::shared_ptr<Gpt<Real>> teacher;
  uint64_t teacher_file_hash = 0;
  if (cfg.objective.kind == ObjectiveKind::FspRevLm) {
    FSP_CHECK_CFG(fs::exists(cfg.objective.teacher_checkpoint),
                  "missing teacher checkpoint '", cfg.objective.teacher_checkpoint, "'");
    teacher = std::make_shared<Gpt<Real>>(
        model_config_from_sidecar(cfg.objective.teacher_checkpoint), 0);
    load_checkpoint(cfg.objective.teacher_checkpoint, *teacher);
    teacher_file_hash = file_hash(cfg.objective.teacher_checkpoint);
  }

  // --- model ----------------------------------------------------------------
  ModelConfig mcfg = cfg.model;
  if (mcfg.vocab_size == 0) mcfg.vocab_size = data.train.vocab_size;
  FSP_CHECK_CFG(mcfg.vocab_size >= data.train.vocab_size,
                "model.vocab_size smaller than dataset vocabulary");
  if (mcfg.max_seq_len == 0)
    mcfg.max_seq_len = std::max(data.train.max_len(), data.test.max_len());
  cfg.objective.configure_model(mcfg, teacher ? teacher->config().d_model : 0);
  Gpt<Real> model(mcfg, cfg.seed);

  // --- objective context ------------------------------------------------------
  ObjectiveContext<Real> ctx;
  ctx.spec = cfg.objective;
  ctx.teacher = teacher;
  ctx.teacher_layer = SummaryLayer{cfg.objective.teacher_layer};
  TfIdfTable tfidf;
  if (cfg.objective.kind == ObjectiveKind::FspBce &&
      cfg.objective.weighting == BceWeighting::TfIdf) {
    tfidf = tfidf_from_dataset(data.train);
    Tensor<Real> w = Tensor<Real>::uninit({static_cast<int64_t>(tfidf.weight.size())});
    for (size_t i = 0; i < tfidf.weight.size(); ++i)
      w[static_cast<int64_t>(i)] = static_cast<Real>(tfidf.weight[i]);
    ctx.bce_weights = std::move(w);
  }
  if (teacher && cfg.objective.lambda_aux != 0.0) {
    ctx.summary_cache = load_or_build_summary_cache(cfg, *teacher, data.train);
  }

  // --- run directory -----------------------------------------------------------
  const uint64_t chash = config_hash(cfg);
  const std::string run_dir =
      (fs::path(cfg.out_dir) /
       (cfg.run_name + "-" + hex64(chash).substr(0, 8) + "-s" + std::to_string(cfg.seed)))
          .string();
  fs::create_directories(run_dir);
  if (ctx.bce_weights.defined())
    save_tfidf_csv((fs::path(run_dir) / "tfidf.csv").string(), tfidf);

  // --- optimizer ----------------------------------------------------------------
  typename AdamW<Real>::Hyper hyper;
  hyper.lr = static_cast<Real>(cfg.lr);
  hyper.beta1 = static_cast<Real>(cfg.beta1);
  hyper.beta2 = static_cast<Real>(cfg.beta2);
  hyper.eps = static_cast<Real>(cfg.adam_eps);
  hyper.weight_decay = static_cast<Real>(cfg.weight_decay);
  AdamW<Real> opt(hyper);

  const int64_t steps_per_epoch = (n_train + cfg.batch_size - 1) / cfg.batch_size;
  const int64_t planned_steps =
      cfg.max_steps > 0 ? std::min<int64_t>(cfg.max_steps, steps_per_epoch * cfg.epochs)
                        : steps_per_epoch * cfg.epochs;

  RunMetrics metrics;
  Rng data_rng = Rng(cfg.seed).fork("data");
  Rng objective_rng = Rng(cfg.seed).fork("objective");
  const Rng eval_rng_base = Rng(cfg.seed).fork("eval");

  double best_metric = -1e300;
  int64_t step = 0;
  int64_t eval_count = 0;
  bool stop = false;

  auto eval_model = [&](bool final_eval) {
    const int subset = final_eval ? cfg.eval_final_subset : cfg.eval_subset;
    const std::string prefix = "eval";
    double selection = 0.0;
    if (!data.test.instances.empty()) {
      const double loss = dataset_ntp_loss(model, data.test, pad);
      metrics.log(step, prefix, "loss", loss);
      selection = -loss;
    }
    if (!cfg.teacher_mode) {
      if (data.meta.kind == TaskKind::PathStar && !data.test.instances.empty()) {
        const double em = path_exact_match(model, data.test, data.meta, subset);
        metrics.log(step, prefix, "exact_match", em);
        selection = em;
      } else if (data.meta.kind == TaskKind::Sibling) {
        const uint64_t eseed =
            eval_rng_base.fork(static_cast<uint64_t>(eval_count)).next_u64();
        const double coh = sibling_coherence(model, data.meta, cfg.eval_samples,
                                             cfg.eval_temperature, eseed);
        metrics.log(step, prefix, "coherence", coh);
        selection = coh;
      }
    }
    ++eval_count;
    if (selection > best_metric) {
      best_metric = selection;
      save_run_checkpoint((fs::path(run_dir) / "ckpt_best.bin").string(), model);
    }
    if (!cfg.stop_metric.empty()) {
      if (convergence_step(metrics, "eval", cfg.stop_metric, cfg.stop_threshold)
              .has_value())
        stop = true;
    }
  };

  // --- the loop --------------------------------------------------------------------
  for (int epoch = 0; epoch < cfg.epochs && !stop; ++epoch) {
    std::vector<int32_t> order(static_cast<size_t>(n_train));
    for (int64_t i = 0; i < n_train; ++i) order[static_cast<size_t>(i)] = static_cast<int32_t>(i);
    Rng epoch_rng = data_rng.fork(static_cast<uint64_t>(epoch));
    epoch_rng.shuffle(order);

    for (int64_t begin = 0; begin < n_train && !stop; begin += cfg.batch_size) {
      if (cfg.max_steps > 0 && step >= cfg.max_steps) {
        stop = true;
        break;
      }
      const int64_t end = std::min<int64_t>(n_train, begin + cfg.batch_size);
      std::vector<int32_t> idxs(order.begin() + begin, order.begin() + end);
      Batch batch = make_batch(data.train, idxs, pad);
      if (probe) probe(step, batch);

      if (cfg.lr_schedule == "cosine") {
        const double t = planned_steps > 1
                             ? static_cast<double>(step) / static_cast<double>(planned_steps - 1)
                             : 1.0;
        const double lo = cfg.lr * cfg.lr_min_frac;
        opt.hyper().lr = static_cast<Real>(lo + 0.5 * (cfg.lr - lo) * (1.0 + std::cos(3.14159265358979323846 * t)));
      }

      Tape<Real> tape;
      LossParts<Real> parts = objective_loss(tape, model, ctx, batch, objective_rng);
      const double loss_v = static_cast<double>(parts.total.value()[0]);
      if (!std::isfinite(loss_v)) {
        const std::string dump = dump_batch(run_dir, step, batch);
        throw NumericError("non-finite loss at step " + std::to_string(step) +
                           "; batch dumped to " + dump);
      }
      zero_grads(model.params());
      tape.backward(parts.total);

      const double gnorm = grad_global_norm(model.params());
      if (cfg.grad_clip > 0) clip_grad_norm(model.params(), static_cast<Real>(cfg.grad_clip));
      try {
        opt.step(model.params());
      } catch (const NumericError& e) {
        const std::string dump = dump_batch(run_dir, step, batch);
        throw NumericError(std::string(e.what()) + "; batch dumped to " + dump);
      }
      ++step;

      if (step % cfg.log_every == 0 || step == planned_steps) {
        metrics.log(step, "train", "loss", loss_v);
        metrics.log(step, "train", "ntp", parts.ntp);
        if (ctx.spec.kind != ObjectiveKind::Ntp && ctx.spec.lambda_aux != 0.0)
          metrics.log(step, "train", "aux", parts.aux);
        metrics.log(step, "train", "grad_norm", gnorm);
      }
      const bool epoch_end = end >= n_train;
      if ((cfg.eval_every > 0 && step % cfg.eval_every == 0) ||
          (cfg.eval_every == 0 && epoch_end))
        eval_model(false);
    }
  }

  // --- final metrics and artifacts --------------------------------------------------
  eval_model(true);
  if (!cfg.teacher_mode) {
    if (data.meta.kind == TaskKind::PathStar) {
      const double train_em =
          path_exact_match(model, data.train, data.meta, cfg.eval_train_subset);
      metrics.log(step, "final", "train_exact_match", train_em);
      if (!data.test.instances.empty())
        metrics.log(step, "final", "exact_match",
                    metrics.last("eval", "exact_match").value_or(0.0));
    } else {
      metrics.log(step, "final", "coherence", metrics.last("eval", "coherence").value_or(0.0));
    }
  }
  const std::string final_ckpt = (fs::path(run_dir) / "ckpt_final.bin").string();
  save_run_checkpoint(final_ckpt, model);
  metrics.save_csv((fs::path(run_dir) / "metrics.csv").string());

  TrainOutcome out;
  out.run_dir = run_dir;
  out.converged_step =
      cfg.stop_metric.empty()
          ? convergence_step(metrics, "eval",
                             data.meta.kind == TaskKind::Sibling ? "coherence" : "exact_match",
                             cfg.stop_threshold)
          : convergence_step(metrics, "eval", cfg.stop_metric, cfg.stop_threshold);

  nlohmann::json summary;
  summary["run_name"] = cfg.run_name;
  summary["config_hash"] = hex64(chash);
  summary["seed"] = cfg.seed;
  summary["objective"] = to_string(cfg.objective.kind);
  summary["task"] = to_string(data.meta.kind);
  summary["data_dir"] = cfg.data_dir;
  summary["steps"] = step;
  summary["params"] = model.param_element_count();
  summary["converged_step"] =
      out.converged_step.has_value() ? nlohmann::json(*out.converged_step) : nlohmann::json();
  nlohmann::json cfg_echo;
  {
    std::istringstream es(config_echo(cfg));
    std::string line;
    while (std::getline(es, line)) {
      const auto eq = line.find('=');
      if (eq != std::string::npos) cfg_echo[line.substr(0, eq)] = line.substr(eq + 1);
    }
  }
  summary["config"] = cfg_echo;
  nlohmann::json finals;
  for (const auto& r : metrics.records())
    if (r.step == step && (r.split == "final" || r.split == "eval"))
      finals[r.split + "/" + r.metric] = r.value;
  summary["final"] = finals;
  summary["checkpoint_hash"] = hex64(file_hash(final_ckpt));
  summary["weight_hash"] = hex64(model.weight_hash());
  if (teacher) {
    summary["teacher_checkpoint"] = cfg.objective.teacher_checkpoint;
    summary["teacher_checkpoint_hash"] = hex64(teacher_file_hash);
    summary["teacher_weight_hash"] = hex64(teacher->weight_hash());
  }
  {
    std::ofstream os(fs::path(run_dir) / "summary.json");
    os << summary.dump(2) << "\n";
    FSP_CHECK(os.good(), IoError, "cannot write summary.json in ", run_dir);
  }
  out.summary = std::move(summary);
  out.metrics = std::move(metrics);
  return out;
}

// Precision dispatch (training is f32 by default; f64 exists for the
// gradcheck-style suites and debugging).
inline TrainOutcome run_training(const TrainConfig& cfg, const StepProbe& probe = {}) {
  if (cfg.precision == "f64") return train<double>(cfg, probe);
  return train<float>(cfg, probe);
}

// Content-addressed reuse: when the target run directory already holds a
// completed run for this exact (config hash, seed), load its artifacts
// instead of retraining. Safe because runs are deterministic functions of
// the config.
inline TrainOutcome run_training_cached(const TrainConfig& cfg) {
  namespace fs = std::filesystem;
  const uint64_t chash = config_hash(cfg);
  const std::string run_dir =
      (fs::path(cfg.out_dir) /
       (cfg.run_name + "-" + hex64(chash).substr(0, 8) + "-s" + std::to_string(cfg.seed)))
          .string();
  const fs::path summary_path = fs::path(run_dir) / "summary.json";
  if (fs::exists(summary_path)) {
    std::ifstream is(summary_path);
    nlohmann::json summary;
    is >> summary;
    if (summary.value("config_hash", "") == hex64(chash)) {
      TrainOutcome out;
      out.run_dir = run_dir;
      out.summary = std::move(summary);
      out.metrics = RunMetrics::load_csv((fs::path(run_dir) / "metrics.csv").string());
      if (!out.summary["converged_step"].is_null())
        out.converged_step = out.summary["converged_step"].get<int64_t>();
      return out;
    }
  }
  return run_training(cfg);
}

}  // namespace fsp
