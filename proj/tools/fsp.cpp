// fsp — future-summary pretraining lab.
//
// Subcommands:
//   gen-data       generate path-star / sibling datasets
//   train          run one training job from a flat key=value config
//   train-teacher  train a frozen reverse-LM teacher (config + teacher mode)
//   eval           evaluate a checkpoint or run directory on a dataset
//   report         aggregate finished runs into tables
//
// Exit codes: 0 ok, 2 usage/config error, 3 numerical abort,
//             4 missing dependency artifact.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "fsp/fsp.hpp"
#include "fsp/train_support.hpp"

namespace fs = std::filesystem;

namespace {

struct GenDataArgs {
  std::string task;
  int d = 2, l = 5, n_nodes = 50;
  int k = 2, n_values = 100;
  int n = 1000, n_test = 0;
  uint64_t seed = 1;
  std::string out;
};

int cmd_gen_data(const GenDataArgs& a) {
  fsp::TaskMeta meta;
  if (a.task == "path-star") {
    meta.kind = fsp::TaskKind::PathStar;
    meta.path_star = {.degree = a.d, .path_len = a.l, .n_nodes = a.n_nodes};
  } else {
    meta.kind = fsp::TaskKind::Sibling;
    meta.sibling = {.k = a.k, .n_values = a.n_values};
  }
  auto data = fsp::generate_data(meta, a.n, a.n_test, a.seed);
  if (meta.kind == fsp::TaskKind::PathStar) {
    // structural validation of every emitted instance
    for (const auto& inst : fsp::gen_path_star(meta.path_star, std::min(a.n, 64), a.seed))
      fsp::validate_path_star(inst, meta.path_star);
  } else {
    for (const auto& t : data.train.instances) {
      std::vector<fsp::TokenId> body(t.tokens.begin() + 1, t.tokens.end());
      FSP_CHECK_ARG(fsp::validate_sibling_sequence(body, meta.sibling).coherent(),
                    "generated sibling instance failed validation");
    }
  }
  fsp::write_data_dir(a.out, data);
  std::cout << "wrote " << data.train.instances.size() << " train / "
            << data.test.instances.size() << " test instances to " << a.out << "\n"
            << "vocab " << meta.vocab_size() << ", manifest hash "
            << fsp::hex64(fsp::file_hash((fs::path(a.out) / "manifest.json").string()))
            << "\n";
  return 0;
}

struct TrainArgs {
  std::string config;
  std::vector<std::string> overrides;
  int64_t seed = -1;
  bool teacher = false;
  bool reuse = false;
};

int cmd_train(const TrainArgs& a) {
  fsp::TrainConfig cfg = fsp::load_config_file(a.config);
  fsp::apply_overrides(cfg, a.overrides);
  if (a.seed >= 0) cfg.seed = static_cast<uint64_t>(a.seed);
  if (a.teacher) cfg.teacher_mode = true;
  auto out = a.reuse ? fsp::run_training_cached(cfg) : fsp::run_training(cfg);
  std::cout << "run dir: " << out.run_dir << "\n";
  for (const auto& [k, v] : out.summary["final"].items())
    std::cout << "  " << k << " = " << v << "\n";
  if (out.converged_step.has_value())
    std::cout << "  converged_step = " << *out.converged_step << "\n";
  return 0;
}

struct EvalArgs {
  std::string run;
  std::string ckpt;
  std::string data;
  int subset = 0;
  int samples = 256;
  double temperature = 1.0;
  uint64_t seed = 1;
};

int cmd_eval(const EvalArgs& a) {
  std::string ckpt = a.ckpt;
  std::string data_dir = a.data;
  if (!a.run.empty()) {
    ckpt = (fs::path(a.run) / "ckpt_final.bin").string();
    if (data_dir.empty()) {
      std::ifstream is(fs::path(a.run) / "summary.json");
      FSP_CHECK(is.good(), fsp::IoError, "no summary.json in '", a.run, "'");
      nlohmann::json j;
      is >> j;
      data_dir = j["config"].value("data.dir", "");
    }
  }
  FSP_CHECK_CFG(!ckpt.empty() && !data_dir.empty(),
                "eval: need --run, or --ckpt together with --data");
  FSP_CHECK(fs::exists(ckpt), fsp::IoError, "missing checkpoint '", ckpt, "'");

  fsp::Gpt<float> model(fsp::model_config_from_sidecar(ckpt), 0);
  fsp::load_checkpoint(ckpt, model);
  auto data = fsp::load_data_dir(data_dir);
  const fsp::TokenId pad = data.meta.specials().eos;

  nlohmann::json out;
  out["checkpoint"] = ckpt;
  out["checkpoint_hash"] = fsp::hex64(fsp::file_hash(ckpt));
  out["data_dir"] = data_dir;
  const fsp::Dataset& ds = data.test.instances.empty() ? data.train : data.test;
  out["split"] = data.test.instances.empty() ? "train" : "test";
  out["loss"] = fsp::dataset_ntp_loss(model, ds, pad);
  if (data.meta.kind == fsp::TaskKind::PathStar)
    out["exact_match"] = fsp::path_exact_match(model, ds, data.meta, a.subset);
  else
    out["coherence"] =
        fsp::sibling_coherence(model, data.meta, a.samples, a.temperature, a.seed);
  std::cout << out.dump(2) << "\n";
  return 0;
}

struct ReportArgs {
  std::string manifest;
  std::vector<std::string> run_dirs;
  std::string baseline = "ntp";
  std::string out_dir = ".";
};

int cmd_report(const ReportArgs& a) {
  std::vector<std::string> paths = a.run_dirs;
  std::string baseline = a.baseline;
  if (!a.manifest.empty()) {
    auto m = fsp::load_manifest(a.manifest);
    baseline = m.baseline;
    for (const auto& r : m.runs) {
      fsp::TrainConfig cfg = fsp::load_config_file(r.config_path);
      fsp::apply_overrides(cfg, r.overrides);
      cfg.run_name = r.name;
      for (uint64_t s : r.seeds) {
        fsp::TrainConfig c2 = cfg;
        c2.seed = s;
        paths.push_back((fs::path(m.output_root) /
                         (r.name + "-" + fsp::hex64(fsp::config_hash(c2)).substr(0, 8) +
                          "-s" + std::to_string(s)))
                            .string());
      }
    }
  }
  std::vector<std::string> missing;
  auto runs = fsp::collect_runs(paths, &missing);
  // baseline name refers to manifest run names or objective labels; map to
  // the objective label used in summaries
  auto tables = fsp::build_report(runs, baseline);
  std::cout << tables.text << "\n" << tables.ratio_text;
  if (!missing.empty()) {
    std::cout << "\nmissing runs (partial table):\n";
    for (const auto& m : missing) std::cout << "  " << m << "\n";
  }
  fs::create_directories(a.out_dir);
  auto write = [&](const char* name, const std::string& body) {
    std::ofstream os(fs::path(a.out_dir) / name);
    os << body;
  };
  write("report.txt", tables.text + "\n" + tables.ratio_text);
  write("report.csv", tables.csv);
  write("ratios.csv", tables.ratio_csv);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  fsp::ensure_blas_runtime();
  CLI::App app{"fsp: future-summary pretraining lab"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* sc_gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  sc_gen->add_option("task", gen.task, "path-star | sibling")
      ->required()
      ->check(CLI::IsMember({"path-star", "sibling"}));
  sc_gen->add_option("--d", gen.d, "path-star: arms per start node");
  sc_gen->add_option("--l", gen.l, "path-star: nodes per arm");
  sc_gen->add_option("--n-nodes", gen.n_nodes, "path-star: node universe size");
  sc_gen->add_option("--k", gen.k, "sibling: component count");
  sc_gen->add_option("--n-values", gen.n_values, "sibling: values per child slot");
  sc_gen->add_option("--n", gen.n, "training instances")->required();
  sc_gen->add_option("--n-test", gen.n_test, "test instances");
  sc_gen->add_option("--seed", gen.seed, "generation seed")->required();
  sc_gen->add_option("--out", gen.out, "output directory")->required();

  TrainArgs tr;
  auto* sc_train = app.add_subcommand("train", "train one run from a config file");
  sc_train->add_option("--config", tr.config, "flat key=value config")->required();
  sc_train->add_option("--seed", tr.seed, "override train.seed");
  sc_train->add_option("--set", tr.overrides, "key=value overrides");
  sc_train->add_flag("--reuse", tr.reuse, "skip when this (config,seed) already completed");

  TrainArgs tt;
  auto* sc_teacher = app.add_subcommand("train-teacher", "train a frozen reverse-LM teacher");
  sc_teacher->add_option("--config", tt.config, "flat key=value config")->required();
  sc_teacher->add_option("--seed", tt.seed, "override train.seed");
  sc_teacher->add_option("--set", tt.overrides, "key=value overrides");

  EvalArgs ev;
  auto* sc_eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  sc_eval->add_option("--run", ev.run, "run directory (uses its final checkpoint)");
  sc_eval->add_option("--ckpt", ev.ckpt, "checkpoint file");
  sc_eval->add_option("--data", ev.data, "dataset directory");
  sc_eval->add_option("--subset", ev.subset, "instance subset (0 = all)");
  sc_eval->add_option("--samples", ev.samples, "sibling coherence samples");
  sc_eval->add_option("--temperature", ev.temperature, "sibling sampling temperature");
  sc_eval->add_option("--seed", ev.seed, "sampling seed");

  ReportArgs rp;
  auto* sc_report = app.add_subcommand("report", "aggregate runs into tables");
  sc_report->add_option("--manifest", rp.manifest, "experiment manifest JSON");
  sc_report->add_option("--runs", rp.run_dirs, "run directories or roots");
  sc_report->add_option("--baseline", rp.baseline, "ratio baseline objective");
  sc_report->add_option("--out", rp.out_dir, "where to write report files");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*sc_gen) return cmd_gen_data(gen);
    if (*sc_train) return cmd_train(tr);
    if (*sc_teacher) {
      tt.teacher = true;
      return cmd_train(tt);
    }
    if (*sc_eval) return cmd_eval(ev);
    if (*sc_report) return cmd_report(rp);
  } catch (const fsp::NumericError& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return 3;
  } catch (const fsp::IoError& e) {
    std::cerr << "missing artifact: " << e.what() << "\n";
    return 4;
  } catch (const fsp::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
