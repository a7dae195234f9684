#pragma once

// Aggregation of finished runs into method x dataset tables (mean over seeds
// with standard error) and the convergence-ratio table against a baseline
// objective. Consumed by the `report` CLI command and the experiment
// harness.

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <iomanip>
#include <map>
#include <optional>
#include <set>

#include <json.hpp>

#include "fsp/metrics.hpp"

namespace fsp {

struct RunRecord {
  std::string dir;
  nlohmann::json summary;

  std::string objective() const { return summary.value("objective", "?"); }
  std::string task() const { return summary.value("task", "?"); }
  uint64_t seed() const { return summary.value("seed", 0ull); }
  std::string data_label() const {
    return std::filesystem::path(summary.value("data_dir", "?")).filename().string();
  }
  std::optional<int64_t> converged_step() const {
    if (!summary.contains("converged_step") || summary["converged_step"].is_null())
      return std::nullopt;
    return summary["converged_step"].get<int64_t>();
  }
  std::optional<double> final_metric(const std::string& name) const {
    if (!summary.contains("final")) return std::nullopt;
    const auto& f = summary["final"];
    if (!f.contains(name)) return std::nullopt;
    return f[name].get<double>();
  }

  // Method label including the variant parameters that matter for tables.
  std::string method() const {
    const std::string kind = objective();
    const auto& cfg = summary["config"];
    auto get = [&](const char* k) { return cfg.value(k, std::string()); };
    if (kind == "mtp" || kind == "ds-mtp") return kind + "(aux=" + get("objective.n_aux") + ")";
    if (kind == "mtp-skip") return kind + "(tau=" + get("objective.tau") + ")";
    if (kind == "fsp-bce")
      return kind + "(tau=" + get("objective.tau") + "," + get("objective.weighting") + ")";
    if (kind == "fsp-revlm") {
      const std::string layer = get("objective.teacher_layer");
      return layer == "0" ? kind : kind + "(depth=" + layer + ")";
    }
    return kind;
  }
};

// Accepts run directories or roots containing run directories.
inline std::vector<RunRecord> collect_runs(const std::vector<std::string>& paths,
                                           std::vector<std::string>* missing = nullptr) {
  namespace fs = std::filesystem;
  std::vector<RunRecord> out;
  auto try_load = [&](const fs::path& dir) {
    const fs::path s = dir / "summary.json";
    if (!fs::exists(s)) return false;
    std::ifstream is(s);
    RunRecord r;
    r.dir = dir.string();
    is >> r.summary;
    out.push_back(std::move(r));
    return true;
  };
  for (const auto& p : paths) {
    if (!fs::exists(p)) {
      if (missing) missing->push_back(p);
      continue;
    }
    if (try_load(p)) continue;
    bool found = false;
    for (const auto& e : fs::directory_iterator(p))
      if (e.is_directory()) found |= try_load(e.path());
    if (!found && missing) missing->push_back(p);
  }
  std::sort(out.begin(), out.end(),
            [](const RunRecord& a, const RunRecord& b) { return a.dir < b.dir; });
  return out;
}

struct ReportTables {
  std::string text;
  std::string csv;
  std::string ratio_text;
  std::string ratio_csv;
};

namespace detail {

inline std::string fmt_cell(const MeanSe& ms) {
  if (ms.n == 0) return "--";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f (%.2f)%s", ms.mean, ms.se, ms.n == 1 ? " [n=1]" : "");
  return buf;
}

}  // namespace detail

// Method x dataset table of the task metric (exact match for path-star,
// coherence for sibling), plus a convergence-ratio table relative to
// `baseline` runs matched on (dataset, seed).
inline ReportTables build_report(const std::vector<RunRecord>& runs,
                                 const std::string& baseline = "ntp") {
  std::set<std::string> datasets;
  std::set<std::string> methods;
  std::map<std::pair<std::string, std::string>, std::vector<double>> metric_cells;
  std::map<std::pair<std::string, std::string>, std::vector<double>> ratio_cells;
  // (dataset, seed) -> baseline convergence step
  std::map<std::pair<std::string, uint64_t>, std::optional<int64_t>> base_steps;

  for (const auto& r : runs) {
    if (r.objective() == baseline)
      base_steps[{r.data_label(), r.seed()}] = r.converged_step();
  }
  for (const auto& r : runs) {
    const std::string ds = r.data_label();
    const std::string m = r.method();
    datasets.insert(ds);
    methods.insert(m);
    const char* metric_key =
        r.task() == "sibling" ? "final/coherence" : "final/exact_match";
    if (auto v = r.final_metric(metric_key); v.has_value())
      metric_cells[{m, ds}].push_back(*v);

    auto base_it = base_steps.find({ds, r.seed()});
    if (base_it != base_steps.end()) {
      auto ratio = convergence_ratio(r.converged_step(), base_it->second);
      if (ratio.has_value()) ratio_cells[{m, ds}].push_back(*ratio);
    }
  }

  ReportTables out;
  auto emit_table = [&](const char* title,
                        const std::map<std::pair<std::string, std::string>, std::vector<double>>& cells,
                        std::string& text, std::string& csv) {
    std::ostringstream ts, cs;
    size_t mw = 8;
    for (const auto& m : methods) mw = std::max(mw, m.size());
    ts << title << "\n" << std::string(strlen(title), '-') << "\n";
    ts << std::left << std::setw(static_cast<int>(mw + 2)) << "method";
    cs << "method";
    for (const auto& ds : datasets) {
      ts << std::setw(20) << ds;
      cs << "," << ds << "_mean," << ds << "_se," << ds << "_n";
    }
    ts << "\n";
    cs << "\n";
    for (const auto& m : methods) {
      bool any = false;
      for (const auto& ds : datasets)
        any |= cells.count({m, ds}) > 0;
      if (!any) continue;
      ts << std::setw(static_cast<int>(mw + 2)) << m;
      cs << m;
      for (const auto& ds : datasets) {
        auto it = cells.find({m, ds});
        const MeanSe ms = it == cells.end() ? MeanSe{} : mean_se(it->second);
        ts << std::setw(20) << detail::fmt_cell(ms);
        if (ms.n == 0) cs << ",,,0";
        else {
          cs << "," << ms.mean << "," << ms.se << "," << ms.n;
        }
      }
      ts << "\n";
      cs << "\n";
    }
    text = ts.str();
    csv = cs.str();
  };

  emit_table("task metric by method (mean (s.e.) over seeds)", metric_cells, out.text,
             out.csv);
  std::string rt, rc;
  emit_table(("convergence-step ratio vs " + baseline + " (lower = faster)").c_str(),
             ratio_cells, rt, rc);
  out.ratio_text = rt;
  out.ratio_csv = rc;
  return out;
}

// ---------------------------------------------------------------------------
// Experiment manifest: named (config, seed list) rows plus the ratio baseline.
// ---------------------------------------------------------------------------

struct ManifestRun {
  std::string name;
  std::string config_path;
  std::vector<std::string> overrides;
  std::vector<uint64_t> seeds;
};

struct ExperimentManifest {
  std::string output_root = "runs";
  std::string baseline = "ntp";
  std::vector<ManifestRun> runs;

  void validate() const {
    std::set<std::string> names;
    for (const auto& r : runs) {
      FSP_CHECK_CFG(names.insert(r.name).second, "manifest: duplicate run name '", r.name, "'");
      FSP_CHECK_CFG(!r.seeds.empty(), "manifest: run '", r.name, "' has no seeds");
    }
    if (!baseline.empty()) {
      bool found = false;
      for (const auto& r : runs) found |= r.name == baseline;
      FSP_CHECK_CFG(found, "manifest: baseline '", baseline, "' is not among the runs");
    }
  }
};

inline ExperimentManifest load_manifest(const std::string& path) {
  std::ifstream is(path);
  FSP_CHECK(is.good(), IoError, "cannot open manifest '", path, "'");
  nlohmann::json j;
  is >> j;
  ExperimentManifest m;
  m.output_root = j.value("output_root", "runs");
  m.baseline = j.value("baseline", "ntp");
  for (const auto& r : j.at("runs")) {
    ManifestRun run;
    run.name = r.at("name").get<std::string>();
    run.config_path = r.at("config").get<std::string>();
    if (r.contains("set")) run.overrides = r["set"].get<std::vector<std::string>>();
    run.seeds = r.at("seeds").get<std::vector<uint64_t>>();
    m.runs.push_back(std::move(run));
  }
  m.validate();
  return m;
}

}  // namespace fsp
