#pragma once

#include <chrono>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fsp/common.hpp"

namespace fsp {

// Append-only run log. Wall-clock is kept in memory for reporting but never
// written to the CSV, which must be bit-identical across reruns.
struct MetricRecord {
  int64_t step = 0;
  std::string split;
  std::string metric;
  double value = 0.0;
  double wall_s = 0.0;
};

class RunMetrics {
 public:
  RunMetrics() : start_(std::chrono::steady_clock::now()) {}

  void log(int64_t step, std::string split, std::string metric, double value) {
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    if (!records_.empty()) {
      // steps within one (split, metric) stream must not decrease
      for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
        if (it->split == split && it->metric == metric) {
          FSP_CHECK_ARG(it->step <= step, "metrics: non-monotonic step for ", split, "/",
                        metric, ": ", it->step, " then ", step);
          break;
        }
      }
    }
    records_.push_back({step, std::move(split), std::move(metric), value, wall});
  }

  const std::vector<MetricRecord>& records() const { return records_; }

  std::vector<std::pair<int64_t, double>> series(const std::string& split,
                                                 const std::string& metric) const {
    std::vector<std::pair<int64_t, double>> out;
    for (const auto& r : records_)
      if (r.split == split && r.metric == metric) out.emplace_back(r.step, r.value);
    return out;
  }

  std::optional<double> last(const std::string& split, const std::string& metric) const {
    std::optional<double> out;
    for (const auto& r : records_)
      if (r.split == split && r.metric == metric) out = r.value;
    return out;
  }

  // CSV: step,split,metric,value
  void save_csv(const std::string& path) const {
    std::ofstream os(path, std::ios::trunc);
    FSP_CHECK(os.good(), IoError, "cannot open '", path, "' for writing");
    os << "step,split,metric,value\n";
    os.precision(17);
    for (const auto& r : records_)
      os << r.step << "," << r.split << "," << r.metric << "," << r.value << "\n";
    FSP_CHECK(os.good(), IoError, "write failed for '", path, "'");
  }

  static RunMetrics load_csv(const std::string& path) {
    std::ifstream is(path);
    FSP_CHECK(is.good(), IoError, "cannot open metrics '", path, "'");
    RunMetrics m;
    std::string line;
    std::getline(is, line);  // header
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      std::istringstream ls(line);
      std::string step_s, split, metric, value_s;
      std::getline(ls, step_s, ',');
      std::getline(ls, split, ',');
      std::getline(ls, metric, ',');
      std::getline(ls, value_s, ',');
      m.records_.push_back({std::stoll(step_s), split, metric, std::stod(value_s), 0.0});
    }
    return m;
  }

 private:
  std::vector<MetricRecord> records_;
  std::chrono::steady_clock::time_point start_;
};

// Earliest step at which `split/metric` reaches `threshold` on two
// consecutive evaluations; returns the step of the second hit, or nullopt.
inline std::optional<int64_t> convergence_step(const RunMetrics& metrics,
                                               const std::string& split,
                                               const std::string& metric,
                                               double threshold = 0.99) {
  bool prev_hit = false;
  for (const auto& [step, value] : metrics.series(split, metric)) {
    const bool hit = value >= threshold;
    if (hit && prev_hit) return step;
    prev_hit = hit;
  }
  return std::nullopt;
}

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
  int n = 0;
};

// Sample mean and standard error (sample std / sqrt(n)); se = 0 for n <= 1.
inline MeanSe mean_se(const std::vector<double>& values) {
  MeanSe out;
  out.n = static_cast<int>(values.size());
  if (out.n == 0) return out;
  double sum = 0;
  for (double v : values) sum += v;
  out.mean = sum / out.n;
  if (out.n > 1) {
    double sq = 0;
    for (double v : values) sq += (v - out.mean) * (v - out.mean);
    out.se = std::sqrt(sq / (out.n - 1)) / std::sqrt(static_cast<double>(out.n));
  }
  return out;
}

}  // namespace fsp
