#pragma once

// Per-interval training records, CSV output, and cross-seed aggregates.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "divo/config.hpp"

namespace divo {

struct MetricsRecord {
  std::int64_t iteration = 0;
  double eval_return = 0.0;
  double normalized_score = 0.0;
  double pad_loss = 0.0;
  double td_loss = 0.0;
  double value_loss = 0.0;
  double policy_loss = 0.0;
  double gate_diffusion_fraction = 0.0;
  double lambda = 0.0;

  friend bool operator==(const MetricsRecord&, const MetricsRecord&) = default;
};

struct RunMetrics {
  std::vector<MetricsRecord> records;

  // Mean normalized score over the last `window` evaluations.
  double final_score(std::size_t window = 10) const {
    if (records.empty()) return 0.0;
    const std::size_t n = std::min(window, records.size());
    double s = 0.0;
    for (std::size_t i = records.size() - n; i < records.size(); ++i) s += records[i].normalized_score;
    return s / static_cast<double>(n);
  }

  friend bool operator==(const RunMetrics&, const RunMetrics&) = default;
};

inline constexpr const char* kMetricsHeader =
    "iteration,eval_return,normalized_score,pad_loss,td_loss,value_loss,policy_loss,gate_diffusion_fraction,lambda";

inline std::string metrics_csv(const RunMetrics& m) {
  std::string out = std::string(kMetricsHeader) + "\n";
  for (const auto& r : m.records) {
    out += std::to_string(r.iteration);
    for (double v : {r.eval_return, r.normalized_score, r.pad_loss, r.td_loss, r.value_loss, r.policy_loss,
                     r.gate_diffusion_fraction, r.lambda})
      out += "," + detail::format_double(v);
    out += "\n";
  }
  return out;
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw UsageError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw UsageError("write to '" + path + "' failed");
}

inline void emit_metrics(const RunMetrics& m, const std::string& path) { write_text(path, metrics_csv(m)); }

inline double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Mean after dropping floor(n/4) values from each end.
inline double interquartile_mean(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t cut = v.size() / 4;
  return std::accumulate(v.begin() + static_cast<std::ptrdiff_t>(cut), v.end() - static_cast<std::ptrdiff_t>(cut), 0.0) /
         static_cast<double>(v.size() - 2 * cut);
}

struct ScoreSummary {
  double mean = 0.0;
  double median = 0.0;
  double iqm = 0.0;
  std::size_t runs = 0;
};

inline ScoreSummary summarize_scores(const std::vector<double>& final_scores) {
  return {mean_of(final_scores), median_of(final_scores), interquartile_mean(final_scores), final_scores.size()};
}

inline constexpr const char* kSummaryHeader = "label,runs,mean,median,iqm";

inline std::string summary_row(const std::string& label, const ScoreSummary& s) {
  return label + "," + std::to_string(s.runs) + "," + detail::format_double(s.mean) + "," +
         detail::format_double(s.median) + "," + detail::format_double(s.iqm);
}

}  // namespace divo
