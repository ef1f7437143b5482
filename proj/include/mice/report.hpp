#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mice/config.hpp"
#include "mice/data.hpp"
#include "mice/metrics.hpp"
#include "mice/trainer.hpp"

namespace mice {

inline constexpr const char* kLibraryVersion = "1.0.0";
inline constexpr int kReportSchemaVersion = 1;

/// Everything a CLI run reports. Serialized as JSON; the layout is
/// described by docs/run_report.schema.json.
struct RunReport {
  std::string command;
  std::optional<TrainConfig> config;
  std::uint64_t seed = 0;
  std::size_t num_points = 0;
  std::size_t input_dim = 0;
  bool has_truth = false;
  std::vector<EpochMetrics> epochs;
  std::vector<Label> labels;  // 0-based, written 1-based
  std::optional<ClusterScores> final_scores;
  double wall_clock_seconds = 0.0;
};

/// Serialized JSON text (pretty-printed, stable key order).
std::string report_json(const RunReport& report);

/// Same text without the wall-clock field, for reproducibility checks.
std::string report_json_without_timing(const RunReport& report);

void write_report(const RunReport& report, const std::string& path);

/// One JSON object per line, one line per epoch.
std::string epoch_log_ndjson(const std::vector<EpochMetrics>& epochs);

}  // namespace mice
