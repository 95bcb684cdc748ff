#pragma once

// Run artifacts: manifest, per-batch metrics (JSON lines), report and the
// comparison table produced by `mmtta eval`.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "mmtta/config.hpp"

namespace mmtta {

inline constexpr const char* kVersion = "0.1.0";

/// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

struct RunManifest {
  Json config;  // resolved RunConfig, flags and environment applied
  std::string input_path;
  std::string input_sha256;
  std::uint64_t seed = 0;
  std::string version = kVersion;
  std::vector<std::string> outputs;  // relative to the out dir

  Json to_json() const;
  static RunManifest from_json(const Json& j);
};

/// Throws IoError when the file's hash differs from the manifest.
void verify_input(const RunManifest& manifest, const std::filesystem::path& input);

void write_json_file(const std::filesystem::path& path, const Json& j);

Json batch_record(const BatchMetrics& m, bool trace_partition);
Json aggregates_json(const RunAggregates& a);

class MetricsWriter {
 public:
  MetricsWriter(const std::filesystem::path& path, bool trace_partition);
  void write(const BatchMetrics& m);
  void close();

 private:
  std::filesystem::path path_;
  std::ofstream out_;
  bool trace_;
};

Json report_json(const RunReport& report, const RunManifest& manifest, bool trace_partition);

struct RunOptions {
  bool dump_cov = false;
  bool trace_partition = false;
};

/// The full `mmtta run` pipeline: checks the stream against the source
/// scenario, writes manifest.json before any work, then metrics.jsonl,
/// report.json, one GDABANK1 checkpoint per perspective and, with dump_cov,
/// GDACOV1 dumps. Every file lands inside `out_dir`.
RunManifest execute_run(const RunConfig& config, const std::filesystem::path& stream,
                        const std::filesystem::path& out_dir, const RunOptions& options);

/// Reloads the configuration recorded in a manifest.
RunConfig config_from_manifest(const RunManifest& manifest);

struct EvalRow {
  std::string report;
  std::string input_sha256;
  std::uint64_t samples = 0;
  double acc_source = 0.0;
  double acc_gda = 0.0;
  double acc_fused = 0.0;
  double delta_fused = 0.0;  // acc_fused minus the first row's acc_fused
};

/// Reads report.json files; a missing or malformed file raises IoError naming it.
std::vector<EvalRow> evaluate_reports(const std::vector<std::filesystem::path>& reports);
std::string format_eval_table(const std::vector<EvalRow>& rows);
Json eval_json(const std::vector<EvalRow>& rows);

}  // namespace mmtta
