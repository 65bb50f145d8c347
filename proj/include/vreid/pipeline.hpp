#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vreid/cluster.hpp"
#include "vreid/feature_ops.hpp"
#include "vreid/rerank.hpp"
#include "vreid/retrieval_eval.hpp"

namespace vreid {

enum class Stage {
  normalize,
  average_views,
  ensemble,
  camera_subtract,
  tracklet,
  fuse_eq4,
  rerank,
  camera_verify,
  rank,
  evaluate,
  cluster,
};

std::string_view to_string(Stage s);
Stage parse_stage(std::string_view name);
/// Parses "normalize,rerank,rank".
std::vector<Stage> parse_stage_list(std::string_view comma_list);

enum class EnsembleMode { concat, distance_mean };

struct InputSide {
  std::filesystem::path features;
  std::vector<std::filesystem::path> views;
  std::vector<std::filesystem::path> models;
  std::optional<std::filesystem::path> camera_aux;
  std::optional<std::filesystem::path> orientation_aux;
};

struct PipelineParams {
  double alpha = 0.18;
  double lambda1 = 0.1;
  double lambda2 = 0.05;
  RerankParams rerank{};
  AggregationMode tracklet_mode = AggregationMode::weighted;
  double tracklet_beta = 0.0;
  double tau = 1.0;
  EnsembleMode ensemble_mode = EnsembleMode::concat;
  std::size_t top_k = 100;
  std::size_t top_k_map = 100;
  bool i2t = false;
  /// Unset: same-camera matches count as relevant unless camera_verify ran.
  std::optional<bool> same_camera_relevant;
};

struct ClusterConfig {
  std::optional<std::filesystem::path> input;  // defaults to query + gallery
  double alpha = 0.18;
  double beta = 0.0005;
  RerankParams rerank{};
  std::vector<double> eps;
  int min_samples = 2;
  ClusterDistance distance = ClusterDistance::jaccard;
};

struct PipelineConfig {
  std::optional<InputSide> query;
  std::optional<InputSide> gallery;
  std::vector<Stage> stages;
  PipelineParams params;
  ClusterConfig cluster;
};

/// Parses and validates a JSON config; relative paths resolve against the
/// config file's directory. Throws Error(Errc::config_error) naming the field.
PipelineConfig load_config(const std::filesystem::path& path);
PipelineConfig parse_config(std::string_view json_text, const std::filesystem::path& base_dir);

/// Stage ordering and input requirements. Throws Error(Errc::config_error).
void validate(const PipelineConfig& config);

struct StageRow {
  std::string stage;
  double mAP = 0.0;
  double rank1 = 0.0;
};

struct PipelineResult {
  std::vector<StageRow> table;  // filled when ground truth is available
  std::optional<EvalReport> report;
  std::vector<std::filesystem::path> label_files;
};

/// Runs the configured stages in order, checkpointing each stage's output to
/// `workdir/NN_<stage>/`. Progress lines go to `log` when given.
PipelineResult run_pipeline(const PipelineConfig& config, const std::filesystem::path& workdir,
                            std::ostream* log = nullptr);

}  // namespace vreid
