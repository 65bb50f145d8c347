#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "vreid/distance.hpp"
#include "vreid/feature_store.hpp"
#include "vreid/rerank.hpp"

namespace vreid {

inline constexpr int kNoise = -1;

struct PseudoLabels {
  std::vector<int> labels;  // 0..num_clusters-1, or kNoise
  int num_clusters = 0;
};

struct DbscanParams {
  double eps = 0.6;
  int min_samples = 2;

  void validate() const;
};

/// DBSCAN over a precomputed square, symmetric distance matrix.
///
/// A point is core when at least min_samples points (itself included) lie
/// within eps. Clusters are grown breadth-first from the lowest-index
/// unassigned core point; a border point joins the first cluster that reaches
/// it.
PseudoLabels dbscan(const DistanceMatrix& d, const DbscanParams& params);

enum class ClusterDistance { jaccard, raw };

struct PseudoLabelParams {
  double alpha = 0.18;
  double beta = 0.0005;
  RerankParams rerank{};
  DbscanParams dbscan{};
  ClusterDistance distance = ClusterDistance::jaccard;
};

/// l2_normalize -> camera-mean subtraction -> tracklet fusion -> distance -> DBSCAN.
PseudoLabels generate_pseudo_labels(const Dataset& ds, const PseudoLabelParams& params);

/// Writes `image_id,label` rows (with header), -1 marking noise.
void write_labels(const std::filesystem::path& path, std::span<const ImageMeta> metas,
                  const PseudoLabels& labels);

}  // namespace vreid
