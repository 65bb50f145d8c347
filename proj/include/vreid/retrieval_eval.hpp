#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "vreid/distance.hpp"
#include "vreid/feature_store.hpp"

namespace vreid {

/// Masks (sets to kMasked) every pair whose query and gallery share a camera.
/// Throws empty-candidates when a query has no unmasked gallery entry left.
DistanceMatrix camera_verify_mask(const DistanceMatrix& d, std::span<const ImageMeta> q_metas,
                                  std::span<const ImageMeta> g_metas);

struct RankEntry {
  std::size_t gallery_index = 0;
  double score = 0.0;  // ranking key; the tracklet score in I2T mode
};

struct RankList {
  std::vector<std::string> query_ids;
  std::vector<std::string> gallery_ids;
  std::vector<std::vector<RankEntry>> entries;  // per query, ascending score
};

struct RankOptions {
  std::size_t top_k = 100;
  /// Image-to-track: gallery tracklets scored by their best member, then
  /// expanded back to member images.
  bool i2t = false;
};

RankList rank(const DistanceMatrix& d, const RankOptions& options,
              std::span<const ImageMeta> g_metas);

struct EvalOptions {
  /// AP truncation depth; 0 evaluates the full list.
  std::size_t top_k_map = 100;
  /// Drop same-camera ground-truth matches from both the list and the relevant
  /// count (the convention used when camera verification is active).
  bool exclude_same_camera = false;
};

struct QueryAp {
  std::string query_id;
  double ap = 0.0;
};

struct EvalReport {
  double mAP = 0.0;
  std::vector<double> cmc;  // cmc[k] = fraction with a hit within the top k+1
  std::vector<QueryAp> per_query_ap;
  std::size_t num_queries = 0;
  std::size_t skipped_queries = 0;  // no relevant gallery item

  double rank_at(std::size_t k) const {
    if (cmc.empty() || k == 0) return 0.0;
    return cmc[std::min(k, cmc.size()) - 1];
  }
};

EvalReport evaluate(const RankList& rl, std::span<const ImageMeta> q_metas,
                    std::span<const ImageMeta> g_metas, const EvalOptions& options);

/// One line per query: `query_id: g1 g2 ...`.
void write_rank_file(const std::filesystem::path& path, const RankList& rl);

/// JSON with mAP, CMC@1/5/10, the full CMC curve and per-query AP.
void write_report(const std::filesystem::path& path, const EvalReport& report);

}  // namespace vreid
