#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "vreid/feature_store.hpp"
#include "vreid/matrix.hpp"

namespace vreid {

/// Rows with norm at or below this are treated as degenerate zero vectors.
inline constexpr double kZeroNorm = 1e-12;

FeatureSet l2_normalize(const FeatureSet& fs);

/// Normalizes double-precision rows into a unit FeatureSet; a zero row is an error.
FeatureSet normalize_rows(const Matrix& rows);

Matrix to_matrix(const FeatureSet& fs);

struct CameraMeans {
  std::size_t dim = 0;
  std::map<int, std::vector<double>> means;
  std::map<int, std::size_t> counts;
};

CameraMeans camera_means(const FeatureSet& fs, std::span<const ImageMeta> metas);

/// g_i - alpha * mean(camera(i)) without re-normalization.
Matrix camera_corrected_rows(const FeatureSet& fs, std::span<const ImageMeta> metas,
                             const CameraMeans& means, double alpha);

FeatureSet subtract_camera_mean(const FeatureSet& fs, std::span<const ImageMeta> metas,
                                const CameraMeans& means, double alpha);

/// Tracklet grouping key. Images without a tracklet form singleton groups
/// keyed by their image_id.
struct TrackletKey {
  std::int64_t tracklet = kNoTracklet;
  std::string image_id;

  static TrackletKey of(const ImageMeta& m) {
    return m.has_tracklet() ? TrackletKey{m.tracklet_id, {}} : TrackletKey{kNoTracklet, m.image_id};
  }
  auto operator<=>(const TrackletKey&) const = default;
};

enum class AggregationMode { mean, weighted };

struct TrackletFeatures {
  AggregationMode mode = AggregationMode::mean;
  std::size_t dim = 0;
  std::map<TrackletKey, std::vector<double>> vectors;  // unit length
};

/// Softmax weights of each row within its tracklet, from cosine(frame, tracklet mean) / tau.
std::vector<double> tracklet_weights(const FeatureSet& fs, std::span<const ImageMeta> metas,
                                     double tau = 1.0);

TrackletFeatures tracklet_aggregate(const FeatureSet& fs, std::span<const ImageMeta> metas,
                                    AggregationMode mode, double tau = 1.0);

/// beta * f_i + (1 - beta) * t(tracklet(i)) without re-normalization.
Matrix fuse_tracklet_rows(const FeatureSet& fs, std::span<const ImageMeta> metas,
                          const TrackletFeatures& tf, double beta);

FeatureSet fuse_tracklet(const FeatureSet& fs, std::span<const ImageMeta> metas,
                         const TrackletFeatures& tf, double beta);

/// Averages the per-view features of each image. Rows follow the order of the
/// first set; output metadata carries View::original.
Dataset average_views(std::span<const Dataset> sets);

/// Concatenates per-model unit features and re-normalizes.
Dataset ensemble_features(std::span<const Dataset> model_sets);

}  // namespace vreid
