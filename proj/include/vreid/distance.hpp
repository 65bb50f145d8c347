#pragma once

#include <cstddef>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vreid/feature_store.hpp"

namespace vreid {

enum class DistanceKind { raw, jaccard, reranked, fused };

std::string_view to_string(DistanceKind k);
DistanceKind parse_distance_kind(std::string_view text);

/// Entries excluded from ranking (camera verification) hold this value.
inline constexpr double kMasked = std::numeric_limits<double>::infinity();

/// Dense Q x G distance matrix with row/column image ids.
///
/// Entries are finite except for kMasked. Raw matrices hold squared Euclidean
/// distances of unit vectors and therefore lie in [0, 4]; fused matrices may be
/// negative.
class DistanceMatrix {
 public:
  DistanceMatrix() = default;
  DistanceMatrix(std::vector<std::string> row_ids, std::vector<std::string> col_ids,
                 std::vector<double> data, DistanceKind kind);

  std::size_t rows() const noexcept { return row_ids_.size(); }
  std::size_t cols() const noexcept { return col_ids_.size(); }
  DistanceKind kind() const noexcept { return kind_; }

  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols() + j]; }
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols(), cols()}; }

  const std::vector<double>& data() const noexcept { return data_; }
  const std::vector<std::string>& row_ids() const noexcept { return row_ids_; }
  const std::vector<std::string>& col_ids() const noexcept { return col_ids_; }

  bool same_shape(const DistanceMatrix& o) const {
    return row_ids_ == o.row_ids_ && col_ids_ == o.col_ids_;
  }

  /// Sub-matrix over the given row and column index ranges.
  DistanceMatrix block(std::size_t row0, std::size_t nrows, std::size_t col0,
                       std::size_t ncols) const;

  friend bool operator==(const DistanceMatrix&, const DistanceMatrix&) = default;

 private:
  std::vector<std::string> row_ids_;
  std::vector<std::string> col_ids_;
  std::vector<double> data_;
  DistanceKind kind_ = DistanceKind::raw;
};

std::vector<std::string> image_ids(std::span<const ImageMeta> metas);

/// Squared Euclidean distance 2 - 2<q_i, g_j>, clamped to [0, 4]. Pairs that
/// refer to the same image id get exactly 0.
DistanceMatrix pairwise(const Dataset& q, const Dataset& g);

/// Camera/orientation fusion: D = D_r - lambda1 * D_c - lambda2 * D_o.
DistanceMatrix fuse_distances(const DistanceMatrix& d_r, const DistanceMatrix& d_c,
                              const DistanceMatrix& d_o, double lambda1, double lambda2);

/// Entrywise mean of same-shaped matrices (distance-level ensembling).
DistanceMatrix average_distances(std::span<const DistanceMatrix> mats);

// Checkpoint dump: f32le row-major payload plus a JSON sidecar manifest and
// one-id-per-line row/column id files.
void save_distances(const DistanceMatrix& d, const std::filesystem::path& manifest_path);
DistanceMatrix load_distances(const std::filesystem::path& manifest_path);

}  // namespace vreid
