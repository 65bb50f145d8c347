#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace vreid {

/// Dense row-major matrix of embeddings (N rows x D columns, 32-bit floats).
///
/// Immutable once constructed. The constructor enforces that every value is
/// finite and, when `normalized` is set, that every row has unit norm.
class FeatureSet {
 public:
  static constexpr double kUnitTolerance = 1e-5;

  FeatureSet() = default;
  FeatureSet(std::size_t count, std::size_t dim, std::vector<float> data,
             bool normalized = false);

  static FeatureSet empty(std::size_t dim) { return FeatureSet(0, dim, {}); }

  std::size_t count() const noexcept { return count_; }
  std::size_t dim() const noexcept { return dim_; }
  bool normalized() const noexcept { return normalized_; }

  std::span<const float> row(std::size_t i) const {
    return {data_.data() + i * dim_, dim_};
  }
  const std::vector<float>& data() const noexcept { return data_; }

  friend bool operator==(const FeatureSet&, const FeatureSet&) = default;

 private:
  std::size_t count_ = 0;
  std::size_t dim_ = 1;
  bool normalized_ = false;
  std::vector<float> data_;
};

/// True when every row's Euclidean norm lies within kUnitTolerance of 1.
bool rows_are_unit(std::size_t count, std::size_t dim,
                   std::span<const float> data);

enum class View { original, cropped, flipped_original, flipped_cropped };

std::string_view to_string(View v);
View parse_view(std::string_view text);

inline constexpr std::int64_t kNoTracklet = -1;

struct ImageMeta {
  std::string image_id;
  int camera_id = 0;
  std::int64_t tracklet_id = kNoTracklet;
  std::optional<int> identity;
  View view = View::original;

  bool has_tracklet() const noexcept { return tracklet_id != kNoTracklet; }

  friend bool operator==(const ImageMeta&, const ImageMeta&) = default;
};

/// Feature rows paired with their per-row metadata; row i <-> metas[i].
struct Dataset {
  FeatureSet features;
  std::vector<ImageMeta> metas;

  std::size_t size() const noexcept { return metas.size(); }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Checks unique (image_id, view) pairs, id ranges and that every tracklet
/// lives in a single camera. Throws vreid::Error on the first violation.
void validate_metas(std::span<const ImageMeta> metas);

struct Manifest {
  std::size_t dim = 0;
  std::size_t count = 0;
  std::filesystem::path data_path;
  std::filesystem::path metadata_path;
  std::string byte_order = "little";
  std::string element_type = "f32";
};

Dataset ingest(const std::filesystem::path& manifest_path);

/// Writes `<stem>.f32`, `<stem>.csv` and the manifest itself at `out_path`.
Manifest export_dataset(const FeatureSet& fs, std::span<const ImageMeta> metas,
                        const std::filesystem::path& out_path);
inline Manifest export_dataset(const Dataset& ds,
                               const std::filesystem::path& out_path) {
  return export_dataset(ds.features, ds.metas, out_path);
}

// Raw little-endian f32 matrix payloads, shared with the distance dumps.
void write_f32le(const std::filesystem::path& path, std::span<const float> values);
std::vector<float> read_f32le(const std::filesystem::path& path,
                              std::size_t expected_count);

std::vector<ImageMeta> read_metadata_csv(const std::filesystem::path& path);
void write_metadata_csv(const std::filesystem::path& path,
                        std::span<const ImageMeta> metas);

struct SynthParams {
  int num_ids = 40;
  int cams = 4;
  int tracklets_per_id = 2;
  int frames_per_tracklet = 5;
  int dim = 32;
  double camera_offset_scale = 0.5;
  double noise_scale = 0.15;
  std::uint64_t seed = 1;
};

/// Synthetic re-identification bench: identity prototypes plus a per-camera
/// offset plus isotropic noise, normalized. Pure function of `p`.
Dataset synth_generate(const SynthParams& p);

/// Unit prototype per identity, as used by synth_generate for the same seed.
std::vector<std::vector<double>> synth_prototypes(int num_ids, int dim,
                                                  std::uint64_t seed);

enum class AuxKind { camera, orientation };

/// Auxiliary embeddings aligned with `ds`: a camera embedding (one-hot camera
/// code plus noise) or an orientation embedding (a random direction per
/// tracklet plus noise). Stand-ins for the outputs of external camera and
/// orientation classifiers.
Dataset synth_aux(const Dataset& ds, AuxKind kind, int dim, double noise_scale,
                  std::uint64_t seed);

/// Query = every frame of each identity's first tracklet; gallery = the rest.
std::pair<Dataset, Dataset> split_query_gallery(const Dataset& ds);

}  // namespace vreid
