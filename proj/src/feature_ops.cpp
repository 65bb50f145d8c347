#include "vreid/feature_ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <unordered_map>

#include "vreid/error.hpp"

namespace vreid {

namespace {

void check_aligned(const FeatureSet& fs, std::span<const ImageMeta> metas, const char* op) {
  if (fs.count() != metas.size()) {
    throw Error(Errc::length_mismatch, std::string(op) + ": " + std::to_string(fs.count()) +
                                           " feature rows vs " + std::to_string(metas.size()) +
                                           " metadata records");
  }
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

std::vector<double> unit_or_throw(std::vector<double> v, const std::string& what) {
  const double n = std::sqrt(dot(v, v));
  if (!(n > kZeroNorm)) throw Error(Errc::zero_row, what + " has zero norm");
  for (auto& x : v) x /= n;
  return v;
}

// Row indices per tracklet, in first-appearance order of the key.
std::map<TrackletKey, std::vector<std::size_t>> group_by_tracklet(std::span<const ImageMeta> metas) {
  std::map<TrackletKey, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < metas.size(); ++i) groups[TrackletKey::of(metas[i])].push_back(i);
  return groups;
}

std::vector<double> member_mean(const FeatureSet& fs, const std::vector<std::size_t>& rows) {
  std::vector<double> mean(fs.dim(), 0.0);
  for (auto r : rows) {
    auto v = fs.row(r);
    for (std::size_t j = 0; j < fs.dim(); ++j) mean[j] += v[j];
  }
  for (auto& x : mean) x /= static_cast<double>(rows.size());
  return mean;
}

std::string describe(const TrackletKey& key) {
  return key.tracklet == kNoTracklet ? "untracked image '" + key.image_id + "'"
                                     : "tracklet " + std::to_string(key.tracklet);
}

}  // namespace

Matrix to_matrix(const FeatureSet& fs) {
  Matrix m(fs.count(), fs.dim());
  for (std::size_t i = 0; i < fs.count(); ++i) std::ranges::copy(fs.row(i), m.row(i).begin());
  return m;
}

FeatureSet normalize_rows(const Matrix& rows) {
  std::vector<float> out(rows.rows() * rows.cols());
  for (std::size_t i = 0; i < rows.rows(); ++i) {
    auto r = rows.row(i);
    const double n = std::sqrt(dot(r, r));
    if (!(n > kZeroNorm)) throw Error(Errc::zero_row, "row " + std::to_string(i) + " has zero norm");
    for (std::size_t j = 0; j < rows.cols(); ++j)
      out[i * rows.cols() + j] = static_cast<float>(r[j] / n);
  }
  // float rounding can push a row's norm off 1 by ~1e-7, well inside the unit tolerance
  return FeatureSet(rows.rows(), std::max<std::size_t>(rows.cols(), 1), std::move(out),
                    rows.rows() > 0);
}

FeatureSet l2_normalize(const FeatureSet& fs) {
  if (fs.count() == 0) return FeatureSet(0, fs.dim(), {}, false);
  return normalize_rows(to_matrix(fs));
}

CameraMeans camera_means(const FeatureSet& fs, std::span<const ImageMeta> metas) {
  check_aligned(fs, metas, "camera_means");
  CameraMeans cm;
  cm.dim = fs.dim();
  for (std::size_t i = 0; i < fs.count(); ++i) {
    auto& sum = cm.means[metas[i].camera_id];
    if (sum.empty()) sum.assign(fs.dim(), 0.0);
    auto v = fs.row(i);
    for (std::size_t j = 0; j < fs.dim(); ++j) sum[j] += v[j];
    ++cm.counts[metas[i].camera_id];
  }
  for (auto& [cam, sum] : cm.means) {
    const double n = static_cast<double>(cm.counts[cam]);
    for (auto& x : sum) x /= n;
  }
  return cm;
}

Matrix camera_corrected_rows(const FeatureSet& fs, std::span<const ImageMeta> metas,
                             const CameraMeans& means, double alpha) {
  check_aligned(fs, metas, "subtract_camera_mean");
  if (!std::isfinite(alpha)) throw Error(Errc::invalid_argument, "alpha must be finite");
  if (fs.count() > 0 && means.dim != fs.dim())
    throw Error(Errc::dim_mismatch, "camera means have dim " + std::to_string(means.dim) +
                                        ", features have dim " + std::to_string(fs.dim()));
  Matrix out(fs.count(), fs.dim());
  for (std::size_t i = 0; i < fs.count(); ++i) {
    auto it = means.means.find(metas[i].camera_id);
    if (it == means.means.end())
      throw Error(Errc::unknown_camera, "no camera mean for camera " +
                                            std::to_string(metas[i].camera_id) + " (image '" +
                                            metas[i].image_id + "')");
    auto v = fs.row(i);
    auto o = out.row(i);
    for (std::size_t j = 0; j < fs.dim(); ++j) o[j] = v[j] - alpha * it->second[j];
  }
  return out;
}

FeatureSet subtract_camera_mean(const FeatureSet& fs, std::span<const ImageMeta> metas,
                                const CameraMeans& means, double alpha) {
  return normalize_rows(camera_corrected_rows(fs, metas, means, alpha));
}

std::vector<double> tracklet_weights(const FeatureSet& fs, std::span<const ImageMeta> metas,
                                     double tau) {
  check_aligned(fs, metas, "tracklet_weights");
  if (!(tau > 0.0) || !std::isfinite(tau))
    throw Error(Errc::invalid_argument, "tracklet temperature must be positive");
  std::vector<double> weights(fs.count(), 0.0);
  for (const auto& [key, rows] : group_by_tracklet(metas)) {
    const auto mean = unit_or_throw(member_mean(fs, rows), "mean of " + describe(key));
    std::vector<double> logits;
    logits.reserve(rows.size());
    for (auto r : rows) {
      auto v = fs.row(r);
      double d = 0.0, sq = 0.0;
      for (std::size_t j = 0; j < fs.dim(); ++j) {
        d += v[j] * mean[j];
        sq += static_cast<double>(v[j]) * v[j];
      }
      logits.push_back(d / std::sqrt(sq) / tau);
    }
    const double top = *std::ranges::max_element(logits);
    double z = 0.0;
    for (auto& l : logits) z += (l = std::exp(l - top));
    for (std::size_t k = 0; k < rows.size(); ++k) weights[rows[k]] = logits[k] / z;
  }
  return weights;
}

TrackletFeatures tracklet_aggregate(const FeatureSet& fs, std::span<const ImageMeta> metas,
                                    AggregationMode mode, double tau) {
  check_aligned(fs, metas, "tracklet_aggregate");
  if (fs.count() > 0 && !fs.normalized())
    throw Error(Errc::not_normalized, "tracklet_aggregate expects normalized features");
  TrackletFeatures tf;
  tf.mode = mode;
  tf.dim = fs.dim();
  std::vector<double> weights;
  if (mode == AggregationMode::weighted) weights = tracklet_weights(fs, metas, tau);
  for (const auto& [key, rows] : group_by_tracklet(metas)) {
    std::vector<double> agg;
    if (mode == AggregationMode::mean) {
      agg = member_mean(fs, rows);
    } else {
      agg.assign(fs.dim(), 0.0);
      for (auto r : rows) {
        auto v = fs.row(r);
        for (std::size_t j = 0; j < fs.dim(); ++j) agg[j] += weights[r] * v[j];
      }
    }
    tf.vectors.emplace(key, unit_or_throw(std::move(agg), "aggregate of " + describe(key)));
  }
  return tf;
}

Matrix fuse_tracklet_rows(const FeatureSet& fs, std::span<const ImageMeta> metas,
                          const TrackletFeatures& tf, double beta) {
  check_aligned(fs, metas, "fuse_tracklet");
  if (!(beta >= 0.0 && beta <= 1.0))
    throw Error(Errc::invalid_argument, "beta must lie in [0, 1]");
  if (fs.count() > 0 && tf.dim != fs.dim())
    throw Error(Errc::dim_mismatch, "tracklet features and frame features differ in dim");
  Matrix out(fs.count(), fs.dim());
  for (std::size_t i = 0; i < fs.count(); ++i) {
    const auto key = TrackletKey::of(metas[i]);
    auto it = tf.vectors.find(key);
    if (it == tf.vectors.end())
      throw Error(Errc::missing_tracklet, "no aggregate for " + describe(key));
    auto v = fs.row(i);
    auto o = out.row(i);
    for (std::size_t j = 0; j < fs.dim(); ++j) o[j] = beta * v[j] + (1.0 - beta) * it->second[j];
  }
  return out;
}

FeatureSet fuse_tracklet(const FeatureSet& fs, std::span<const ImageMeta> metas,
                         const TrackletFeatures& tf, double beta) {
  const auto rows = fuse_tracklet_rows(fs, metas, tf, beta);
  // beta = 1 keeps the unit input as is, avoiding a lossy re-normalization
  if (beta == 1.0 && fs.normalized()) return fs;
  return normalize_rows(rows);
}

Dataset average_views(std::span<const Dataset> sets) {
  if (sets.empty()) throw Error(Errc::invalid_argument, "average_views needs at least one set");
  const Dataset& first = sets.front();
  const std::size_t dim = first.features.dim();
  std::vector<std::unordered_map<std::string, std::size_t>> index(sets.size());
  for (std::size_t s = 0; s < sets.size(); ++s) {
    const auto& set = sets[s];
    check_aligned(set.features, set.metas, "average_views");
    if (set.features.dim() != dim)
      throw Error(Errc::dim_mismatch, "view set " + std::to_string(s) + " has dim " +
                                          std::to_string(set.features.dim()) + ", expected " +
                                          std::to_string(dim));
    if (set.size() != first.size())
      throw Error(Errc::missing_image, "view set " + std::to_string(s) + " has " +
                                           std::to_string(set.size()) + " images, expected " +
                                           std::to_string(first.size()));
    for (std::size_t i = 0; i < set.size(); ++i) {
      if (!index[s].emplace(set.metas[i].image_id, i).second)
        throw Error(Errc::duplicate_image, "image '" + set.metas[i].image_id +
                                               "' appears twice in view set " + std::to_string(s));
    }
  }

  Matrix sum(first.size(), dim);
  std::vector<ImageMeta> metas;
  metas.reserve(first.size());
  for (std::size_t i = 0; i < first.size(); ++i) {
    const auto& id = first.metas[i].image_id;
    auto acc = sum.row(i);
    for (std::size_t s = 0; s < sets.size(); ++s) {
      auto it = index[s].find(id);
      if (it == index[s].end())
        throw Error(Errc::missing_image, "image '" + id + "' missing from view set " + std::to_string(s));
      if (sets[s].metas[it->second].camera_id != first.metas[i].camera_id)
        throw Error(Errc::misaligned, "image '" + id + "' has different cameras across views");
      auto v = sets[s].features.row(it->second);
      for (std::size_t j = 0; j < dim; ++j) acc[j] += v[j];
    }
    for (auto& x : acc) x /= static_cast<double>(sets.size());
    ImageMeta m = first.metas[i];
    m.view = View::original;
    metas.push_back(std::move(m));
  }
  if (first.size() == 0) return Dataset{FeatureSet::empty(dim), {}};
  return Dataset{normalize_rows(sum), std::move(metas)};
}

Dataset ensemble_features(std::span<const Dataset> model_sets) {
  if (model_sets.empty()) throw Error(Errc::invalid_argument, "ensemble needs at least one model");
  const Dataset& first = model_sets.front();
  std::size_t total_dim = 0;
  for (std::size_t s = 0; s < model_sets.size(); ++s) {
    const auto& set = model_sets[s];
    check_aligned(set.features, set.metas, "ensemble_features");
    if (set.size() != first.size())
      throw Error(Errc::misaligned, "model " + std::to_string(s) + " has " +
                                        std::to_string(set.size()) + " rows, expected " +
                                        std::to_string(first.size()));
    for (std::size_t i = 0; i < set.size(); ++i) {
      if (set.metas[i].image_id != first.metas[i].image_id)
        throw Error(Errc::misaligned, "model " + std::to_string(s) + " row " + std::to_string(i) +
                                          " is '" + set.metas[i].image_id + "', expected '" +
                                          first.metas[i].image_id + "'");
    }
    if (set.size() > 0 && !set.features.normalized())
      throw Error(Errc::not_normalized, "model " + std::to_string(s) + " is not normalized");
    const std::size_t d = set.features.dim();
    if (total_dim > std::numeric_limits<std::uint32_t>::max() - d)
      throw Error(Errc::invalid_argument, "ensemble dimension overflow");
    total_dim += d;
  }
  if (first.size() > 0 && total_dim > std::numeric_limits<std::size_t>::max() / first.size())
    throw Error(Errc::invalid_argument, "ensemble dimension overflow");

  Matrix cat(first.size(), total_dim);
  for (std::size_t i = 0; i < first.size(); ++i) {
    std::size_t offset = 0;
    auto o = cat.row(i);
    for (const auto& set : model_sets) {
      std::ranges::copy(set.features.row(i), o.begin() + static_cast<std::ptrdiff_t>(offset));
      offset += set.features.dim();
    }
  }
  if (first.size() == 0) return Dataset{FeatureSet::empty(total_dim), {}};
  return Dataset{normalize_rows(cat), first.metas};
}

}  // namespace vreid
