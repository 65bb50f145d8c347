#include "vreid/cluster.hpp"

#include <cmath>
#include <deque>
#include <fstream>

#include "vreid/error.hpp"
#include "vreid/feature_ops.hpp"

namespace vreid {

void DbscanParams::validate() const {
  if (!(eps > 0.0) || !std::isfinite(eps)) throw Error(Errc::invalid_argument, "dbscan: eps must be positive");
  if (min_samples < 1) throw Error(Errc::invalid_argument, "dbscan: min_samples must be at least 1");
}

PseudoLabels dbscan(const DistanceMatrix& d, const DbscanParams& params) {
  params.validate();
  const std::size_t n = d.rows();
  if (d.cols() != n) throw Error(Errc::shape_mismatch, "dbscan: distance matrix must be square");
  for (std::size_t i = 0; i < n; ++i) {
    if (std::abs(d(i, i)) > 1e-6)
      throw Error(Errc::asymmetric, "dbscan: nonzero diagonal at " + std::to_string(i));
    for (std::size_t j = i + 1; j < n; ++j) {
      const double a = d(i, j), b = d(j, i);
      if (a != b && !(std::abs(a - b) <= 1e-6))
        throw Error(Errc::asymmetric, "dbscan: distance matrix is not symmetric at (" +
                                          std::to_string(i) + ", " + std::to_string(j) + ")");
    }
  }

  std::vector<std::vector<std::size_t>> neighbors(n);
  const auto nn = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(dynamic, 16)
  for (std::ptrdiff_t ii = 0; ii < nn; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    auto row = d.row(i);
    for (std::size_t j = 0; j < n; ++j)
      if (row[j] <= params.eps) neighbors[i].push_back(j);
  }
  std::vector<char> core(n);
  for (std::size_t i = 0; i < n; ++i)
    core[i] = neighbors[i].size() >= static_cast<std::size_t>(params.min_samples);

  PseudoLabels out;
  out.labels.assign(n, kNoise);
  std::deque<std::size_t> frontier;
  for (std::size_t seed = 0; seed < n; ++seed) {
    if (!core[seed] || out.labels[seed] != kNoise) continue;
    const int label = out.num_clusters++;
    out.labels[seed] = label;
    frontier.push_back(seed);
    while (!frontier.empty()) {
      const std::size_t p = frontier.front();
      frontier.pop_front();
      for (std::size_t q : neighbors[p]) {
        if (out.labels[q] != kNoise) continue;
        out.labels[q] = label;
        if (core[q]) frontier.push_back(q);
      }
    }
  }
  return out;
}

PseudoLabels generate_pseudo_labels(const Dataset& ds, const PseudoLabelParams& params) {
  const FeatureSet unit = l2_normalize(ds.features);
  const CameraMeans means = camera_means(unit, ds.metas);
  const FeatureSet corrected = subtract_camera_mean(unit, ds.metas, means, params.alpha);
  const TrackletFeatures tf = tracklet_aggregate(corrected, ds.metas, AggregationMode::mean);
  const Dataset fused{fuse_tracklet(corrected, ds.metas, tf, params.beta), ds.metas};
  const DistanceMatrix dist = params.distance == ClusterDistance::jaccard
                                  ? jaccard_self(fused, params.rerank)
                                  : pairwise(fused, fused);
  return dbscan(dist, params.dbscan);
}

void write_labels(const std::filesystem::path& path, std::span<const ImageMeta> metas,
                  const PseudoLabels& labels) {
  if (metas.size() != labels.labels.size())
    throw Error(Errc::length_mismatch, "write_labels: metadata and labels differ in length");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(Errc::io_failure, "cannot open " + path.string() + " for writing");
  out << "image_id,label\n";
  for (std::size_t i = 0; i < metas.size(); ++i) out << metas[i].image_id << ',' << labels.labels[i] << '\n';
}

}  // namespace vreid
