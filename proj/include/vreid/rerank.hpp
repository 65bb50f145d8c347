#pragma once

#include <cstddef>

#include "vreid/distance.hpp"
#include "vreid/feature_store.hpp"

namespace vreid {

struct RerankParams {
  int k1 = 7;
  int k2 = 2;
  double lambda = 0.6;
  /// Rows per block in the neighbor-list pass.
  std::size_t block_rows = 512;

  void validate() const;
};

/// k-reciprocal re-ranking over the union of query and gallery.
///
/// Neighbor lists are taken on raw distances with ties broken by ascending
/// index. Each point is encoded as a Gaussian-weighted (exp(-d)) L1-normalized
/// sparse vector over its expanded k-reciprocal set, smoothed by averaging over
/// its k2 nearest neighbors, and compared with the Jaccard distance
/// 1 - sum(min) / sum(max). The result is (1 - lambda) * jaccard + lambda * raw
/// restricted to query x gallery.
DistanceMatrix rerank(const Dataset& q, const Dataset& g, const RerankParams& params);

/// The Jaccard term alone (lambda ignored).
DistanceMatrix jaccard_only(const Dataset& q, const Dataset& g, const RerankParams& params);

/// Jaccard distances of a set against itself, N x N, symmetric with zero diagonal.
DistanceMatrix jaccard_self(const Dataset& all, const RerankParams& params);

// The same computations starting from a precomputed square distance matrix over
// the union, whose first `num_query` rows are the queries. Used when the base
// distance is not a plain feature distance (e.g. after camera/orientation fusion).
DistanceMatrix rerank_distances(const DistanceMatrix& all, std::size_t num_query,
                                const RerankParams& params);
DistanceMatrix jaccard_distances(const DistanceMatrix& all, std::size_t num_query,
                                 const RerankParams& params);
DistanceMatrix jaccard_self_distances(const DistanceMatrix& all, const RerankParams& params);

/// Rows of `q` followed by rows of `g`.
Dataset concat(const Dataset& q, const Dataset& g);

}  // namespace vreid
