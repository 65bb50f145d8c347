#pragma once

// Straightforward dense k-reciprocal re-ranking written directly from the
// algorithm description: full argsorts, std::set neighbor sets and dense
// encodings. Shares no code with the library implementation.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <vector>

namespace vreid::oracle {

struct RerankResult {
  std::vector<std::vector<double>> final_dist;  // Q x G
  std::vector<std::vector<double>> jaccard;     // Q x G
};

/// `dist` is the square distance matrix over query rows followed by gallery rows.
inline RerankResult reference_rerank(const std::vector<std::vector<double>>& dist,
                                     std::size_t num_query, int k1, int k2, double lambda) {
  const std::size_t n = dist.size();

  // (a) full ranking of every row, ties by ascending index
  std::vector<std::vector<std::size_t>> ranking(n);
  for (std::size_t i = 0; i < n; ++i) {
    ranking[i].resize(n);
    std::iota(ranking[i].begin(), ranking[i].end(), 0);
    std::stable_sort(ranking[i].begin(), ranking[i].end(),
                     [&](std::size_t a, std::size_t b) { return dist[i][a] < dist[i][b]; });
  }
  auto knn = [&](std::size_t i, int k) {
    return std::set<std::size_t>(ranking[i].begin(), ranking[i].begin() + k + 1);
  };
  // (b) k-reciprocal neighbors
  auto recip = [&](std::size_t p, int k) {
    std::set<std::size_t> out;
    for (std::size_t q : knn(p, k))
      if (knn(q, k).count(p)) out.insert(q);
    return out;
  };

  // (c), (d) expanded sets and Gaussian encodings
  std::vector<std::vector<double>> v(n, std::vector<double>(n, 0.0));
  for (std::size_t p = 0; p < n; ++p) {
    const auto r = recip(p, k1);
    std::set<std::size_t> expanded = r;
    for (std::size_t q : r) {
      const auto rq = recip(q, k1 / 2);
      std::size_t common = 0;
      for (std::size_t x : rq) common += r.count(x);
      if (static_cast<double>(common) * 3.0 >= static_cast<double>(rq.size()) * 2.0)
        expanded.insert(rq.begin(), rq.end());
    }
    double z = 0.0;
    for (std::size_t j : expanded) z += std::exp(-dist[p][j]);
    for (std::size_t j : expanded) v[p][j] = std::exp(-dist[p][j]) / z;
  }

  // (e) local query expansion over the k2 nearest (self included)
  std::vector<std::vector<double>> vqe(n, std::vector<double>(n, 0.0));
  for (std::size_t p = 0; p < n; ++p) {
    for (int r = 0; r < k2; ++r)
      for (std::size_t j = 0; j < n; ++j) vqe[p][j] += v[ranking[p][r]][j];
    for (auto& x : vqe[p]) x /= k2;
  }

  // (f), (g)
  RerankResult out;
  const std::size_t g = n - num_query;
  out.final_dist.assign(num_query, std::vector<double>(g));
  out.jaccard.assign(num_query, std::vector<double>(g));
  for (std::size_t i = 0; i < num_query; ++i) {
    for (std::size_t c = 0; c < g; ++c) {
      const std::size_t j = num_query + c;
      double mn = 0.0, mx = 0.0;
      for (std::size_t t = 0; t < n; ++t) {
        mn += std::min(vqe[i][t], vqe[j][t]);
        mx += std::max(vqe[i][t], vqe[j][t]);
      }
      const double dj = 1.0 - mn / mx;
      out.jaccard[i][c] = dj;
      out.final_dist[i][c] = (1.0 - lambda) * dj + lambda * dist[i][j];
    }
  }
  return out;
}

}  // namespace vreid::oracle
