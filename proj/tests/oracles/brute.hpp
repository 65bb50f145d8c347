#pragma once

// Direct, loop-by-loop recomputations used as independent oracles.

#include <cmath>
#include <cstddef>
#include <vector>

#include "vreid/feature_store.hpp"

namespace vreid::oracle {

using Rows = std::vector<std::vector<double>>;

inline Rows rows_of(const FeatureSet& fs) {
  Rows out(fs.count(), std::vector<double>(fs.dim()));
  for (std::size_t i = 0; i < fs.count(); ++i)
    for (std::size_t j = 0; j < fs.dim(); ++j) out[i][j] = fs.row(i)[j];
  return out;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline std::vector<double> normalized(std::vector<double> v) {
  const double n = std::sqrt(dot(v, v));
  for (auto& x : v) x /= n;
  return v;
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  return dot(a, b) / std::sqrt(dot(a, a) * dot(b, b));
}

/// Squared Euclidean distance by explicit differences.
inline double sq_euclidean(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

/// Pairwise F1 of a predicted partition (-1 = unassigned) against truth.
inline double pairwise_f1(const std::vector<int>& predicted, const std::vector<int>& truth) {
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    for (std::size_t j = i + 1; j < truth.size(); ++j) {
      const bool same = truth[i] == truth[j];
      const bool pred = predicted[i] != -1 && predicted[i] == predicted[j];
      tp += same && pred;
      fp += !same && pred;
      fn += same && !pred;
    }
  }
  return tp == 0 ? 0.0 : 2 * tp / (2 * tp + fp + fn);
}

}  // namespace vreid::oracle
