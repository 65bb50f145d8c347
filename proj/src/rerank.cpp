#include "vreid/rerank.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>

#include "vreid/error.hpp"

namespace vreid {

void RerankParams::validate() const {
  if (k1 <= 0) throw Error(Errc::invalid_argument, "rerank: k1 must be positive");
  if (k2 < 1) throw Error(Errc::invalid_argument, "rerank: k2 must be at least 1");
  if (k2 > k1) throw Error(Errc::invalid_argument, "rerank: k2 must not exceed k1");
  if (!(lambda >= 0.0 && lambda <= 1.0))
    throw Error(Errc::invalid_argument, "rerank: lambda must lie in [0, 1]");
  if (block_rows == 0) throw Error(Errc::invalid_argument, "rerank: block_rows must be positive");
}

Dataset concat(const Dataset& q, const Dataset& g) {
  if (q.features.dim() != g.features.dim())
    throw Error(Errc::dim_mismatch, "concat: query dim " + std::to_string(q.features.dim()) +
                                        " vs gallery dim " + std::to_string(g.features.dim()));
  std::vector<float> data(q.features.data());
  data.insert(data.end(), g.features.data().begin(), g.features.data().end());
  std::vector<ImageMeta> metas(q.metas);
  metas.insert(metas.end(), g.metas.begin(), g.metas.end());
  const std::size_t n = metas.size();
  const bool unit = (q.size() == 0 || q.features.normalized()) &&
                    (g.size() == 0 || g.features.normalized()) && n > 0;
  return Dataset{FeatureSet(n, q.features.dim(), std::move(data), unit), std::move(metas)};
}

namespace {

using Index = std::uint32_t;

struct SparseRow {
  std::vector<Index> idx;  // ascending
  std::vector<double> val;
  double sum = 0.0;
};

class Encoder {
 public:
  Encoder(const DistanceMatrix& all, const RerankParams& p) : d_(all), p_(p), n_(all.rows()) {
    build_neighbors();
    build_encodings();
    if (p_.k2 > 1) expand_queries();
    build_inverted_index();
  }

  /// Jaccard distance of row `a` against each row in `cols`.
  void jaccard_row(std::size_t a, std::span<const std::size_t> cols, std::vector<double>& acc,
                   double* out) const {
    std::fill(acc.begin(), acc.end(), 0.0);
    const SparseRow& va = v_[a];
    for (std::size_t t = 0; t < va.idx.size(); ++t) {
      const double x = va.val[t];
      for (const auto& [row, y] : inverted_[va.idx[t]]) acc[row] += std::min(x, y);
    }
    for (std::size_t c = 0; c < cols.size(); ++c) {
      const std::size_t b = cols[c];
      const double inter = acc[b];
      const double uni = va.sum + v_[b].sum - inter;
      double dj = 1.0;
      if (uni > 0.0) dj = std::clamp(1.0 - inter / uni, 0.0, 1.0);
      else if (a == b) dj = 0.0;
      out[c] = dj;
    }
  }

  std::size_t size() const { return n_; }

 private:
  void build_neighbors() {
    const std::size_t keep = static_cast<std::size_t>(p_.k1) + 1;
    nn_.assign(n_, {});
    for (std::size_t start = 0; start < n_; start += p_.block_rows) {
      const auto stop = static_cast<std::ptrdiff_t>(std::min(n_, start + p_.block_rows));
#pragma omp parallel
      {
        std::vector<Index> order(n_);
#pragma omp for schedule(static)
        for (std::ptrdiff_t i = static_cast<std::ptrdiff_t>(start); i < stop; ++i) {
          auto row = d_.row(static_cast<std::size_t>(i));
          std::iota(order.begin(), order.end(), Index{0});
          std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep),
                            order.end(), [&](Index a, Index b) {
                              return row[a] < row[b] || (row[a] == row[b] && a < b);
                            });
          nn_[static_cast<std::size_t>(i)].assign(order.begin(),
                                                  order.begin() + static_cast<std::ptrdiff_t>(keep));
        }
      }
    }
  }

  // Members of p's first k+1 neighbors that also hold p among their first k+1.
  std::vector<Index> reciprocal(Index p, std::size_t k) const {
    std::vector<Index> out;
    const auto& fwd = nn_[p];
    for (std::size_t r = 0; r <= k; ++r) {
      const Index c = fwd[r];
      const auto& back = nn_[c];
      if (std::find(back.begin(), back.begin() + static_cast<std::ptrdiff_t>(k + 1), p) !=
          back.begin() + static_cast<std::ptrdiff_t>(k + 1))
        out.push_back(c);
    }
    return out;
  }

  void build_encodings() {
    v_.assign(n_, {});
    const std::size_t k1 = static_cast<std::size_t>(p_.k1);
    const std::size_t half = k1 / 2;
    const auto n = static_cast<std::ptrdiff_t>(n_);
#pragma omp parallel for schedule(dynamic, 16)
    for (std::ptrdiff_t ii = 0; ii < n; ++ii) {
      const auto p = static_cast<Index>(ii);
      const auto base = reciprocal(p, k1);
      std::vector<Index> sorted_base(base);
      std::ranges::sort(sorted_base);
      std::vector<Index> expanded(base);
      for (Index c : base) {
        auto cand = reciprocal(c, half);
        std::size_t inter = 0;
        for (Index x : cand) inter += std::ranges::binary_search(sorted_base, x) ? 1 : 0;
        if (3 * inter >= 2 * cand.size()) expanded.insert(expanded.end(), cand.begin(), cand.end());
      }
      std::ranges::sort(expanded);
      expanded.erase(std::unique(expanded.begin(), expanded.end()), expanded.end());

      SparseRow row;
      row.idx = expanded;
      row.val.reserve(expanded.size());
      auto dist = d_.row(p);
      double total = 0.0;
      for (Index j : expanded) {
        const double w = std::exp(-dist[j]);
        row.val.push_back(w);
        total += w;
      }
      for (auto& w : row.val) w /= total;
      row.sum = std::accumulate(row.val.begin(), row.val.end(), 0.0);
      v_[p] = std::move(row);
    }
  }

  void expand_queries() {
    std::vector<SparseRow> out(n_);
    const std::size_t k2 = static_cast<std::size_t>(p_.k2);
    const auto n = static_cast<std::ptrdiff_t>(n_);
#pragma omp parallel for schedule(dynamic, 16)
    for (std::ptrdiff_t ii = 0; ii < n; ++ii) {
      const auto p = static_cast<std::size_t>(ii);
      std::vector<std::pair<Index, double>> items;
      for (std::size_t r = 0; r < k2; ++r) {
        const auto& src = v_[nn_[p][r]];
        for (std::size_t t = 0; t < src.idx.size(); ++t) items.emplace_back(src.idx[t], src.val[t]);
      }
      std::ranges::stable_sort(items, {}, &std::pair<Index, double>::first);
      SparseRow row;
      for (const auto& [j, x] : items) {
        if (row.idx.empty() || row.idx.back() != j) {
          row.idx.push_back(j);
          row.val.push_back(x);
        } else {
          row.val.back() += x;
        }
      }
      for (auto& x : row.val) x /= static_cast<double>(k2);
      row.sum = std::accumulate(row.val.begin(), row.val.end(), 0.0);
      out[p] = std::move(row);
    }
    v_ = std::move(out);
  }

  void build_inverted_index() {
    inverted_.assign(n_, {});
    for (std::size_t r = 0; r < n_; ++r) {
      const auto& row = v_[r];
      for (std::size_t t = 0; t < row.idx.size(); ++t)
        if (row.val[t] != 0.0) inverted_[row.idx[t]].emplace_back(static_cast<Index>(r), row.val[t]);
    }
  }

  const DistanceMatrix& d_;
  RerankParams p_;
  std::size_t n_;
  std::vector<std::vector<Index>> nn_;
  std::vector<SparseRow> v_;
  std::vector<std::vector<std::pair<Index, double>>> inverted_;
};

void check_union(const DistanceMatrix& all, std::size_t num_query, const RerankParams& p) {
  p.validate();
  if (all.rows() != all.cols())
    throw Error(Errc::shape_mismatch, "rerank: union distance matrix must be square");
  if (num_query > all.rows()) throw Error(Errc::shape_mismatch, "rerank: more queries than rows");
  for (double x : all.data())
    if (x == kMasked) throw Error(Errc::invalid_argument, "rerank: input contains masked entries");
  if (all.rows() > std::numeric_limits<Index>::max())
    throw Error(Errc::invalid_argument, "rerank: too many points");
}

void check_gallery(std::size_t gallery, const RerankParams& p) {
  if (gallery < static_cast<std::size_t>(p.k1) + 1)
    throw Error(Errc::gallery_too_small, "rerank: gallery of " + std::to_string(gallery) +
                                             " images is too small for k1 = " + std::to_string(p.k1));
}

std::vector<double> jaccard_block(const Encoder& enc, std::span<const std::size_t> rows,
                                  std::span<const std::size_t> cols) {
  std::vector<double> out(rows.size() * cols.size());
  const auto nrows = static_cast<std::ptrdiff_t>(rows.size());
#pragma omp parallel
  {
    std::vector<double> acc(enc.size());
#pragma omp for schedule(dynamic, 8)
    for (std::ptrdiff_t r = 0; r < nrows; ++r) {
      const auto i = static_cast<std::size_t>(r);
      enc.jaccard_row(rows[i], cols, acc, out.data() + i * cols.size());
    }
  }
  return out;
}

std::vector<std::size_t> range(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> v(end - begin);
  std::iota(v.begin(), v.end(), begin);
  return v;
}

void require_normalized(const Dataset& ds, const char* which) {
  if (ds.size() > 0 && !ds.features.normalized())
    throw Error(Errc::not_normalized, std::string("rerank: ") + which + " features are not normalized");
}

}  // namespace

DistanceMatrix jaccard_distances(const DistanceMatrix& all, std::size_t num_query,
                                 const RerankParams& params) {
  check_union(all, num_query, params);
  const std::size_t n = all.rows();
  check_gallery(n - num_query, params);
  const Encoder enc(all, params);
  const auto rows = range(0, num_query);
  const auto cols = range(num_query, n);
  auto data = jaccard_block(enc, rows, cols);
  return DistanceMatrix({all.row_ids().begin(), all.row_ids().begin() + static_cast<std::ptrdiff_t>(num_query)},
                        {all.col_ids().begin() + static_cast<std::ptrdiff_t>(num_query), all.col_ids().end()},
                        std::move(data), DistanceKind::jaccard);
}

DistanceMatrix rerank_distances(const DistanceMatrix& all, std::size_t num_query,
                                const RerankParams& params) {
  const auto jac = jaccard_distances(all, num_query, params);
  const std::size_t g = jac.cols();
  std::vector<double> out(jac.data().size());
  for (std::size_t i = 0; i < num_query; ++i) {
    auto raw = all.row(i);
    for (std::size_t j = 0; j < g; ++j)
      out[i * g + j] = (1.0 - params.lambda) * jac(i, j) + params.lambda * raw[num_query + j];
  }
  return DistanceMatrix(jac.row_ids(), jac.col_ids(), std::move(out), DistanceKind::reranked);
}

DistanceMatrix jaccard_self_distances(const DistanceMatrix& all, const RerankParams& params) {
  check_union(all, all.rows(), params);
  check_gallery(all.rows(), params);
  const Encoder enc(all, params);
  const auto idx = range(0, all.rows());
  return DistanceMatrix(all.row_ids(), all.col_ids(), jaccard_block(enc, idx, idx),
                        DistanceKind::jaccard);
}

DistanceMatrix jaccard_only(const Dataset& q, const Dataset& g, const RerankParams& params) {
  params.validate();
  require_normalized(q, "query");
  require_normalized(g, "gallery");
  check_gallery(g.size(), params);
  const auto all = concat(q, g);
  return jaccard_distances(pairwise(all, all), q.size(), params);
}

DistanceMatrix rerank(const Dataset& q, const Dataset& g, const RerankParams& params) {
  params.validate();
  require_normalized(q, "query");
  require_normalized(g, "gallery");
  check_gallery(g.size(), params);
  const auto all = concat(q, g);
  return rerank_distances(pairwise(all, all), q.size(), params);
}

DistanceMatrix jaccard_self(const Dataset& all, const RerankParams& params) {
  params.validate();
  require_normalized(all, "input");
  return jaccard_self_distances(pairwise(all, all), params);
}

}  // namespace vreid
