#include "vreid/retrieval_eval.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <unordered_map>

#include <json.hpp>

#include "vreid/error.hpp"
#include "vreid/feature_ops.hpp"

namespace vreid {

namespace {

void check_ids(const std::vector<std::string>& ids, std::span<const ImageMeta> metas,
               const char* which) {
  if (ids.size() != metas.size())
    throw Error(Errc::length_mismatch, std::string(which) + " metadata has " +
                                           std::to_string(metas.size()) + " records for " +
                                           std::to_string(ids.size()) + " matrix entries");
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (ids[i] != metas[i].image_id)
      throw Error(Errc::misaligned, std::string(which) + " metadata row " + std::to_string(i) +
                                        " is '" + metas[i].image_id + "', matrix has '" + ids[i] + "'");
}

}  // namespace

DistanceMatrix camera_verify_mask(const DistanceMatrix& d, std::span<const ImageMeta> q_metas,
                                  std::span<const ImageMeta> g_metas) {
  check_ids(d.row_ids(), q_metas, "query");
  check_ids(d.col_ids(), g_metas, "gallery");
  std::vector<double> out(d.data());
  const std::size_t g = d.cols();
  for (std::size_t i = 0; i < d.rows(); ++i) {
    bool any = false;
    for (std::size_t j = 0; j < g; ++j) {
      if (q_metas[i].camera_id == g_metas[j].camera_id) out[i * g + j] = kMasked;
      any = any || out[i * g + j] != kMasked;
    }
    if (!any)
      throw Error(Errc::empty_candidates, "query '" + q_metas[i].image_id +
                                              "' has no candidates left after camera verification");
  }
  return DistanceMatrix(d.row_ids(), d.col_ids(), std::move(out), d.kind());
}

RankList rank(const DistanceMatrix& d, const RankOptions& options,
              std::span<const ImageMeta> g_metas) {
  if (options.top_k < 1) throw Error(Errc::invalid_argument, "rank: top_k must be at least 1");
  if (options.i2t) check_ids(d.col_ids(), g_metas, "gallery");

  RankList rl;
  rl.query_ids = d.row_ids();
  rl.gallery_ids = d.col_ids();
  rl.entries.resize(d.rows());
  const std::size_t g = d.cols();

  // Gallery index -> tracklet group id (I2T only).
  std::vector<std::size_t> group(g);
  std::size_t num_groups = 0;
  if (options.i2t) {
    std::map<TrackletKey, std::size_t> ids;
    for (std::size_t j = 0; j < g; ++j) {
      auto [it, inserted] = ids.emplace(TrackletKey::of(g_metas[j]), ids.size());
      group[j] = it->second;
    }
    num_groups = ids.size();
  }

  const auto nq = static_cast<std::ptrdiff_t>(d.rows());
#pragma omp parallel for schedule(dynamic, 8)
  for (std::ptrdiff_t qi = 0; qi < nq; ++qi) {
    auto row = d.row(static_cast<std::size_t>(qi));
    std::vector<std::size_t> order;
    order.reserve(g);
    for (std::size_t j = 0; j < g; ++j)
      if (row[j] != kMasked) order.push_back(j);

    std::vector<double> key(row.begin(), row.end());
    if (options.i2t) {
      std::vector<double> best(num_groups, kMasked);
      for (auto j : order) best[group[j]] = std::min(best[group[j]], row[j]);
      std::vector<std::size_t> first(num_groups, g);
      for (auto j : order) first[group[j]] = std::min(first[group[j]], j);
      for (auto j : order) key[j] = best[group[j]];
      // Tracklets by score then by lowest member index; members by own distance then index.
      std::ranges::sort(order, [&](std::size_t a, std::size_t b) {
        if (key[a] != key[b]) return key[a] < key[b];
        if (group[a] != group[b]) return first[group[a]] < first[group[b]];
        if (row[a] != row[b]) return row[a] < row[b];
        return a < b;
      });
    } else {
      std::ranges::sort(order, [&](std::size_t a, std::size_t b) {
        return row[a] < row[b] || (row[a] == row[b] && a < b);
      });
    }
    const std::size_t keep = std::min(order.size(), options.top_k);
    auto& list = rl.entries[static_cast<std::size_t>(qi)];
    list.reserve(keep);
    for (std::size_t r = 0; r < keep; ++r) list.push_back({order[r], key[order[r]]});
  }
  return rl;
}

EvalReport evaluate(const RankList& rl, std::span<const ImageMeta> q_metas,
                    std::span<const ImageMeta> g_metas, const EvalOptions& options) {
  if (rl.query_ids.empty()) throw Error(Errc::invalid_argument, "evaluate: empty query set");
  check_ids(rl.query_ids, q_metas, "query");
  check_ids(rl.gallery_ids, g_metas, "gallery");
  for (const auto* metas : {&q_metas, &g_metas})
    for (const auto& m : *metas)
      if (!m.identity)
        throw Error(Errc::invalid_argument, "evaluate: image '" + m.image_id + "' has no identity label");

  std::size_t depth = 0;
  for (const auto& list : rl.entries) depth = std::max(depth, list.size());

  // identity -> gallery members
  std::unordered_map<int, std::vector<std::size_t>> by_identity;
  for (std::size_t j = 0; j < g_metas.size(); ++j) by_identity[*g_metas[j].identity].push_back(j);

  EvalReport report;
  report.num_queries = rl.query_ids.size();
  std::vector<std::size_t> hits_at(depth + 1, 0);
  double ap_sum = 0.0;
  for (std::size_t qi = 0; qi < rl.query_ids.size(); ++qi) {
    const auto& qm = q_metas[qi];
    auto skip = [&](std::size_t j) {
      return options.exclude_same_camera && *g_metas[j].identity == *qm.identity &&
             g_metas[j].camera_id == qm.camera_id;
    };
    std::size_t relevant = 0;
    if (auto it = by_identity.find(*qm.identity); it != by_identity.end())
      for (auto j : it->second) relevant += skip(j) ? 0 : 1;
    if (relevant == 0) {
      ++report.skipped_queries;
      continue;
    }
    const std::size_t cap = options.top_k_map == 0 ? relevant : std::min(relevant, options.top_k_map);

    double precision_sum = 0.0;
    std::size_t found = 0, position = 0;
    std::size_t first_hit = 0;  // 1-based, 0 = none
    for (const auto& e : rl.entries[qi]) {
      if (skip(e.gallery_index)) continue;
      ++position;
      if (options.top_k_map != 0 && position > options.top_k_map) break;
      if (*g_metas[e.gallery_index].identity == *qm.identity) {
        ++found;
        precision_sum += static_cast<double>(found) / static_cast<double>(position);
        if (first_hit == 0) first_hit = position;
      }
    }
    const double ap = precision_sum / static_cast<double>(cap);
    report.per_query_ap.push_back({qm.image_id, ap});
    ap_sum += ap;
    if (first_hit != 0 && first_hit <= depth) ++hits_at[first_hit];
  }
  if (report.per_query_ap.empty())
    throw Error(Errc::invalid_argument, "evaluate: no query has a relevant gallery item");

  const double valid = static_cast<double>(report.per_query_ap.size());
  report.mAP = ap_sum / valid;
  report.cmc.resize(depth);
  std::size_t cumulative = 0;
  for (std::size_t k = 1; k <= depth; ++k) {
    cumulative += hits_at[k];
    report.cmc[k - 1] = static_cast<double>(cumulative) / valid;
  }
  return report;
}

void write_rank_file(const std::filesystem::path& path, const RankList& rl) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(Errc::io_failure, "cannot open " + path.string() + " for writing");
  for (std::size_t qi = 0; qi < rl.query_ids.size(); ++qi) {
    out << rl.query_ids[qi] << ':';
    for (const auto& e : rl.entries[qi]) out << ' ' << rl.gallery_ids[e.gallery_index];
    out << '\n';
  }
}

void write_report(const std::filesystem::path& path, const EvalReport& report) {
  nlohmann::json per_query = nlohmann::json::array();
  for (const auto& q : report.per_query_ap) per_query.push_back({{"query", q.query_id}, {"ap", q.ap}});
  nlohmann::json doc = {{"mAP", report.mAP},
                        {"cmc@1", report.rank_at(1)},
                        {"cmc@5", report.rank_at(5)},
                        {"cmc@10", report.rank_at(10)},
                        {"cmc", report.cmc},
                        {"num_queries", report.num_queries},
                        {"skipped_queries", report.skipped_queries},
                        {"per_query_ap", per_query}};
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(Errc::io_failure, "cannot open " + path.string() + " for writing");
  out << doc.dump(2) << '\n';
}

}  // namespace vreid
