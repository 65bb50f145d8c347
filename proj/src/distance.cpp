#include "vreid/distance.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_map>

#include <json.hpp>

#include "vreid/error.hpp"

namespace vreid {

namespace fs = std::filesystem;

std::string_view to_string(DistanceKind k) {
  switch (k) {
    case DistanceKind::raw: return "raw";
    case DistanceKind::jaccard: return "jaccard";
    case DistanceKind::reranked: return "reranked";
    case DistanceKind::fused: return "fused";
  }
  return "raw";
}

DistanceKind parse_distance_kind(std::string_view text) {
  for (auto k : {DistanceKind::raw, DistanceKind::jaccard, DistanceKind::reranked, DistanceKind::fused})
    if (to_string(k) == text) return k;
  throw Error(Errc::format_error, "unknown distance kind '" + std::string(text) + "'");
}

DistanceMatrix::DistanceMatrix(std::vector<std::string> row_ids, std::vector<std::string> col_ids,
                               std::vector<double> data, DistanceKind kind)
    : row_ids_(std::move(row_ids)), col_ids_(std::move(col_ids)), data_(std::move(data)), kind_(kind) {
  if (data_.size() != row_ids_.size() * col_ids_.size())
    throw Error(Errc::shape_mismatch, "distance payload has " + std::to_string(data_.size()) +
                                          " entries for a " + std::to_string(row_ids_.size()) +
                                          "x" + std::to_string(col_ids_.size()) + " matrix");
  for (std::size_t k = 0; k < data_.size(); ++k) {
    if (!std::isfinite(data_[k]) && data_[k] != kMasked)
      throw Error(Errc::non_finite, "non-finite distance at (row " + std::to_string(k / cols()) +
                                        ", col " + std::to_string(k % cols()) + ")");
  }
}

DistanceMatrix DistanceMatrix::block(std::size_t row0, std::size_t nrows, std::size_t col0,
                                     std::size_t ncols) const {
  if (row0 + nrows > rows() || col0 + ncols > cols())
    throw Error(Errc::shape_mismatch, "distance block out of range");
  std::vector<double> out;
  out.reserve(nrows * ncols);
  for (std::size_t i = row0; i < row0 + nrows; ++i) {
    auto r = row(i);
    out.insert(out.end(), r.begin() + static_cast<std::ptrdiff_t>(col0),
               r.begin() + static_cast<std::ptrdiff_t>(col0 + ncols));
  }
  return DistanceMatrix({row_ids_.begin() + static_cast<std::ptrdiff_t>(row0),
                         row_ids_.begin() + static_cast<std::ptrdiff_t>(row0 + nrows)},
                        {col_ids_.begin() + static_cast<std::ptrdiff_t>(col0),
                         col_ids_.begin() + static_cast<std::ptrdiff_t>(col0 + ncols)},
                        std::move(out), kind_);
}

std::vector<std::string> image_ids(std::span<const ImageMeta> metas) {
  std::vector<std::string> ids;
  ids.reserve(metas.size());
  for (const auto& m : metas) ids.push_back(m.image_id);
  return ids;
}

DistanceMatrix pairwise(const Dataset& q, const Dataset& g) {
  const FeatureSet& qf = q.features;
  const FeatureSet& gf = g.features;
  if (qf.dim() != gf.dim())
    throw Error(Errc::dim_mismatch, "pairwise: query dim " + std::to_string(qf.dim()) +
                                        " vs gallery dim " + std::to_string(gf.dim()));
  if ((qf.count() > 0 && !qf.normalized()) || (gf.count() > 0 && !gf.normalized()))
    throw Error(Errc::not_normalized, "pairwise expects normalized features");
  if (q.metas.size() != qf.count() || g.metas.size() != gf.count())
    throw Error(Errc::length_mismatch, "pairwise: features and metadata differ in length");

  const auto nq = static_cast<std::ptrdiff_t>(qf.count());
  const std::size_t ng = gf.count();
  const std::size_t dim = qf.dim();
  std::vector<double> out(qf.count() * ng);
  const float* gdata = gf.data().data();

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < nq; ++i) {
    const float* a = qf.data().data() + static_cast<std::size_t>(i) * dim;
    double* dst = out.data() + static_cast<std::size_t>(i) * ng;
    for (std::size_t j = 0; j < ng; ++j) {
      const float* b = gdata + j * dim;
      double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
      std::size_t k = 0;
      for (; k + 4 <= dim; k += 4) {
        s0 += static_cast<double>(a[k]) * b[k];
        s1 += static_cast<double>(a[k + 1]) * b[k + 1];
        s2 += static_cast<double>(a[k + 2]) * b[k + 2];
        s3 += static_cast<double>(a[k + 3]) * b[k + 3];
      }
      for (; k < dim; ++k) s0 += static_cast<double>(a[k]) * b[k];
      const double dot = (s0 + s1) + (s2 + s3);
      dst[j] = std::clamp(2.0 - 2.0 * dot, 0.0, 4.0);
    }
  }
  std::unordered_map<std::string_view, std::vector<std::size_t>> gallery_rows;
  for (std::size_t j = 0; j < ng; ++j) gallery_rows[g.metas[j].image_id].push_back(j);
  for (std::size_t i = 0; i < qf.count(); ++i) {
    auto it = gallery_rows.find(q.metas[i].image_id);
    if (it == gallery_rows.end()) continue;
    for (auto j : it->second) out[i * ng + j] = 0.0;
  }

  return DistanceMatrix(image_ids(q.metas), image_ids(g.metas), std::move(out), DistanceKind::raw);
}

DistanceMatrix fuse_distances(const DistanceMatrix& d_r, const DistanceMatrix& d_c,
                              const DistanceMatrix& d_o, double lambda1, double lambda2) {
  if (!d_r.same_shape(d_c) || !d_r.same_shape(d_o))
    throw Error(Errc::shape_mismatch, "fuse_distances: matrices differ in shape or ids");
  if (!std::isfinite(lambda1) || !std::isfinite(lambda2))
    throw Error(Errc::invalid_argument, "fuse_distances: weights must be finite");
  std::vector<double> out(d_r.data().size());
  for (std::size_t k = 0; k < out.size(); ++k) {
    const double c = d_c.data()[k], o = d_o.data()[k];
    if (c == kMasked || o == kMasked)
      throw Error(Errc::invalid_argument, "fuse_distances: auxiliary matrices cannot be masked");
    out[k] = d_r.data()[k] - lambda1 * c - lambda2 * o;
  }
  return DistanceMatrix(d_r.row_ids(), d_r.col_ids(), std::move(out), DistanceKind::fused);
}

DistanceMatrix average_distances(std::span<const DistanceMatrix> mats) {
  if (mats.empty()) throw Error(Errc::invalid_argument, "average_distances needs input");
  std::vector<double> sum(mats.front().data().size(), 0.0);
  for (const auto& m : mats) {
    if (!m.same_shape(mats.front()))
      throw Error(Errc::shape_mismatch, "average_distances: matrices differ in shape or ids");
    for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += m.data()[k];
  }
  for (auto& x : sum) x /= static_cast<double>(mats.size());
  return DistanceMatrix(mats.front().row_ids(), mats.front().col_ids(), std::move(sum),
                        mats.front().kind());
}

namespace {

void write_ids(const fs::path& path, const std::vector<std::string>& ids) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(Errc::io_failure, "cannot open " + path.string() + " for writing");
  for (const auto& id : ids) out << id << '\n';
}

std::vector<std::string> read_ids(const fs::path& path, std::size_t expected) {
  if (!fs::exists(path)) throw Error(Errc::file_missing, "id file not found: " + path.string());
  std::ifstream in(path);
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) ids.push_back(line);
  }
  if (ids.size() != expected)
    throw Error(Errc::length_mismatch, path.string() + " lists " + std::to_string(ids.size()) +
                                           " ids, expected " + std::to_string(expected));
  return ids;
}

}  // namespace

void save_distances(const DistanceMatrix& d, const fs::path& manifest_path) {
  const std::string stem = manifest_path.stem().string();
  const fs::path base = manifest_path.parent_path();
  std::vector<float> payload(d.data().begin(), d.data().end());
  write_f32le(base / (stem + ".f32"), payload);
  write_ids(base / (stem + ".rows.txt"), d.row_ids());
  write_ids(base / (stem + ".cols.txt"), d.col_ids());
  nlohmann::json doc = {{"rows", d.rows()},
                        {"cols", d.cols()},
                        {"dtype", "f32le"},
                        {"order", "row_major"},
                        {"kind", std::string(to_string(d.kind()))},
                        {"data", stem + ".f32"},
                        {"row_ids", stem + ".rows.txt"},
                        {"col_ids", stem + ".cols.txt"}};
  std::ofstream out(manifest_path, std::ios::trunc);
  if (!out) throw Error(Errc::io_failure, "cannot open " + manifest_path.string() + " for writing");
  out << doc.dump(2) << '\n';
}

DistanceMatrix load_distances(const fs::path& manifest_path) {
  if (!fs::exists(manifest_path))
    throw Error(Errc::file_missing, "distance manifest not found: " + manifest_path.string());
  std::ifstream in(manifest_path);
  try {
    const auto doc = nlohmann::json::parse(in);
    if (doc.at("dtype").get<std::string>() != "f32le" ||
        doc.at("order").get<std::string>() != "row_major")
      throw Error(Errc::format_error, manifest_path.string() + ": unsupported dtype or order");
    const auto rows = doc.at("rows").get<std::size_t>();
    const auto cols = doc.at("cols").get<std::size_t>();
    const fs::path base = manifest_path.parent_path();
    auto payload = read_f32le(base / doc.at("data").get<std::string>(), rows * cols);
    auto row_ids = read_ids(base / doc.at("row_ids").get<std::string>(), rows);
    auto col_ids = read_ids(base / doc.at("col_ids").get<std::string>(), cols);
    return DistanceMatrix(std::move(row_ids), std::move(col_ids),
                          std::vector<double>(payload.begin(), payload.end()),
                          parse_distance_kind(doc.at("kind").get<std::string>()));
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::format_error, manifest_path.string() + ": " + e.what());
  }
}

}  // namespace vreid
