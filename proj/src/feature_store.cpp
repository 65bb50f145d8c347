#include "vreid/feature_store.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "vreid/error.hpp"

namespace vreid {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr std::string_view kMetaHeader = "image_id,camera_id,tracklet_id,identity,view";

double row_norm(std::span<const float> row) {
  double sq = 0.0;
  for (float v : row) sq += static_cast<double>(v) * v;
  return std::sqrt(sq);
}

[[noreturn]] void fail(Errc code, const std::string& msg) { throw Error(code, msg); }

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

template <typename Int>
Int parse_int(const std::string& text, const std::string& where) {
  std::size_t pos = 0;
  long long v = 0;
  try {
    v = std::stoll(text, &pos);
  } catch (const std::exception&) {
    fail(Errc::format_error, where + ": expected integer, got '" + text + "'");
  }
  if (pos != text.size())
    fail(Errc::format_error, where + ": expected integer, got '" + text + "'");
  return static_cast<Int>(v);
}

void ensure_parent(const fs::path& p) {
  std::error_code ec;
  if (p.has_parent_path()) fs::create_directories(p.parent_path(), ec);
  if (ec) fail(Errc::io_failure, "cannot create directory " + p.parent_path().string());
}

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    v = ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
  }
  return v;
}

}  // namespace

FeatureSet::FeatureSet(std::size_t count, std::size_t dim, std::vector<float> data,
                       bool normalized)
    : count_(count), dim_(dim), normalized_(normalized), data_(std::move(data)) {
  if (dim_ == 0) fail(Errc::invalid_argument, "feature dimension must be positive");
  if (data_.size() != count_ * dim_) {
    fail(Errc::size_mismatch, "feature payload holds " + std::to_string(data_.size()) +
                                  " values, expected " + std::to_string(count_ * dim_));
  }
  for (std::size_t i = 0; i < count_; ++i) {
    for (std::size_t j = 0; j < dim_; ++j) {
      if (!std::isfinite(data_[i * dim_ + j])) {
        fail(Errc::non_finite, "non-finite value at (row " + std::to_string(i) + ", col " +
                                   std::to_string(j) + ")");
      }
    }
    if (normalized_ && std::abs(row_norm(row(i)) - 1.0) > kUnitTolerance) {
      fail(Errc::not_normalized,
           "row " + std::to_string(i) + " is flagged normalized but is not unit-length");
    }
  }
}

bool rows_are_unit(std::size_t count, std::size_t dim, std::span<const float> data) {
  for (std::size_t i = 0; i < count; ++i) {
    if (std::abs(row_norm(data.subspan(i * dim, dim)) - 1.0) > FeatureSet::kUnitTolerance)
      return false;
  }
  return true;
}

std::string_view to_string(View v) {
  switch (v) {
    case View::original: return "original";
    case View::cropped: return "cropped";
    case View::flipped_original: return "flipped_original";
    case View::flipped_cropped: return "flipped_cropped";
  }
  return "original";
}

View parse_view(std::string_view text) {
  for (View v : {View::original, View::cropped, View::flipped_original, View::flipped_cropped}) {
    if (to_string(v) == text) return v;
  }
  fail(Errc::format_error, "unknown view tag '" + std::string(text) + "'");
}

void validate_metas(std::span<const ImageMeta> metas) {
  std::set<std::pair<std::string, View>> seen;
  std::map<std::int64_t, int> tracklet_camera;
  for (std::size_t i = 0; i < metas.size(); ++i) {
    const ImageMeta& m = metas[i];
    const std::string where = "metadata record " + std::to_string(i);
    if (m.image_id.empty()) fail(Errc::format_error, where + ": empty image_id");
    if (m.image_id.find_first_of(",\n\r") != std::string::npos)
      fail(Errc::format_error, where + ": image_id contains a delimiter");
    if (m.camera_id < 0) fail(Errc::format_error, where + ": negative camera_id");
    if (m.tracklet_id < 0 && m.tracklet_id != kNoTracklet)
      fail(Errc::format_error, where + ": invalid tracklet_id " + std::to_string(m.tracklet_id));
    if (m.identity && *m.identity < 0) fail(Errc::format_error, where + ": negative identity");
    if (!seen.emplace(m.image_id, m.view).second) {
      fail(Errc::duplicate_image, "duplicate (image_id, view) pair ('" + m.image_id + "', " +
                                      std::string(to_string(m.view)) + ")");
    }
    if (m.has_tracklet()) {
      auto [it, inserted] = tracklet_camera.emplace(m.tracklet_id, m.camera_id);
      if (!inserted && it->second != m.camera_id) {
        fail(Errc::inconsistent_tracklet,
             "tracklet " + std::to_string(m.tracklet_id) + " spans cameras " +
                 std::to_string(it->second) + " and " + std::to_string(m.camera_id));
      }
    }
  }
}

void write_f32le(const fs::path& path, std::span<const float> values) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Errc::io_failure, "cannot open " + path.string() + " for writing");
  std::vector<std::uint32_t> words(values.size());
  std::transform(values.begin(), values.end(), words.begin(),
                 [](float v) { return to_le(std::bit_cast<std::uint32_t>(v)); });
  out.write(reinterpret_cast<const char*>(words.data()),
            static_cast<std::streamsize>(words.size() * sizeof(std::uint32_t)));
  if (!out) fail(Errc::io_failure, "failed writing " + path.string());
}

std::vector<float> read_f32le(const fs::path& path, std::size_t expected_count) {
  if (!fs::exists(path)) fail(Errc::file_missing, "data file not found: " + path.string());
  const auto actual = fs::file_size(path);
  const auto expected = expected_count * sizeof(float);
  if (actual != expected) {
    fail(Errc::size_mismatch, "size mismatch for " + path.string() + ": expected " +
                                  std::to_string(expected) + " bytes, actual " +
                                  std::to_string(actual));
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::io_failure, "cannot open " + path.string());
  std::vector<std::uint32_t> words(expected_count);
  in.read(reinterpret_cast<char*>(words.data()), static_cast<std::streamsize>(expected));
  if (!in && expected > 0) fail(Errc::io_failure, "short read on " + path.string());
  std::vector<float> values(expected_count);
  std::transform(words.begin(), words.end(), values.begin(),
                 [](std::uint32_t w) { return std::bit_cast<float>(to_le(w)); });
  return values;
}

std::vector<ImageMeta> read_metadata_csv(const fs::path& path) {
  if (!fs::exists(path)) fail(Errc::file_missing, "metadata file not found: " + path.string());
  std::ifstream in(path);
  if (!in) fail(Errc::io_failure, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) fail(Errc::format_error, path.string() + ": missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kMetaHeader)
    fail(Errc::format_error, path.string() + ": expected header '" + std::string(kMetaHeader) + "'");

  std::vector<ImageMeta> metas;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = path.filename().string() + ":" + std::to_string(lineno);
    auto f = split_fields(line);
    if (f.size() != 5) fail(Errc::format_error, where + ": expected 5 fields");
    ImageMeta m;
    m.image_id = f[0];
    m.camera_id = parse_int<int>(f[1], where + " camera_id");
    m.tracklet_id = parse_int<std::int64_t>(f[2], where + " tracklet_id");
    if (!f[3].empty()) m.identity = parse_int<int>(f[3], where + " identity");
    m.view = parse_view(f[4]);
    metas.push_back(std::move(m));
  }
  return metas;
}

void write_metadata_csv(const fs::path& path, std::span<const ImageMeta> metas) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(Errc::io_failure, "cannot open " + path.string() + " for writing");
  out << kMetaHeader << '\n';
  for (const auto& m : metas) {
    out << m.image_id << ',' << m.camera_id << ',' << m.tracklet_id << ',';
    if (m.identity) out << *m.identity;
    out << ',' << to_string(m.view) << '\n';
  }
  if (!out) fail(Errc::io_failure, "failed writing " + path.string());
}

Dataset ingest(const fs::path& manifest_path) {
  if (!fs::exists(manifest_path))
    fail(Errc::file_missing, "manifest not found: " + manifest_path.string());
  std::ifstream in(manifest_path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    fail(Errc::format_error, manifest_path.string() + ": " + e.what());
  }

  auto field = [&](const char* key) -> const json& {
    if (!doc.contains(key)) fail(Errc::format_error, manifest_path.string() + ": missing '" + key + "'");
    return doc.at(key);
  };
  std::size_t dim = 0, count = 0;
  std::string dtype, order, data_rel, meta_rel;
  try {
    dim = field("dim").get<std::size_t>();
    count = field("count").get<std::size_t>();
    dtype = field("dtype").get<std::string>();
    order = field("order").get<std::string>();
    data_rel = field("data").get<std::string>();
    meta_rel = field("meta").get<std::string>();
  } catch (const json::exception& e) {
    fail(Errc::format_error, manifest_path.string() + ": " + e.what());
  }
  if (dtype != "f32le") fail(Errc::format_error, "unsupported dtype '" + dtype + "'");
  if (order != "row_major") fail(Errc::format_error, "unsupported order '" + order + "'");
  if (dim == 0) fail(Errc::format_error, manifest_path.string() + ": dim must be positive");

  const fs::path base = manifest_path.parent_path();
  auto values = read_f32le(base / data_rel, count * dim);
  auto metas = read_metadata_csv(base / meta_rel);
  if (metas.size() != count) {
    fail(Errc::length_mismatch, "manifest declares " + std::to_string(count) +
                                    " rows but metadata has " + std::to_string(metas.size()));
  }
  validate_metas(metas);
  const bool unit = count > 0 && rows_are_unit(count, dim, values);
  return Dataset{FeatureSet(count, dim, std::move(values), unit), std::move(metas)};
}

Manifest export_dataset(const FeatureSet& features, std::span<const ImageMeta> metas,
                        const fs::path& out_path) {
  if (features.count() != metas.size()) {
    fail(Errc::length_mismatch, "feature set has " + std::to_string(features.count()) +
                                    " rows but " + std::to_string(metas.size()) +
                                    " metadata records were given");
  }
  validate_metas(metas);

  Manifest m;
  m.dim = features.dim();
  m.count = features.count();
  const std::string stem = out_path.stem().string();
  m.data_path = stem + ".f32";
  m.metadata_path = stem + ".csv";
  const fs::path base = out_path.parent_path();

  write_f32le(base / m.data_path, features.data());
  write_metadata_csv(base / m.metadata_path, metas);

  json doc = {{"dim", m.dim},
              {"count", m.count},
              {"dtype", "f32le"},
              {"order", "row_major"},
              {"data", m.data_path.string()},
              {"meta", m.metadata_path.string()}};
  std::ofstream out(out_path, std::ios::trunc);
  if (!out) fail(Errc::io_failure, "cannot open " + out_path.string() + " for writing");
  out << doc.dump(2) << '\n';
  if (!out) fail(Errc::io_failure, "failed writing " + out_path.string());
  return m;
}

// Synthetic generator. Each random component draws from its own engine so that
// prototypes can be reproduced independently of the rest of the bench.

namespace {

enum class Stream : std::uint64_t { prototypes = 1, cameras = 2, layout = 3, noise = 4 };

std::mt19937_64 make_engine(std::uint64_t seed, Stream stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

std::vector<double> random_unit(std::mt19937_64& rng, int dim) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(static_cast<std::size_t>(dim));
  double sq = 0.0;
  do {
    sq = 0.0;
    for (auto& x : v) {
      x = normal(rng);
      sq += x * x;
    }
  } while (sq == 0.0);
  const double inv = 1.0 / std::sqrt(sq);
  for (auto& x : v) x *= inv;
  return v;
}

}  // namespace

std::vector<std::vector<double>> synth_prototypes(int num_ids, int dim, std::uint64_t seed) {
  auto rng = make_engine(seed, Stream::prototypes);
  std::vector<std::vector<double>> protos;
  protos.reserve(static_cast<std::size_t>(num_ids));
  for (int i = 0; i < num_ids; ++i) protos.push_back(random_unit(rng, dim));
  return protos;
}

Dataset synth_generate(const SynthParams& p) {
  if (p.num_ids <= 0 || p.cams <= 0 || p.tracklets_per_id <= 0 || p.frames_per_tracklet <= 0)
    fail(Errc::invalid_argument, "synth_generate: counts must be positive");
  if (p.dim < 2) fail(Errc::invalid_argument, "synth_generate: dim must be at least 2");
  if (!std::isfinite(p.camera_offset_scale) || !std::isfinite(p.noise_scale))
    fail(Errc::invalid_argument, "synth_generate: scales must be finite");

  const auto dim = static_cast<std::size_t>(p.dim);
  const auto protos = synth_prototypes(p.num_ids, p.dim, p.seed);

  auto cam_rng = make_engine(p.seed, Stream::cameras);
  std::vector<std::vector<double>> offsets;
  for (int c = 0; c < p.cams; ++c) offsets.push_back(random_unit(cam_rng, p.dim));

  auto layout_rng = make_engine(p.seed, Stream::layout);
  auto noise_rng = make_engine(p.seed, Stream::noise);
  // Per-coordinate sigma 1/sqrt(dim) gives noise vectors of expected norm 1.
  std::normal_distribution<double> noise(0.0, 1.0 / std::sqrt(static_cast<double>(dim)));

  const std::size_t total = static_cast<std::size_t>(p.num_ids) * p.tracklets_per_id *
                            p.frames_per_tracklet;
  std::vector<float> data;
  data.reserve(total * dim);
  std::vector<ImageMeta> metas;
  metas.reserve(total);

  std::vector<int> cams(static_cast<std::size_t>(p.cams));
  std::vector<double> f(dim);
  for (int id = 0; id < p.num_ids; ++id) {
    std::iota(cams.begin(), cams.end(), 0);
    std::shuffle(cams.begin(), cams.end(), layout_rng);
    for (int t = 0; t < p.tracklets_per_id; ++t) {
      const int cam = cams[static_cast<std::size_t>(t % p.cams)];
      const std::int64_t tracklet = static_cast<std::int64_t>(id) * p.tracklets_per_id + t;
      for (int k = 0; k < p.frames_per_tracklet; ++k) {
        double sq = 0.0;
        for (std::size_t j = 0; j < dim; ++j) {
          f[j] = protos[id][j] + p.camera_offset_scale * offsets[cam][j] +
                 p.noise_scale * noise(noise_rng);
          sq += f[j] * f[j];
        }
        if (sq == 0.0) fail(Errc::zero_row, "synth_generate produced a zero feature");
        const double inv = 1.0 / std::sqrt(sq);
        for (std::size_t j = 0; j < dim; ++j) data.push_back(static_cast<float>(f[j] * inv));

        std::ostringstream name;
        name << "id" << id << "_c" << cam << "_t" << tracklet << "_f" << k;
        metas.push_back(ImageMeta{name.str(), cam, tracklet, id, View::original});
      }
    }
  }
  const bool unit = rows_are_unit(total, dim, data);
  return Dataset{FeatureSet(total, dim, std::move(data), unit), std::move(metas)};
}

Dataset synth_aux(const Dataset& ds, AuxKind kind, int dim, double noise_scale,
                  std::uint64_t seed) {
  if (dim < 2) fail(Errc::invalid_argument, "synth_aux: dim must be at least 2");
  const auto d = static_cast<std::size_t>(dim);
  auto rng = make_engine(seed, kind == AuxKind::camera ? Stream::cameras : Stream::layout);
  auto noise_rng = make_engine(seed ^ 0x9e3779b97f4a7c15ULL, Stream::noise);
  std::normal_distribution<double> noise(0.0, 1.0 / std::sqrt(static_cast<double>(d)));

  std::map<std::int64_t, std::vector<double>> directions;
  std::vector<float> data;
  data.reserve(ds.size() * d);
  std::vector<double> f(d);
  for (const auto& m : ds.metas) {
    std::fill(f.begin(), f.end(), 0.0);
    if (kind == AuxKind::camera) {
      f[static_cast<std::size_t>(m.camera_id) % d] = 1.0;
    } else {
      auto [it, inserted] = directions.try_emplace(m.tracklet_id);
      if (inserted || !m.has_tracklet()) it->second = random_unit(rng, dim);
      f = it->second;
    }
    double sq = 0.0;
    for (auto& x : f) {
      x += noise_scale * noise(noise_rng);
      sq += x * x;
    }
    if (sq == 0.0) fail(Errc::zero_row, "synth_aux produced a zero feature");
    for (auto x : f) data.push_back(static_cast<float>(x / std::sqrt(sq)));
  }
  const bool unit = !ds.metas.empty() && rows_are_unit(ds.size(), d, data);
  return Dataset{FeatureSet(ds.size(), d, std::move(data), unit), ds.metas};
}

std::pair<Dataset, Dataset> split_query_gallery(const Dataset& ds) {
  std::map<int, std::int64_t> first_tracklet;
  for (const auto& m : ds.metas) {
    if (!m.identity || !m.has_tracklet())
      fail(Errc::invalid_argument, "split_query_gallery needs identities and tracklets");
    auto [it, inserted] = first_tracklet.emplace(*m.identity, m.tracklet_id);
    if (!inserted) it->second = std::min(it->second, m.tracklet_id);
  }
  const std::size_t dim = ds.features.dim();
  std::vector<float> qdata, gdata;
  std::vector<ImageMeta> qmetas, gmetas;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& m = ds.metas[i];
    const bool is_query = first_tracklet.at(*m.identity) == m.tracklet_id;
    auto row = ds.features.row(i);
    (is_query ? qdata : gdata).insert((is_query ? qdata : gdata).end(), row.begin(), row.end());
    (is_query ? qmetas : gmetas).push_back(m);
  }
  const bool unit = ds.features.normalized();
  Dataset q{FeatureSet(qmetas.size(), dim, std::move(qdata), unit), std::move(qmetas)};
  Dataset g{FeatureSet(gmetas.size(), dim, std::move(gdata), unit), std::move(gmetas)};
  return {std::move(q), std::move(g)};
}

}  // namespace vreid
