#include "vreid/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "vreid/error.hpp"

namespace vreid {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr Stage kAllStages[] = {Stage::normalize, Stage::average_views, Stage::ensemble,
                                Stage::camera_subtract, Stage::tracklet, Stage::fuse_eq4,
                                Stage::rerank, Stage::camera_verify, Stage::rank,
                                Stage::evaluate, Stage::cluster};

[[noreturn]] void config_fail(const std::string& path, const std::string& msg) {
  throw Error(Errc::config_error, path + ": " + msg);
}

// Strict view over a JSON object: typed getters that report the field path and
// a final check that rejects unknown keys.
class Fields {
 public:
  Fields(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) config_fail(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) {
    seen_.insert(key);
    return obj_.contains(key) && !obj_.at(key).is_null();
  }
  const json& raw(const std::string& key) {
    if (!has(key)) config_fail(at(key), "required field is missing");
    return obj_.at(key);
  }

  double number(const std::string& key, double fallback) {
    if (!has(key)) return fallback;
    const auto& v = obj_.at(key);
    if (!v.is_number()) config_fail(at(key), "expected a number");
    return v.get<double>();
  }
  long long integer(const std::string& key, long long fallback) {
    if (!has(key)) return fallback;
    const auto& v = obj_.at(key);
    if (!v.is_number_integer()) config_fail(at(key), "expected an integer");
    return v.get<long long>();
  }
  bool boolean(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const auto& v = obj_.at(key);
    if (!v.is_boolean()) config_fail(at(key), "expected true or false");
    return v.get<bool>();
  }
  std::string text(const std::string& key, const std::string& fallback) {
    if (!has(key)) return fallback;
    const auto& v = obj_.at(key);
    if (!v.is_string()) config_fail(at(key), "expected a string");
    return v.get<std::string>();
  }

  void finish() const {
    for (const auto& [key, value] : obj_.items())
      if (!seen_.contains(key)) config_fail(at(key), "unknown field");
  }

 private:
  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

fs::path existing_path(const json& v, const std::string& where, const fs::path& base) {
  if (!v.is_string()) config_fail(where, "expected a path string");
  fs::path p = v.get<std::string>();
  if (p.is_relative()) p = base / p;
  if (!fs::exists(p)) config_fail(where, "file not found: " + p.string());
  return p;
}

InputSide parse_side(const json& obj, const std::string& path, const fs::path& base) {
  Fields f(obj, path);
  InputSide side;
  side.features = existing_path(f.raw("features"), f.at("features"), base);
  for (const char* key : {"views", "models"}) {
    if (!f.has(key)) continue;
    const auto& arr = obj.at(key);
    if (!arr.is_array()) config_fail(f.at(key), "expected an array of paths");
    auto& out = std::string(key) == "views" ? side.views : side.models;
    for (std::size_t i = 0; i < arr.size(); ++i)
      out.push_back(existing_path(arr[i], f.at(key) + "[" + std::to_string(i) + "]", base));
  }
  if (f.has("camera_aux")) side.camera_aux = existing_path(obj.at("camera_aux"), f.at("camera_aux"), base);
  if (f.has("orientation_aux"))
    side.orientation_aux = existing_path(obj.at("orientation_aux"), f.at("orientation_aux"), base);
  f.finish();
  return side;
}

std::size_t positive(long long v, const std::string& where) {
  if (v < 1) config_fail(where, "must be at least 1");
  return static_cast<std::size_t>(v);
}

RerankParams parse_rerank(Fields& f, RerankParams r) {
  r.k1 = static_cast<int>(f.integer("k1", r.k1));
  r.k2 = static_cast<int>(f.integer("k2", r.k2));
  r.lambda = f.number("lambda", r.lambda);
  r.block_rows = positive(f.integer("block_rows", static_cast<long long>(r.block_rows)), f.at("block_rows"));
  try {
    r.validate();
  } catch (const Error& e) {
    config_fail(f.at("k1/k2/lambda"), e.what());
  }
  return r;
}

PipelineParams parse_params(const json& obj, const std::string& path) {
  Fields f(obj, path);
  PipelineParams p;
  p.alpha = f.number("alpha", p.alpha);
  p.lambda1 = f.number("lambda1", p.lambda1);
  p.lambda2 = f.number("lambda2", p.lambda2);
  p.rerank = parse_rerank(f, p.rerank);
  const auto mode = f.text("tracklet_mode", "weighted");
  if (mode == "weighted") p.tracklet_mode = AggregationMode::weighted;
  else if (mode == "mean") p.tracklet_mode = AggregationMode::mean;
  else config_fail(f.at("tracklet_mode"), "expected 'mean' or 'weighted'");
  p.tracklet_beta = f.number("tracklet_beta", p.tracklet_beta);
  if (!(p.tracklet_beta >= 0.0 && p.tracklet_beta <= 1.0))
    config_fail(f.at("tracklet_beta"), "must lie in [0, 1]");
  p.tau = f.number("tau", p.tau);
  if (!(p.tau > 0.0)) config_fail(f.at("tau"), "must be positive");
  const auto ens = f.text("ensemble_mode", "concat");
  if (ens == "concat") p.ensemble_mode = EnsembleMode::concat;
  else if (ens == "distance_mean") p.ensemble_mode = EnsembleMode::distance_mean;
  else config_fail(f.at("ensemble_mode"), "expected 'concat' or 'distance_mean'");
  p.top_k = positive(f.integer("top_k", static_cast<long long>(p.top_k)), f.at("top_k"));
  const auto map_k = f.integer("top_k_map", static_cast<long long>(p.top_k_map));
  if (map_k < 0) config_fail(f.at("top_k_map"), "must be non-negative (0 = full list)");
  p.top_k_map = static_cast<std::size_t>(map_k);
  p.i2t = f.boolean("i2t", p.i2t);
  if (f.has("same_camera_relevant")) p.same_camera_relevant = f.boolean("same_camera_relevant", true);
  f.finish();
  return p;
}

ClusterConfig parse_cluster(const json& obj, const std::string& path, const fs::path& base) {
  Fields f(obj, path);
  ClusterConfig c;
  if (f.has("input")) c.input = existing_path(obj.at("input"), f.at("input"), base);
  c.alpha = f.number("alpha", c.alpha);
  c.beta = f.number("beta", c.beta);
  if (!(c.beta >= 0.0 && c.beta <= 1.0)) config_fail(f.at("beta"), "must lie in [0, 1]");
  c.rerank = parse_rerank(f, c.rerank);
  const auto& eps = f.raw("eps");
  if (eps.is_number()) {
    c.eps.push_back(eps.get<double>());
  } else if (eps.is_array() && !eps.empty()) {
    for (std::size_t i = 0; i < eps.size(); ++i) {
      if (!eps[i].is_number()) config_fail(f.at("eps") + "[" + std::to_string(i) + "]", "expected a number");
      c.eps.push_back(eps[i].get<double>());
    }
  } else {
    config_fail(f.at("eps"), "expected a number or a non-empty array of numbers");
  }
  for (double e : c.eps)
    if (!(e > 0.0)) config_fail(f.at("eps"), "values must be positive");
  if (!f.has("min_samples")) config_fail(f.at("min_samples"), "required field is missing");
  c.min_samples = static_cast<int>(positive(f.integer("min_samples", 0), f.at("min_samples")));
  const auto dist = f.text("distance", "jaccard");
  if (dist == "jaccard") c.distance = ClusterDistance::jaccard;
  else if (dist == "raw") c.distance = ClusterDistance::raw;
  else config_fail(f.at("distance"), "expected 'jaccard' or 'raw'");
  f.finish();
  return c;
}

}  // namespace

std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::normalize: return "normalize";
    case Stage::average_views: return "average_views";
    case Stage::ensemble: return "ensemble";
    case Stage::camera_subtract: return "camera_subtract";
    case Stage::tracklet: return "tracklet";
    case Stage::fuse_eq4: return "fuse_eq4";
    case Stage::rerank: return "rerank";
    case Stage::camera_verify: return "camera_verify";
    case Stage::rank: return "rank";
    case Stage::evaluate: return "evaluate";
    case Stage::cluster: return "cluster";
  }
  return "?";
}

Stage parse_stage(std::string_view name) {
  for (Stage s : kAllStages)
    if (to_string(s) == name) return s;
  throw Error(Errc::config_error, "unknown stage '" + std::string(name) + "'");
}

std::vector<Stage> parse_stage_list(std::string_view comma_list) {
  std::vector<Stage> out;
  std::string item;
  std::istringstream ss{std::string(comma_list)};
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(parse_stage(item));
  }
  return out;
}

PipelineConfig parse_config(std::string_view json_text, const fs::path& base_dir) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw Error(Errc::config_error, std::string("<root>: invalid JSON: ") + e.what());
  }
  Fields f(doc, "");
  PipelineConfig cfg;
  const auto& stages = f.raw("stages");
  if (!stages.is_array()) config_fail("stages", "expected an array of stage names");
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const std::string where = "stages[" + std::to_string(i) + "]";
    if (!stages[i].is_string()) config_fail(where, "expected a stage name");
    try {
      cfg.stages.push_back(parse_stage(stages[i].get<std::string>()));
    } catch (const Error& e) {
      config_fail(where, e.what());
    }
  }
  if (f.has("query")) cfg.query = parse_side(doc.at("query"), "query", base_dir);
  if (f.has("gallery")) cfg.gallery = parse_side(doc.at("gallery"), "gallery", base_dir);
  cfg.params = f.has("params") ? parse_params(doc.at("params"), "params") : PipelineParams{};
  const bool wants_cluster = std::ranges::find(cfg.stages, Stage::cluster) != cfg.stages.end();
  if (f.has("cluster")) cfg.cluster = parse_cluster(doc.at("cluster"), "cluster", base_dir);
  else if (wants_cluster) config_fail("cluster", "required by the cluster stage (eps, min_samples)");
  f.finish();
  validate(cfg);
  return cfg;
}

PipelineConfig load_config(const fs::path& path) {
  if (!fs::exists(path)) throw Error(Errc::config_error, "config not found: " + path.string());
  std::ifstream in(path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), fs::absolute(path).parent_path());
}

void validate(const PipelineConfig& cfg) {
  if (cfg.stages.empty()) config_fail("stages", "at least one stage is required");
  std::set<Stage> seen;
  enum class Level { none, all_pairs, query_gallery } level = Level::none;
  bool features_ready = false, masked = false, ranked = false;
  auto need_inputs = [&](const std::string& where) {
    if (!cfg.query || !cfg.gallery) config_fail(where, "requires 'query' and 'gallery' inputs");
  };
  for (std::size_t i = 0; i < cfg.stages.size(); ++i) {
    const Stage s = cfg.stages[i];
    const std::string where = "stages[" + std::to_string(i) + "] (" + std::string(to_string(s)) + ")";
    if (!seen.insert(s).second) config_fail(where, "stage listed twice");
    if (s != Stage::cluster) need_inputs(where);
    const bool needs_unit = s == Stage::camera_subtract || s == Stage::tracklet ||
                            s == Stage::fuse_eq4 || s == Stage::rerank ||
                            s == Stage::camera_verify || s == Stage::rank;
    if (needs_unit && !features_ready)
      config_fail(where, "must follow normalize, average_views or ensemble");
    switch (s) {
      case Stage::normalize:
      case Stage::average_views:
      case Stage::camera_subtract:
        if (level != Level::none) config_fail(where, "feature stage cannot follow a distance stage");
        if (s == Stage::average_views && (cfg.query->views.empty() || cfg.gallery->views.empty()))
          config_fail(where, "requires 'views' manifests for query and gallery");
        features_ready = true;
        break;
      case Stage::ensemble:
        if (level != Level::none) config_fail(where, "feature stage cannot follow a distance stage");
        if (cfg.query->models.empty() || cfg.gallery->models.empty())
          config_fail(where, "requires 'models' manifests for query and gallery");
        if (cfg.params.ensemble_mode == EnsembleMode::distance_mean) level = Level::all_pairs;
        features_ready = true;
        break;
      case Stage::tracklet:
        if (masked) config_fail(where, "must precede camera_verify");
        if (level == Level::all_pairs) level = Level::query_gallery;
        break;
      case Stage::fuse_eq4:
        if (!cfg.query->camera_aux || !cfg.gallery->camera_aux || !cfg.query->orientation_aux ||
            !cfg.gallery->orientation_aux)
          config_fail(where, "requires 'camera_aux' and 'orientation_aux' for query and gallery");
        if (level == Level::none) level = Level::all_pairs;
        break;
      case Stage::rerank:
        if (level == Level::query_gallery)
          config_fail(where, "re-ranking needs all-pairs distances; move it before query x gallery stages");
        level = Level::query_gallery;
        break;
      case Stage::camera_verify:
        level = Level::query_gallery;
        masked = true;
        break;
      case Stage::rank:
        ranked = true;
        break;
      case Stage::evaluate:
        if (!ranked) config_fail(where, "must follow rank");
        break;
      case Stage::cluster:
        if (!cfg.cluster.input) need_inputs(where);
        if (cfg.cluster.eps.empty()) config_fail("cluster.eps", "required by the cluster stage");
        break;
    }
  }
}

// ---------------------------------------------------------------------------
// Execution

namespace {

struct State {
  Dataset q, g;
  std::optional<DistanceMatrix> all_pairs;  // (Q+G) x (Q+G)
  std::optional<DistanceMatrix> qg;
  bool masked = false;
  std::optional<RankList> ranking;
};

Dataset load_unit(const fs::path& p) {
  auto ds = ingest(p);
  if (ds.size() > 0) ds.features = l2_normalize(ds.features);
  return ds;
}

bool has_ground_truth(const State& s) {
  auto labeled = [](const Dataset& d) {
    return std::ranges::all_of(d.metas, [](const ImageMeta& m) { return m.identity.has_value(); });
  };
  return s.q.size() > 0 && s.g.size() > 0 && labeled(s.q) && labeled(s.g);
}

const DistanceMatrix& current_qg(State& s) {
  if (!s.qg) {
    if (s.all_pairs) s.qg = s.all_pairs->block(0, s.q.size(), s.q.size(), s.g.size());
    else s.qg = pairwise(s.q, s.g);
  }
  return *s.qg;
}

DistanceMatrix all_pairs_of(const Dataset& q, const Dataset& g) {
  const auto all = concat(q, g);
  return pairwise(all, all);
}

// Replaces each gallery column by its tracklet's weighted mix of member columns.
DistanceMatrix pool_tracklet_columns(const DistanceMatrix& d, const Dataset& g,
                                     const PipelineParams& p) {
  std::vector<double> w;
  if (p.tracklet_mode == AggregationMode::weighted) {
    w = tracklet_weights(g.features, g.metas, p.tau);
  } else {
    std::map<TrackletKey, std::size_t> sizes;
    for (const auto& m : g.metas) ++sizes[TrackletKey::of(m)];
    for (const auto& m : g.metas) w.push_back(1.0 / static_cast<double>(sizes[TrackletKey::of(m)]));
  }
  std::map<TrackletKey, std::vector<std::size_t>> members;
  for (std::size_t j = 0; j < g.size(); ++j) members[TrackletKey::of(g.metas[j])].push_back(j);

  const std::size_t cols = d.cols();
  std::vector<double> out(d.data().size());
  for (std::size_t i = 0; i < d.rows(); ++i) {
    auto row = d.row(i);
    for (const auto& [key, idx] : members) {
      double pooled = 0.0;
      for (auto j : idx) pooled += w[j] * row[j];
      for (auto j : idx) out[i * cols + j] = p.tracklet_beta * row[j] + (1.0 - p.tracklet_beta) * pooled;
    }
  }
  return DistanceMatrix(d.row_ids(), d.col_ids(), std::move(out), d.kind());
}

EvalOptions eval_options(const PipelineParams& p, bool masked) {
  EvalOptions o;
  o.top_k_map = p.top_k_map;
  o.exclude_same_camera = p.same_camera_relevant ? !*p.same_camera_relevant : masked;
  return o;
}

std::string stage_dir_name(std::size_t index, Stage s) {
  std::ostringstream name;
  name << std::setw(2) << std::setfill('0') << index << '_' << to_string(s);
  return name.str();
}

std::string eps_tag(double eps) {
  std::ostringstream os;
  os << eps;
  return os.str();
}

}  // namespace

PipelineResult run_pipeline(const PipelineConfig& cfg, const fs::path& workdir, std::ostream* log) {
  validate(cfg);
  const PipelineParams& p = cfg.params;
  State s;
  if (cfg.query) s.q = ingest(cfg.query->features);
  if (cfg.gallery) s.g = ingest(cfg.gallery->features);

  PipelineResult result;
  std::error_code ec;
  fs::create_directories(workdir, ec);
  if (ec) throw Error(Errc::io_failure, "cannot create workdir " + workdir.string());

  auto say = [&](const std::string& line) {
    if (log) *log << line << '\n';
  };

  for (std::size_t idx = 0; idx < cfg.stages.size(); ++idx) {
    const Stage stage = cfg.stages[idx];
    const fs::path dir = workdir / stage_dir_name(idx, stage);
    fs::create_directories(dir);
    bool features_changed = false, distances_changed = false;

    switch (stage) {
      case Stage::normalize:
        s.q.features = l2_normalize(s.q.features);
        s.g.features = l2_normalize(s.g.features);
        features_changed = true;
        break;

      case Stage::average_views: {
        auto average = [](const Dataset& main, const std::vector<fs::path>& views) {
          std::vector<Dataset> sets{Dataset{l2_normalize(main.features), main.metas}};
          for (const auto& v : views) sets.push_back(load_unit(v));
          return average_views(sets);
        };
        s.q = average(s.q, cfg.query->views);
        s.g = average(s.g, cfg.gallery->views);
        features_changed = true;
        break;
      }

      case Stage::ensemble: {
        auto models = [](const Dataset& main, const std::vector<fs::path>& paths) {
          std::vector<Dataset> sets{Dataset{l2_normalize(main.features), main.metas}};
          for (const auto& m : paths) sets.push_back(load_unit(m));
          return sets;
        };
        auto qs = models(s.q, cfg.query->models);
        auto gs = models(s.g, cfg.gallery->models);
        if (p.ensemble_mode == EnsembleMode::concat) {
          s.q = ensemble_features(qs);
          s.g = ensemble_features(gs);
          features_changed = true;
        } else {
          std::vector<DistanceMatrix> mats;
          for (std::size_t m = 0; m < qs.size(); ++m) mats.push_back(all_pairs_of(qs[m], gs[m]));
          s.q = qs.front();
          s.g = gs.front();
          s.all_pairs = average_distances(mats);
          distances_changed = true;
        }
        break;
      }

      case Stage::camera_subtract: {
        const auto all = concat(s.q, s.g);
        const auto means = camera_means(all.features, all.metas);
        s.q.features = subtract_camera_mean(s.q.features, s.q.metas, means, p.alpha);
        s.g.features = subtract_camera_mean(s.g.features, s.g.metas, means, p.alpha);
        features_changed = true;
        break;
      }

      case Stage::tracklet:
        if (!s.qg && !s.all_pairs) {
          const auto tf = tracklet_aggregate(s.g.features, s.g.metas, p.tracklet_mode, p.tau);
          s.g.features = fuse_tracklet(s.g.features, s.g.metas, tf, p.tracklet_beta);
          features_changed = true;
        } else {
          s.qg = pool_tracklet_columns(current_qg(s), s.g, p);
          s.all_pairs.reset();
          distances_changed = true;
        }
        break;

      case Stage::fuse_eq4: {
        const auto qc = load_unit(*cfg.query->camera_aux), gc = load_unit(*cfg.gallery->camera_aux);
        const auto qo = load_unit(*cfg.query->orientation_aux), go = load_unit(*cfg.gallery->orientation_aux);
        if (s.qg) {
          s.qg = fuse_distances(*s.qg, pairwise(qc, gc), pairwise(qo, go), p.lambda1, p.lambda2);
        } else {
          const auto base = s.all_pairs ? *s.all_pairs : all_pairs_of(s.q, s.g);
          s.all_pairs = fuse_distances(base, all_pairs_of(qc, gc), all_pairs_of(qo, go), p.lambda1,
                                       p.lambda2);
        }
        distances_changed = true;
        break;
      }

      case Stage::rerank: {
        const auto base = s.all_pairs ? *s.all_pairs : all_pairs_of(s.q, s.g);
        s.qg = rerank_distances(base, s.q.size(), p.rerank);
        s.all_pairs.reset();
        distances_changed = true;
        break;
      }

      case Stage::camera_verify:
        s.qg = camera_verify_mask(current_qg(s), s.q.metas, s.g.metas);
        s.all_pairs.reset();
        s.masked = true;
        distances_changed = true;
        break;

      case Stage::rank:
        s.ranking = rank(current_qg(s), RankOptions{p.top_k, p.i2t}, s.g.metas);
        write_rank_file(dir / "ranking.txt", *s.ranking);
        say("[" + std::string(to_string(stage)) + "] wrote " + (dir / "ranking.txt").string());
        break;

      case Stage::evaluate:
        result.report = evaluate(*s.ranking, s.q.metas, s.g.metas, eval_options(p, s.masked));
        write_report(dir / "report.json", *result.report);
        say("[evaluate] mAP " + std::to_string(result.report->mAP) + "  R-1 " +
            std::to_string(result.report->rank_at(1)));
        break;

      case Stage::cluster: {
        const Dataset all = cfg.cluster.input ? ingest(*cfg.cluster.input) : concat(s.q, s.g);
        PseudoLabelParams lp;
        lp.alpha = cfg.cluster.alpha;
        lp.beta = cfg.cluster.beta;
        lp.rerank = cfg.cluster.rerank;
        lp.distance = cfg.cluster.distance;
        lp.dbscan.min_samples = cfg.cluster.min_samples;
        for (double eps : cfg.cluster.eps) {
          lp.dbscan.eps = eps;
          const auto labels = generate_pseudo_labels(all, lp);
          const fs::path out = dir / ("labels_eps" + eps_tag(eps) + ".csv");
          write_labels(out, all.metas, labels);
          result.label_files.push_back(out);
          say("[cluster] eps " + eps_tag(eps) + ": " + std::to_string(labels.num_clusters) +
              " clusters -> " + out.string());
        }
        break;
      }
    }

    if (features_changed) {
      s.qg.reset();
      s.all_pairs.reset();
      export_dataset(s.q, dir / "query.json");
      export_dataset(s.g, dir / "gallery.json");
    }
    if (distances_changed) {
      if (s.qg) save_distances(*s.qg, dir / "distances.json");
      else if (s.all_pairs) save_distances(*s.all_pairs, dir / "distances.json");
    }
    if ((features_changed || distances_changed) && has_ground_truth(s)) {
      const auto& d = current_qg(s);
      const std::size_t depth = p.top_k_map == 0 ? d.cols() : p.top_k_map;
      const auto rl = rank(d, RankOptions{depth, p.i2t}, s.g.metas);
      const auto rep = evaluate(rl, s.q.metas, s.g.metas, eval_options(p, s.masked));
      result.table.push_back({std::string(to_string(stage)), rep.mAP, rep.rank_at(1)});
      std::ostringstream line;
      line << std::fixed << std::setprecision(4) << "[" << to_string(stage) << "] mAP " << rep.mAP
           << "  R-1 " << rep.rank_at(1);
      say(line.str());
    }
  }

  if (!result.table.empty()) {
    std::ofstream tsv(workdir / "stage_table.tsv", std::ios::trunc);
    tsv << "stage\tmAP\trank1\n";
    tsv << std::fixed << std::setprecision(6);
    for (const auto& r : result.table) tsv << r.stage << '\t' << r.mAP << '\t' << r.rank1 << '\n';
  }
  return result;
}

}  // namespace vreid
