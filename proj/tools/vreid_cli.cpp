// vreid: command-line driver for the re-identification post-processing engine.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <CLI11.hpp>
#include <json.hpp>

#include "vreid/error.hpp"
#include "vreid/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

void set_threads(int n) {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

int run_ingest_check(const std::vector<fs::path>& manifests) {
  int status = kExitOk;
  for (const auto& m : manifests) {
    try {
      const auto ds = vreid::ingest(m);
      std::size_t labeled = 0, tracked = 0;
      for (const auto& meta : ds.metas) {
        labeled += meta.identity ? 1 : 0;
        tracked += meta.has_tracklet() ? 1 : 0;
      }
      std::cout << m.string() << ": ok  count=" << ds.features.count() << " dim=" << ds.features.dim()
                << " normalized=" << (ds.features.normalized() ? "yes" : "no")
                << " labeled=" << labeled << " tracked=" << tracked << '\n';
    } catch (const vreid::Error& e) {
      std::cerr << m.string() << ": " << vreid::to_string(e.code()) << ": " << e.what() << '\n';
      status = kExitValidation;
    }
  }
  return status;
}

int run_pipeline_cmd(const fs::path& config_path, const fs::path& workdir,
                     const std::optional<std::string>& stages, bool cluster_only) {
  vreid::PipelineConfig cfg;
  try {
    cfg = vreid::load_config(config_path);
    if (cluster_only) {
      cfg.stages = {vreid::Stage::cluster};
    } else if (stages) {
      cfg.stages = vreid::parse_stage_list(*stages);
    }
    vreid::validate(cfg);
  } catch (const vreid::Error& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitValidation;
  }

  try {
    const auto result = vreid::run_pipeline(cfg, workdir, &std::cout);
    if (!result.table.empty()) {
      std::cout << "\nstage                 mAP      R-1\n";
      for (const auto& row : result.table) {
        std::printf("%-20s  %6.2f   %6.2f\n", row.stage.c_str(), 100.0 * row.mAP, 100.0 * row.rank1);
      }
    }
  } catch (const vreid::Error& e) {
    std::cerr << vreid::to_string(e.code()) << ": " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}

struct EvaluateArgs {
  fs::path distances, query, gallery, out;
  std::size_t top_k = 100;
  std::size_t top_k_map = 100;
  bool camera_verify = false;
  bool i2t = false;
};

int run_evaluate(const EvaluateArgs& a) {
  try {
    const auto d = vreid::load_distances(a.distances);
    const auto q = vreid::ingest(a.query);
    const auto g = vreid::ingest(a.gallery);
    const auto masked = a.camera_verify ? vreid::camera_verify_mask(d, q.metas, g.metas) : d;
    const auto rl = vreid::rank(masked, {a.top_k, a.i2t}, g.metas);
    vreid::EvalOptions opt;
    opt.top_k_map = a.top_k_map;
    opt.exclude_same_camera = a.camera_verify;
    const auto report = vreid::evaluate(rl, q.metas, g.metas, opt);
    if (!a.out.empty()) vreid::write_report(a.out, report);
    std::printf("mAP %.4f  CMC@1 %.4f  CMC@5 %.4f  CMC@10 %.4f  (%zu queries, %zu skipped)\n",
                report.mAP, report.rank_at(1), report.rank_at(5), report.rank_at(10),
                report.num_queries, report.skipped_queries);
  } catch (const vreid::Error& e) {
    std::cerr << vreid::to_string(e.code()) << ": " << e.what() << '\n';
    return e.code() == vreid::Errc::file_missing ? kExitValidation : kExitRuntime;
  }
  return kExitOk;
}

int run_synth(const vreid::SynthParams& p, const fs::path& out) {
  try {
    const auto all = vreid::synth_generate(p);
    const auto [q, g] = vreid::split_query_gallery(all);
    vreid::export_dataset(all, out / "all.json");
    vreid::export_dataset(q, out / "query.json");
    vreid::export_dataset(g, out / "gallery.json");
    for (auto kind : {vreid::AuxKind::camera, vreid::AuxKind::orientation}) {
      const auto aux = vreid::synth_aux(all, kind, 16, 0.1, p.seed);
      const auto [qa, ga] = vreid::split_query_gallery(aux);
      const std::string tag = kind == vreid::AuxKind::camera ? "camera" : "orientation";
      vreid::export_dataset(qa, out / ("query_" + tag + ".json"));
      vreid::export_dataset(ga, out / ("gallery_" + tag + ".json"));
    }
    auto side = [](const std::string& name) {
      return nlohmann::json{{"features", name + ".json"},
                            {"camera_aux", name + "_camera.json"},
                            {"orientation_aux", name + "_orientation.json"}};
    };
    nlohmann::json cfg = {
        {"query", side("query")},
        {"gallery", side("gallery")},
        {"stages", {"normalize", "camera_subtract", "fuse_eq4", "rerank", "tracklet",
                    "camera_verify", "rank", "evaluate", "cluster"}},
        {"params", {{"alpha", 0.18}, {"lambda1", 0.1}, {"lambda2", 0.05}, {"k1", 7}, {"k2", 2},
                    {"lambda", 0.6}, {"tracklet_mode", "weighted"}, {"tracklet_beta", 0.0},
                    {"top_k", 100}, {"top_k_map", 100}}},
        {"cluster", {{"alpha", 0.18}, {"beta", 0.0005}, {"k1", 7}, {"k2", 2},
                     {"eps", {0.6, 0.7}}, {"min_samples", 2}, {"distance", "jaccard"}}}};
    std::ofstream(out / "config.json") << cfg.dump(2) << '\n';
    std::cout << "wrote " << all.size() << " images (" << q.size() << " query, " << g.size()
              << " gallery) to " << out.string() << '\n';
  } catch (const vreid::Error& e) {
    std::cerr << vreid::to_string(e.code()) << ": " << e.what() << '\n';
    return e.code() == vreid::Errc::invalid_argument ? kExitValidation : kExitRuntime;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Vehicle re-identification retrieval and post-processing engine"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "Worker threads (0 = runtime default)");

  auto* ingest_cmd = app.add_subcommand("ingest-check", "Validate feature manifests");
  std::vector<fs::path> manifests;
  ingest_cmd->add_option("manifests", manifests, "Manifest files")->required();

  fs::path config_path, workdir = "vreid_work";
  std::optional<std::string> stages;
  auto* pipeline_cmd = app.add_subcommand("pipeline", "Run the configured stage list");
  pipeline_cmd->add_option("--config", config_path, "Pipeline config (JSON)")->required();
  pipeline_cmd->add_option("--workdir", workdir, "Checkpoint directory");
  pipeline_cmd->add_option("--stages", stages, "Comma-separated stage list override");
  pipeline_cmd->add_option("--threads", threads, "Worker threads");

  auto* cluster_cmd = app.add_subcommand("cluster", "Generate pseudo labels from a config");
  cluster_cmd->add_option("--config", config_path, "Pipeline config (JSON)")->required();
  cluster_cmd->add_option("--workdir", workdir, "Output directory");
  cluster_cmd->add_option("--threads", threads, "Worker threads");

  EvaluateArgs eval;
  auto* eval_cmd = app.add_subcommand("evaluate", "Rank a distance dump and report mAP/CMC");
  eval_cmd->add_option("--distances", eval.distances, "Distance manifest")->required();
  eval_cmd->add_option("--query", eval.query, "Query feature manifest")->required();
  eval_cmd->add_option("--gallery", eval.gallery, "Gallery feature manifest")->required();
  eval_cmd->add_option("--top-k", eval.top_k, "Ranking depth");
  eval_cmd->add_option("--top-k-map", eval.top_k_map, "AP truncation (0 = full list)");
  eval_cmd->add_flag("--camera-verify", eval.camera_verify, "Mask same-camera candidates");
  eval_cmd->add_flag("--i2t", eval.i2t, "Image-to-track ranking");
  eval_cmd->add_option("--out", eval.out, "Report output path");
  eval_cmd->add_option("--threads", threads, "Worker threads");

  vreid::SynthParams synth;
  fs::path synth_out = "synth";
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic query/gallery fixture");
  synth_cmd->add_option("--out", synth_out, "Output directory");
  synth_cmd->add_option("--seed", synth.seed, "Random seed");
  synth_cmd->add_option("--ids", synth.num_ids, "Identities");
  synth_cmd->add_option("--cams", synth.cams, "Cameras");
  synth_cmd->add_option("--tracklets", synth.tracklets_per_id, "Tracklets per identity");
  synth_cmd->add_option("--frames", synth.frames_per_tracklet, "Frames per tracklet");
  synth_cmd->add_option("--dim", synth.dim, "Embedding dimension");
  synth_cmd->add_option("--camera-offset", synth.camera_offset_scale, "Camera offset scale");
  synth_cmd->add_option("--noise", synth.noise_scale, "Noise scale");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }
  set_threads(threads);

  if (*ingest_cmd) return run_ingest_check(manifests);
  if (*pipeline_cmd) return run_pipeline_cmd(config_path, workdir, stages, false);
  if (*cluster_cmd) return run_pipeline_cmd(config_path, workdir, std::nullopt, true);
  if (*eval_cmd) return run_evaluate(eval);
  if (*synth_cmd) return run_synth(synth, synth_out);
  return kExitValidation;
}
