#pragma once

// On-disk synthetic fixture plus a JSON config builder for pipeline runs.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vreid/feature_store.hpp"

namespace vreid::testing {

/// Writes query/gallery manifests and camera/orientation auxiliaries into `dir`.
inline void write_fixture(const std::filesystem::path& dir, const SynthParams& p) {
  const auto all = synth_generate(p);
  const auto [q, g] = split_query_gallery(all);
  export_dataset(q, dir / "query.json");
  export_dataset(g, dir / "gallery.json");
  for (auto kind : {AuxKind::camera, AuxKind::orientation}) {
    const auto aux = synth_aux(all, kind, 16, 0.1, p.seed);
    const auto [qa, ga] = split_query_gallery(aux);
    const std::string tag = kind == AuxKind::camera ? "camera" : "orientation";
    export_dataset(qa, dir / ("query_" + tag + ".json"));
    export_dataset(ga, dir / ("gallery_" + tag + ".json"));
  }
}

inline nlohmann::json fixture_config(const std::vector<std::string>& stages) {
  nlohmann::json side_q = {{"features", "query.json"},
                           {"camera_aux", "query_camera.json"},
                           {"orientation_aux", "query_orientation.json"}};
  nlohmann::json side_g = {{"features", "gallery.json"},
                           {"camera_aux", "gallery_camera.json"},
                           {"orientation_aux", "gallery_orientation.json"}};
  return {{"query", side_q}, {"gallery", side_g}, {"stages", stages}};
}

inline std::filesystem::path write_config(const std::filesystem::path& dir, const nlohmann::json& cfg,
                                          const std::string& name = "config.json") {
  const auto path = dir / name;
  std::ofstream(path) << cfg.dump(2);
  return path;
}

}  // namespace vreid::testing
