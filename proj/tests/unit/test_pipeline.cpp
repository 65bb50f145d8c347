#include <doctest.h>

#include <fstream>
#include <sstream>

#include "../fixture.hpp"
#include "../test_util.hpp"
#include "vreid/pipeline.hpp"

using namespace vreid;
using vreid::testing::TempDir;

namespace {

std::string config_error_of(const std::filesystem::path& dir, const nlohmann::json& cfg) {
  try {
    parse_config(cfg.dump(), dir);
  } catch (const Error& e) {
    CHECK(e.code() == Errc::config_error);
    return e.what();
  }
  FAIL("expected a config error");
  return {};
}

bool contains(const std::string& text, const std::string& part) { return text.find(part) != std::string::npos; }

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("config validation names the field") {
  TempDir tmp;
  vreid::testing::write_fixture(tmp.path(), SynthParams{6, 2, 2, 3, 8, 0.5, 0.15, 1});
  const auto base = vreid::testing::fixture_config({"normalize", "rank", "evaluate"});
  CHECK_NOTHROW(parse_config(base.dump(), tmp.path()));

  auto cfg = base;
  cfg["query"]["features"] = "nowhere.json";
  auto msg = config_error_of(tmp.path(), cfg);
  CHECK(contains(msg, "query.features"));
  CHECK(contains(msg, "nowhere.json"));

  cfg = base;
  cfg["params"] = {{"alpha", "big"}};
  CHECK(contains(config_error_of(tmp.path(), cfg), "params.alpha"));

  cfg = base;
  cfg["params"] = {{"colour", 1}};
  CHECK(contains(config_error_of(tmp.path(), cfg), "params.colour"));

  cfg = base;
  cfg["stages"] = {"normalize", "teleport"};
  CHECK(contains(config_error_of(tmp.path(), cfg), "stages[1]"));

  cfg = base;
  cfg["params"] = {{"k1", 2}, {"k2", 5}};
  CHECK(contains(config_error_of(tmp.path(), cfg), "params"));

  cfg = vreid::testing::fixture_config({"normalize", "cluster"});
  CHECK(contains(config_error_of(tmp.path(), cfg), "cluster"));
  cfg["cluster"] = {{"eps", 0.5}};
  CHECK(contains(config_error_of(tmp.path(), cfg), "cluster.min_samples"));
  cfg["cluster"] = {{"eps", {0.5, -1}}, {"min_samples", 2}};
  CHECK(contains(config_error_of(tmp.path(), cfg), "cluster.eps"));
}

TEST_CASE("stage ordering rules") {
  TempDir tmp;
  vreid::testing::write_fixture(tmp.path(), SynthParams{6, 2, 2, 3, 8, 0.5, 0.15, 1});
  auto bad = [&](std::vector<std::string> stages, const std::string& part) {
    const auto msg = config_error_of(tmp.path(), vreid::testing::fixture_config(stages));
    CHECK_MESSAGE(contains(msg, part), msg);
  };
  bad({"rank", "evaluate"}, "stages[0]");
  bad({"normalize", "evaluate"}, "must follow rank");
  bad({"normalize", "rerank", "normalize"}, "twice");
  bad({"normalize", "rerank", "camera_subtract"}, "cannot follow a distance stage");
  bad({"normalize", "camera_verify", "tracklet"}, "must precede camera_verify");
  bad({"normalize", "camera_verify", "rerank"}, "re-ranking");
  bad({"average_views", "rank"}, "views");
  bad({"ensemble", "rank"}, "models");
  bad({}, "stages");
  auto no_aux = vreid::testing::fixture_config({"normalize", "fuse_eq4", "rank"});
  no_aux["query"].erase("camera_aux");
  CHECK(contains(config_error_of(tmp.path(), no_aux), "camera_aux"));
}

TEST_CASE("minimal pipeline produces a report") {
  TempDir tmp;
  vreid::testing::write_fixture(tmp.path(), SynthParams{10, 3, 2, 3, 8, 0.5, 0.15, 2});
  const auto cfg = load_config(
      vreid::testing::write_config(tmp.path(), vreid::testing::fixture_config({"normalize", "rank", "evaluate"})));
  const auto result = run_pipeline(cfg, tmp / "work");
  REQUIRE(result.report);
  CHECK(result.report->mAP > 0.0);
  CHECK(result.table.size() >= 1);
  CHECK(std::filesystem::exists(tmp / "work" / "stage_table.tsv"));
  CHECK(std::filesystem::exists(tmp / "work" / "00_normalize"));
}

TEST_CASE("full stack is deterministic with one table row per scored stage") {
  TempDir tmp;
  vreid::testing::write_fixture(tmp.path(), SynthParams{12, 3, 2, 3, 8, 0.5, 0.15, 3});
  auto json = vreid::testing::fixture_config({"normalize", "camera_subtract", "fuse_eq4", "rerank", "tracklet",
                                              "camera_verify", "rank", "evaluate", "cluster"});
  json["cluster"] = {{"eps", {0.5, 0.6}}, {"min_samples", 2}};
  const auto cfg = load_config(vreid::testing::write_config(tmp.path(), json));
  const auto a = run_pipeline(cfg, tmp / "a");
  const auto b = run_pipeline(cfg, tmp / "b");
  CHECK(a.table.size() >= 6);
  CHECK(a.label_files.size() == 2);
  REQUIRE(a.report);
  CHECK(a.report->mAP == b.report->mAP);
  for (const auto& entry : std::filesystem::recursive_directory_iterator(tmp / "a")) {
    if (!entry.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(entry.path(), tmp / "a");
    CHECK_MESSAGE(slurp(entry.path()) == slurp(tmp / "b" / rel), rel.string());
  }
}

TEST_CASE("stage list parsing") {
  CHECK(parse_stage_list("normalize, rerank ,rank") ==
        std::vector<Stage>{Stage::normalize, Stage::rerank, Stage::rank});
  CHECK(vreid::testing::error_code_of([] { parse_stage_list("normalize,bogus"); }) == Errc::config_error);
}
