#include <doctest.h>

#include <fstream>

#include "support.hpp"
#include "voxsfm/config.hpp"

using namespace voxsfm;
using testsupport::thrown_code;

namespace {

void touch(const std::filesystem::path& p) { std::ofstream(p) << ""; }

std::filesystem::path layout(const std::string& name) {
  const auto dir = testsupport::temp_dir(name);
  std::filesystem::create_directories(dir / "data" / "lidar");
  touch(dir / "data" / "frames.txt");
  touch(dir / "data" / "tracks.txt");
  return dir;
}

}  // namespace

TEST_CASE("defaults survive a dump and parse") {
  const PipelineConfig d;
  const PipelineConfig back = config_from_json(config_to_json(d));
  CHECK(config_to_json(back) == config_to_json(d));
  CHECK(back.voxel.root_size == d.voxel.root_size);
  CHECK(back.registration.anneal_sigmas == d.registration.anneal_sigmas);
  CHECK(back.ba_cadence == d.ba_cadence);
}

TEST_CASE("overrides and fault jumps") {
  const PipelineConfig c = config_from_json(R"({
    "seed": 9,
    "ba": {"cadence": 5, "scale_gauge": "none"},
    "loop": {"profile": "handheld"},
    "fault_pose_jumps": [{"frame": 12, "offset": [0.5, 0, 0]}]
  })");
  CHECK(c.seed == 9);
  CHECK(c.ba_cadence == 5);
  CHECK(c.ba.scale_gauge == ScaleGauge::None);
  CHECK(c.drift_profile == DriftProfile::Handheld);
  CHECK(c.drift.delta_alpha_deg == DriftThresholds::for_profile(DriftProfile::Handheld).delta_alpha_deg);
  REQUIRE(c.fault_pose_jumps.size() == 1);
  CHECK(c.fault_pose_jumps[0].frame == 12);
  CHECK(c.fault_pose_jumps[0].offset == Vec3(0.5, 0, 0));
}

TEST_CASE("bad configs are rejected") {
  CHECK(thrown_code([] { (void)config_from_json(R"({"ba": {"cadense": 5}})"); }) == ErrorCode::ConfigError);
  CHECK(thrown_code([] { (void)config_from_json(R"({"sed": 1})"); }) == ErrorCode::ConfigError);
  CHECK(thrown_code([] { (void)config_from_json(R"({"ba": {"cadence": "five"}})"); }) == ErrorCode::ConfigError);
  CHECK(thrown_code([] { (void)config_from_json(R"({"loop": {"profile": "indoor"}})"); }) == ErrorCode::ConfigError);
  CHECK(thrown_code([] { (void)config_from_json("{not json"); }) == ErrorCode::ConfigError);
}

TEST_CASE("dataset layout and validation") {
  const auto dir = layout("config");
  {
    std::ofstream os(dir / "cfg.json");
    os << R"({"paths": {"dataset": "data", "output_dir": "out"}, "ba": {"cadence": 0}})";
  }
  const PipelineConfig c = config_from_json(R"({"paths": {"dataset": "data", "output_dir": "out"}})", dir);
  CHECK(c.lidar_dir == dir / "data" / "lidar");
  CHECK(c.tracks_file == dir / "data" / "tracks.txt");
  CHECK(c.output_dir == dir / "out");
  CHECK_FALSE(c.images_dir);
  CHECK_NOTHROW(c.validate());

  CHECK(thrown_code([&] { (void)load_config(dir / "cfg.json"); }) == ErrorCode::ConfigError);

  std::filesystem::remove(dir / "data" / "tracks.txt");
  CHECK(thrown_code([&] { c.validate(); }) == ErrorCode::ConfigError);
  CHECK(thrown_code([&] { (void)load_config(dir / "missing.json"); }) == ErrorCode::ConfigError);
}
