#include <doctest.h>

#include <fstream>
#include <random>

#include "support.hpp"
#include "voxsfm/fusion.hpp"
#include "voxsfm/sim.hpp"

using namespace voxsfm;

namespace {

LidarFrame wall_frame(int index, double x, int n) {
  LidarFrame f;
  f.frame_index = index;
  f.timestamp = 0.1 * index;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) f.points.push_back({Vec3(x, -1.0 + 2.0 * i / (n - 1), -0.5 + 1.0 * j / (n - 1)), 40.0});
  }
  return f;
}

}  // namespace

TEST_CASE("bilinear sampling") {
  RgbImage img(2, 2);
  img.at(0, 0)[0] = 0;
  img.at(1, 0)[0] = 100;
  img.at(0, 1)[0] = 200;
  img.at(1, 1)[0] = 100;
  CHECK(img.sample_bilinear(Vec2(0, 0))->x() == doctest::Approx(0.0));
  CHECK(img.sample_bilinear(Vec2(0.5, 0.0))->x() == doctest::Approx(50.0));
  CHECK(img.sample_bilinear(Vec2(0.5, 0.5))->x() == doctest::Approx(100.0));
  CHECK(img.sample_bilinear(Vec2(1, 1))->x() == doctest::Approx(100.0));
  CHECK_FALSE(img.sample_bilinear(Vec2(-0.1, 0)));
  CHECK_FALSE(img.sample_bilinear(Vec2(1.01, 0)));
}

TEST_CASE("fusion without cameras is gray") {
  const LidarFrame f = wall_frame(0, 3.0, 5);
  const std::vector<LidarFrame> frames{f};
  const std::vector<std::optional<Pose>> poses{Pose()};
  const FusedCloud c = colorize_and_fuse(frames, poses, {});
  REQUIRE(c.points.size() == f.points.size());
  CHECK(c.colored == 0);
  for (std::size_t i = 0; i < f.points.size(); ++i) {
    CHECK(c.points[i].position == f.points[i].position);
    CHECK(c.points[i].rgb == std::array<std::uint8_t, 3>{40, 40, 40});
  }
}

TEST_CASE("camera seeing a red wall") {
  SceneSpec scene;
  PlaneSurface wall;
  wall.normal = Vec3::UnitX();
  wall.offset = 4.0;
  wall.material.color = {255, 0, 0};
  scene.planes.push_back(wall);
  CameraSpec cam;
  const Pose world_from_camera(forward_camera_rotation(), Vec3::Zero());
  const RgbImage image = render_image(scene, cam, world_from_camera);

  const std::vector<LidarFrame> frames{wall_frame(0, 4.0, 9)};
  const std::vector<std::optional<Pose>> poses{Pose()};
  const std::vector<CameraView> views{{0, 0.0, cam.intrinsics, world_from_camera, &image}};
  const FusedCloud c = colorize_and_fuse(frames, poses, views);
  CHECK(c.colored == frames[0].points.size());
  for (const auto& p : c.points) CHECK(p.rgb == std::array<std::uint8_t, 3>{255, 0, 0});

  // Camera turned around: every point is behind it.
  const Pose backwards(Eigen::AngleAxisd(kPi, Vec3::UnitZ()).toRotationMatrix() * forward_camera_rotation(),
                       Vec3::Zero());
  const std::vector<CameraView> behind{{0, 0.0, cam.intrinsics, backwards, &image}};
  const FusedCloud g = colorize_and_fuse(frames, poses, behind);
  CHECK(g.colored == 0);
  for (const auto& p : g.points) CHECK(p.rgb == std::array<std::uint8_t, 3>{40, 40, 40});
}

TEST_CASE("fusion picks the time-closest camera and skips unposed frames") {
  RgbImage green(320, 240), blue(320, 240);
  for (int y = 0; y < 240; ++y) {
    for (int x = 0; x < 320; ++x) {
      green.at(x, y)[1] = 255;
      blue.at(x, y)[2] = 255;
    }
  }
  CameraSpec cam;
  const Pose wc(forward_camera_rotation(), Vec3::Zero());
  const std::vector<CameraView> views{{0, 0.0, cam.intrinsics, wc, &green}, {1, 0.3, cam.intrinsics, wc, &blue}};
  const std::vector<LidarFrame> frames{wall_frame(0, 4.0, 3), wall_frame(1, 4.0, 3), wall_frame(2, 4.0, 3),
                                       wall_frame(3, 4.0, 3)};
  const std::vector<std::optional<Pose>> poses{Pose(), std::nullopt, Pose(), Pose()};
  const FusedCloud c = colorize_and_fuse(frames, poses, views);
  CHECK(c.skipped_frames == std::vector<int>{1});
  CHECK(c.points.size() == 27);
  for (const auto& p : c.points) {
    // t = 0.2 is closer to 0.3; t = 0.0 to 0.0; t = 0.3 to 0.3.
    const auto expected = p.frame_index == 0 ? std::array<std::uint8_t, 3>{0, 255, 0}
                                             : std::array<std::uint8_t, 3>{0, 0, 255};
    CHECK(p.rgb == expected);
  }
}

TEST_CASE("downsampling keeps one point per voxel") {
  const std::vector<LidarFrame> frames{wall_frame(0, 4.0, 21)};
  const std::vector<std::optional<Pose>> poses{Pose()};
  FusionOptions opts;
  opts.downsample_voxel = 0.5;
  const FusedCloud c = colorize_and_fuse(frames, poses, {}, opts);
  // y spans [-1, 1] and z spans [-0.5, 0.5]: 5 x 3 cells (including the far edges).
  CHECK(c.points.size() == 15);
}

TEST_CASE("PLY round trip") {
  FusedCloud c;
  std::mt19937_64 rng(71);
  for (int i = 0; i < 50; ++i) {
    FusedPoint p;
    p.position = testsupport::random_vec(rng, 10.0).cast<float>().cast<double>();
    p.rgb = {static_cast<std::uint8_t>(i), static_cast<std::uint8_t>(2 * i), 7};
    p.intensity = static_cast<float>(i) * 0.5f;
    c.points.push_back(p);
  }
  const auto dir = testsupport::temp_dir("ply");
  for (const bool binary : {true, false}) {
    const auto path = dir / (binary ? "b.ply" : "a.ply");
    write_ply(path, c, binary);
    std::ifstream in(path);
    std::string magic;
    std::getline(in, magic);
    CHECK(magic == "ply");
    const FusedCloud back = read_ply(path);
    REQUIRE(back.points.size() == c.points.size());
    for (std::size_t i = 0; i < c.points.size(); ++i) {
      CHECK((back.points[i].position - c.points[i].position).norm() < 1e-5);
      CHECK(back.points[i].rgb == c.points[i].rgb);
      CHECK(back.points[i].intensity == doctest::Approx(c.points[i].intensity));
    }
  }
  CHECK(testsupport::thrown_code([&] { (void)read_ply(dir / "missing.ply"); }).has_value());
}
