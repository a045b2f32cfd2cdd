#include <doctest.h>

#include <random>
#include <sstream>

#include "support.hpp"
#include "voxsfm/metrics.hpp"
#include "voxsfm/sim.hpp"

using namespace voxsfm;
using testsupport::thrown_code;

namespace {

// Slab-method ray/box distance for a ray starting inside the box.
double inside_box_distance(const Vec3& lo, const Vec3& hi, const Vec3& o, const Vec3& d) {
  double t = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 3; ++i) {
    if (d(i) > 0) t = std::min(t, (hi(i) - o(i)) / d(i));
    if (d(i) < 0) t = std::min(t, (lo(i) - o(i)) / d(i));
  }
  return t;
}

std::vector<Pose> wavy_trajectory(int n) {
  std::vector<Pose> out;
  for (int k = 0; k < n; ++k) {
    Pose p(Eigen::AngleAxisd(0.05 * k, Vec3::UnitZ()).toRotationMatrix(),
           Vec3(0.3 * k, std::sin(0.2 * k), 0.1 * std::cos(0.1 * k)));
    p.timestamp = 0.1 * k;
    out.push_back(p);
  }
  return out;
}

}  // namespace

TEST_CASE("scan of a plane below the sensor") {
  SceneSpec scene;
  scene.planes.push_back({Vec3::UnitZ(), -1.5, {}});
  scene.lidar.range_noise = 0.0;
  std::mt19937_64 rng(81);
  const Pose pose(Eigen::AngleAxisd(0.3, Vec3::UnitZ()).toRotationMatrix(), Vec3(2.0, -1.0, 0.0));
  const LidarFrame f = gen_scan(scene, pose, 4, 0.4, rng);
  CHECK(f.frame_index == 4);
  CHECK(f.timestamp == 0.4);
  CHECK(f.points.size() > 100);
  for (const auto& p : f.points) {
    CHECK(std::abs((pose * p.position).z() + 1.5) < 1e-9);
    CHECK(p.intensity == 100.0);
  }
}

TEST_CASE("scan of a closed box matches analytic intersections") {
  SceneSpec scene;
  const Vec3 lo(-4, -3, -1.5), hi(5, 6, 2.5);
  scene.boxes.push_back({lo, hi, {}});
  scene.lidar.range_noise = 0.0;
  scene.lidar.rings = 8;
  scene.lidar.azimuth_steps = 90;
  std::mt19937_64 rng(82);
  const Pose pose(Mat3::Identity(), Vec3(0.5, 0.2, 0.1));
  const LidarFrame f = gen_scan(scene, pose, 0, 0.0, rng);
  const auto rays = lidar_rays(scene.lidar);
  REQUIRE(f.points.size() == rays.size());
  for (std::size_t i = 0; i < rays.size(); ++i) {
    const double expected = inside_box_distance(lo, hi, pose.translation, rays[i]);
    CHECK(std::abs(f.points[i].position.norm() - expected) < 1e-9);
  }

  SceneSpec empty;
  CHECK(thrown_code([&] { (void)gen_scan(empty, Pose(), 0, 0.0, rng); }) == ErrorCode::NoHits);
}

TEST_CASE("dataset generation is deterministic") {
  SceneSpec scene = default_room_scene();
  scene.trajectory.frames = 4;
  scene.render_images = false;
  const SimDataset a = generate_dataset(scene, 5), b = generate_dataset(scene, 5), c = generate_dataset(scene, 6);
  REQUIRE(a.lidar.size() == 4);
  CHECK(a.lidar[2].points.size() == b.lidar[2].points.size());
  bool same = true, differs = false;
  for (std::size_t i = 0; i < a.lidar[2].points.size(); ++i) {
    same = same && a.lidar[2].points[i].position == b.lidar[2].points[i].position;
    differs = differs || a.lidar[2].points[i].position != c.lidar[2].points[i].position;
  }
  CHECK(same);
  CHECK(differs);
  CHECK(a.visual.size() == 4);
  CHECK_FALSE(a.visual[0].observations.empty());
  for (std::size_t k = 0; k < a.visual.size(); ++k) {
    // Observations sit where the landmarks project.
    for (const auto& o : a.visual[k].observations) {
      const Vec2 px = project_pinhole(a.visual[k].intrinsics, a.gt_camera[k], a.landmarks[static_cast<std::size_t>(o.feature_id)]);
      CHECK((px - o.pixel).norm() < 1e-9);
    }
  }
}

TEST_CASE("scene json round trip") {
  const SceneSpec s = default_room_scene();
  const SceneSpec back = scene_from_json(scene_to_json(s));
  CHECK(scene_to_json(back) == scene_to_json(s));
}

TEST_CASE("simulate_odometry") {
  const auto gt = wavy_trajectory(20);
  const auto exact = simulate_odometry(gt, 0.0, 0.0, {}, 1);
  for (std::size_t k = 0; k < gt.size(); ++k) CHECK((exact[k].matrix() - gt[k].matrix()).norm() < 1e-9);
  const std::vector<PoseJump> jumps{{10, Vec3(0.5, 0, 0)}};
  const auto jumped = simulate_odometry(gt, 0.0, 0.0, jumps, 1);
  CHECK((jumped[9].translation - gt[9].translation).norm() < 1e-9);
  CHECK((jumped[10].translation - gt[10].translation - Vec3(0.5, 0, 0)).norm() < 1e-9);
  CHECK((jumped[19].translation - gt[19].translation - Vec3(0.5, 0, 0)).norm() < 1e-9);
}

TEST_CASE("ape_rpe examples") {
  const auto gt = wavy_trajectory(50);
  const TrajectoryMetrics zero = ape_rpe(gt, gt);
  CHECK(zero.ape_mae == 0.0);
  CHECK(zero.ape_rmse == 0.0);
  CHECK(zero.rpe_mae == 0.0);
  CHECK(zero.rpe_rmse == 0.0);
  CHECK(zero.frames == 50);

  auto shifted = gt;
  for (auto& p : shifted) p.translation += Vec3(1.0, 0, 0);
  CHECK(ape_rpe(shifted, gt, false).ape_mae == doctest::Approx(1.0));
  CHECK(ape_rpe(shifted, gt, true).ape_mae < 1e-9);

  // RPE ignores any global rigid motion of the estimate.
  std::mt19937_64 rng(83);
  const Pose g = testsupport::random_pose(rng, 5.0);
  auto noisy = gt;
  std::normal_distribution<double> n(0.0, 0.05);
  for (auto& p : noisy) p.translation += Vec3(n(rng), n(rng), n(rng));
  auto moved = noisy;
  for (auto& p : moved) {
    const double t = *p.timestamp;
    p = g * p;
    p.timestamp = t;
  }
  const TrajectoryMetrics m0 = ape_rpe(noisy, gt, false, 3), m1 = ape_rpe(moved, gt, false, 3);
  CHECK(m1.rpe_mae == doctest::Approx(m0.rpe_mae).epsilon(1e-9));
  CHECK(m1.rpe_rmse == doctest::Approx(m0.rpe_rmse).epsilon(1e-9));
  // Moving both trajectories together changes nothing.
  auto gt_moved = gt;
  for (auto& p : gt_moved) {
    const double t = *p.timestamp;
    p = g * p;
    p.timestamp = t;
  }
  const TrajectoryMetrics both = ape_rpe(moved, gt_moved, true, 3), base = ape_rpe(noisy, gt, true, 3);
  CHECK(both.ape_rmse == doctest::Approx(base.ape_rmse).epsilon(1e-9));

  const std::vector<Pose> shorter(gt.begin(), gt.end() - 1);
  CHECK(thrown_code([&] { (void)ape_rpe(shorter, gt); }) == ErrorCode::LengthMismatch);
  CHECK(thrown_code([&] { (void)ape_rpe(std::span<const Pose>{}, std::span<const Pose>{}); }) ==
        ErrorCode::DegenerateInput);

  std::ostringstream os;
  write_metrics(os, zero);
  CHECK(os.str().find("ape_mae=0") != std::string::npos);
}

TEST_CASE("APE RMSE of isotropic noise") {
  const int n = 10000;
  const double sigma = 0.1;
  std::vector<Pose> gt, est;
  std::mt19937_64 rng(84);
  std::normal_distribution<double> noise(0.0, sigma);
  for (int k = 0; k < n; ++k) {
    Pose p(Mat3::Identity(), Vec3(0.01 * k, 0, 0));
    p.timestamp = 0.01 * k;
    gt.push_back(p);
    p.translation += Vec3(noise(rng), noise(rng), noise(rng));
    est.push_back(p);
  }
  const TrajectoryMetrics m = ape_rpe(est, gt, false);
  CHECK(m.ape_rmse == doctest::Approx(sigma * std::sqrt(3.0)).epsilon(0.05));
}
