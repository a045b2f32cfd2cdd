#include <doctest.h>

#include <random>
#include <sstream>

#include <Eigen/Dense>

#include "ba_oracle.hpp"
#include "support.hpp"
#include "voxsfm/bundle.hpp"
#include "voxsfm/metrics.hpp"
#include "voxsfm/registration.hpp"
#include "voxsfm/sim.hpp"

using namespace voxsfm;
using testsupport::random_vec;
using testsupport::thrown_code;
using testsupport::DenseBa;
using testsupport::VisualScene;
using testsupport::small_visual_scene;

TEST_CASE("time_weight") {
  CHECK(time_weight(0.0) == doctest::Approx(38.0 / std::exp(1.0) + 1.0));
  CHECK(time_weight(0.0) == doctest::Approx(14.98).epsilon(1e-3));
  CHECK(time_weight(25.0) == doctest::Approx(38.0 / std::exp(2.0) + 1.0));
  CHECK(time_weight(25.0) == doctest::Approx(6.14).epsilon(1e-3));
  CHECK(time_weight(1e6) == doctest::Approx(1.0));
  for (double dt = 0.0; dt < 500.0; dt += 0.5) {
    CHECK(time_weight(dt + 0.5) < time_weight(dt));
    CHECK(time_weight(dt) <= 15.0);
    CHECK(time_weight(dt) > 1.0);
  }
  CHECK(time_weight(0.0, true) == doctest::Approx(16.0 - time_weight(0.0)));
}

TEST_CASE("weighted_point_cost") {
  VoxelMap map;
  for (int k = 0; k < 100; ++k) {
    const int i = (k * 37) % 100;
    map.insert_point(Vec3(0.5 + 0.2 * (i % 10), 0.5 + 0.2 * (i / 10), 1.0), 100.0, 0);
  }
  map.refresh_eigensystems();
  const VoxelNode& node = *map.query_voxel(Vec3(1.4, 1.4, 1.0)).node;
  const auto& cfg = map.config();
  const Vec3 mean = node.stats().mean;
  CHECK(weighted_point_cost(mean, 100.0, Pose(), node, 40, cfg) == 0.0);
  const Vec3 off = mean + Vec3(0, 0, 5e-4);
  CHECK(weighted_point_cost(off, 0.0, Pose(), node, 3, cfg) == 0.0);
  const double c0 = weighted_point_cost(off, 100.0, Pose(), node, 0, cfg);
  const double c100 = weighted_point_cost(off, 100.0, Pose(), node, 100, cfg);
  CHECK(c0 / c100 == doctest::Approx(time_weight(0.0) / time_weight(100.0)).epsilon(1e-12));
  CHECK(c0 == doctest::Approx(time_weight(0.0) * point_to_gaussian_cost(off, 100.0, Pose(), node, cfg)));
}

TEST_CASE("mappoint_voxel_cost") {
  VoxelMap map;
  for (int k = 0; k < 100; ++k) {
    const int i = (k * 37) % 100;
    map.insert_point(Vec3(0.5 + 0.2 * (i % 10), 0.5 + 0.2 * (i / 10), 1.0), 100.0, 0);
  }
  map.refresh_eigensystems();
  const VoxelNode& node = *map.query_voxel(Vec3(1.4, 1.4, 1.0)).node;
  CHECK(mappoint_voxel_cost(node.stats().mean, map) == 0.0);
  CHECK(mappoint_voxel_cost(Vec3(50, 50, 50), map) == 0.0);
  const double d = 7e-4;
  const double e3 = std::max(node.eigensystem().values(2), map.config().eig_floor);
  CHECK(mappoint_voxel_cost(node.stats().mean + d * node.eigensystem().normal(), map) ==
        doctest::Approx(1.0 - std::exp(-d * d / e3)).epsilon(1e-12));
}

TEST_CASE("joint_ba gauge and input errors") {
  std::mt19937_64 rng(51);
  const VisualScene s = small_visual_scene(rng, 3, 20, 0.0);
  BundleProblem p;
  for (std::size_t c = 0; c < s.frames.size(); ++c) p.cameras.push_back({&s.frames[c], s.gt[c], false});
  for (std::size_t i = 0; i < s.points.size(); ++i) {
    MapPoint mp;
    mp.position = s.points[i];
    for (int c = 0; c < 3; ++c) mp.track.push_back({c, static_cast<int>(i)});
    p.points.emplace(static_cast<int>(i), mp);
  }
  BundleOptions unanchored;
  unanchored.anchor_first_camera = false;
  CHECK(thrown_code([&] { (void)joint_ba(p, unanchored); }) == ErrorCode::Gauge);

  BundleProblem empty;
  CHECK(thrown_code([&] { (void)joint_ba(empty); }) == ErrorCode::DegenerateInput);
}

TEST_CASE("joint_ba at a stationary point leaves variables alone") {
  std::mt19937_64 rng(52);
  const VisualScene s = small_visual_scene(rng, 4, 30, 0.0);
  BundleProblem p;
  for (std::size_t c = 0; c < s.frames.size(); ++c) p.cameras.push_back({&s.frames[c], s.gt[c], false});
  for (std::size_t i = 0; i < s.points.size(); ++i) {
    MapPoint mp;
    mp.position = s.points[i];
    for (int c = 0; c < 4; ++c) mp.track.push_back({c, static_cast<int>(i)});
    p.points.emplace(static_cast<int>(i), mp);
  }
  const BundleReport r = joint_ba(p);
  CHECK(r.iterations <= 1);
  for (std::size_t c = 0; c < s.gt.size(); ++c) CHECK((p.cameras[c].pose.matrix() - s.gt[c].matrix()).norm() < 1e-10);
  for (const auto& [id, mp] : p.points) CHECK((mp.position - s.points[static_cast<std::size_t>(id)]).norm() < 1e-10);
}

TEST_CASE("reprojection-only joint_ba matches a dense reference solver") {
  std::mt19937_64 rng(53);
  const VisualScene s = small_visual_scene(rng, 4, 25, 0.5);
  BundleProblem p;
  DenseBa ref;
  for (std::size_t c = 0; c < s.frames.size(); ++c) {
    Pose init = s.gt[c];
    if (c > 0) init = perturb_left(init, (Twist() << random_vec(rng, 0.01), random_vec(rng, 0.03)).finished());
    p.cameras.push_back({&s.frames[c], init, false});
    ref.cams.push_back(init);
  }
  for (std::size_t i = 0; i < s.points.size(); ++i) {
    MapPoint mp;
    mp.position = s.points[i] + random_vec(rng, 0.05);
    for (int c = 0; c < 4; ++c) mp.track.push_back({c, static_cast<int>(i)});
    p.points.emplace(static_cast<int>(i), mp);
    ref.pts.push_back(mp.position);
  }
  ref.gauge_distance = (ref.cams[1].translation - ref.cams[0].translation).norm();

  BundleOptions opts;
  opts.max_iterations = 200;
  opts.relative_decrease_tol = 0.0;
  opts.step_tol = 1e-14;
  const BundleReport r = joint_ba(p, opts);
  ref.solve(s, 200);

  CHECK(r.final_energy.e_l == 0.0);
  CHECK(r.final_energy.e == doctest::Approx(ref.energy(s)).epsilon(1e-9));
  double worst = 0.0;
  for (std::size_t c = 0; c < ref.cams.size(); ++c) {
    worst = std::max(worst, (p.cameras[c].pose.matrix() - ref.cams[c].matrix()).cwiseAbs().maxCoeff());
  }
  for (std::size_t i = 0; i < ref.pts.size(); ++i) {
    worst = std::max(worst, (p.points.at(static_cast<int>(i)).position - ref.pts[i]).cwiseAbs().maxCoeff());
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("joint_ba on a simulated scene") {
  SceneSpec scene = default_room_scene();
  scene.trajectory.frames = 20;
  scene.render_images = false;
  const SimDataset data = generate_dataset(scene, 7);

  VoxelMap map;
  for (std::size_t k = 0; k < data.lidar.size(); ++k) insert_frame(map, data.lidar[k], data.gt_lidar[k]);
  map.refresh_eigensystems();

  std::mt19937_64 rng(54);
  std::normal_distribution<double> n(0.0, 1.0);
  auto perturb = [&](const Pose& p) {
    Twist d;
    d << Vec3(n(rng), n(rng), n(rng)) * deg2rad(1.0) / std::sqrt(3.0), Vec3(n(rng), n(rng), n(rng)) * 0.05 / std::sqrt(3.0);
    return perturb_left(p, d);
  };

  BundleProblem p;
  p.map = &map;
  for (std::size_t k = 0; k < data.lidar.size(); ++k) p.lidar.push_back({&data.lidar[k], perturb(data.gt_lidar[k]), false});
  for (std::size_t k = 0; k < data.visual.size(); ++k) {
    p.cameras.push_back({&data.visual[k], k == 0 ? data.gt_camera[k] : perturb(data.gt_camera[k]), false});
    for (const auto& o : data.visual[k].observations) {
      MapPoint& mp = p.points[o.feature_id];
      mp.position = data.landmarks[static_cast<std::size_t>(o.feature_id)];
      mp.track.push_back({data.visual[k].frame_index, o.feature_id});
    }
  }
  for (auto it = p.points.begin(); it != p.points.end();) {
    if (it->second.track.size() < 2) {
      it = p.points.erase(it);
    } else {
      it->second.position += Vec3(n(rng), n(rng), n(rng)) * 0.02;
      ++it;
    }
  }

  BundleOptions opts;
  opts.lidar_point_stride = 4;
  const BundleReport r = joint_ba(p, opts);
  CHECK(r.final_energy.e < r.initial.e);
  double prev = r.initial.e;
  for (const auto& entry : r.log) {
    CHECK(entry.energy.e < prev);
    prev = entry.energy.e;
  }

  std::vector<Pose> lidar_est, cam_est;
  for (const auto& b : p.lidar) lidar_est.push_back(b.pose);
  for (const auto& b : p.cameras) cam_est.push_back(b.pose);
  CHECK(ape_rpe(lidar_est, data.gt_lidar, false).ape_mae < 5e-3);
  CHECK(ape_rpe(cam_est, data.gt_camera, false).ape_mae < 5e-3);

  std::ostringstream log;
  write_ba_log(log, r);
  const std::string text = log.str();
  CHECK(std::count(text.begin(), text.end(), '\n') >= static_cast<long>(r.log.size()));
}

TEST_CASE("refresh with unchanged poses is a no-op") {
  std::mt19937_64 rng(55);
  VoxelMap map;
  std::vector<LidarFrame> frames;
  std::vector<Pose> poses;
  for (int k = 0; k < 3; ++k) {
    poses.emplace_back(Eigen::AngleAxisd(0.1 * k, Vec3::UnitZ()).toRotationMatrix(), Vec3(0.3 * k, 0, 0));
    frames.push_back(testsupport::three_plane_scan(poses.back(), 5.0, -1.2, 0.15, 0.01, rng, k));
  }
  VoxelRefreshPlan plan;
  for (int k = 0; k < 3; ++k) {
    const auto mask = insert_frame(map, frames[static_cast<std::size_t>(k)], poses[static_cast<std::size_t>(k)]);
    plan.frames.push_back({&frames[static_cast<std::size_t>(k)], poses[static_cast<std::size_t>(k)],
                           poses[static_cast<std::size_t>(k)], mask});
  }
  std::ostringstream before, after;
  map.dump(before);
  const RefreshReport rep = refresh_voxel_map(map, plan);
  map.dump(after);
  CHECK(rep.frames_changed == 0);
  CHECK(rep.deleted == 0);
  CHECK(before.str() == after.str());
}

TEST_CASE("single-frame refresh equals a rebuild") {
  std::mt19937_64 rng(56);
  VoxelMapConfig cfg;
  cfg.sigma_d = 1e-9;
  VoxelMap map(cfg);
  const LidarFrame f = testsupport::three_plane_scan(Pose(), 4.0, -1.0, 0.2, 0.02, rng);
  VoxelRefreshPlan plan;
  plan.frames.push_back({&f, Pose(), Pose(Mat3::Identity(), Vec3(1.0, 0, 0)), insert_frame(map, f, Pose())});
  const RefreshReport rep = refresh_voxel_map(map, plan);
  CHECK(rep.frames_changed == 1);
  CHECK(rep.missing == 0);
  const RefreshAudit audit = audit_refresh(map, plan, 1e-7);
  CHECK(audit.identical());
  CHECK(audit.matched > 0);
  CHECK(audit.max_stat_error < 1e-7);
}

TEST_CASE("two-phase refresh survives a voxel that empties mid-refresh") {
  // Frame b's plane occupies cell [0,3)^3 and moves out; frame a's identical
  // plane moves into that cell. Deleting b before adding a is what keeps a's points.
  LidarFrame a, b;
  a.frame_index = 0;
  b.frame_index = 1;
  for (int k = 0; k < 100; ++k) {
    const int i = (k * 37) % 100;
    a.points.push_back({Vec3(0.5 + 0.2 * (i % 10), 0.5 + 0.2 * (i / 10), 1.0), 100.0});
    b.points.push_back({Vec3(0.5 + 0.2 * (i % 10), 0.5 + 0.2 * (i / 10), 1.0), 100.0});
  }
  const Pose a_old(Mat3::Identity(), Vec3(-3.0, 0, 0)), a_new;
  const Pose b_old, b_new(Mat3::Identity(), Vec3(6.0, 0, 0));

  auto build = [&](VoxelRefreshPlan& plan) {
    VoxelMap map;
    const auto ma = insert_frame(map, a, a_old);
    const auto mb = insert_frame(map, b, b_old);
    plan.frames = {{&a, a_old, a_new, ma}, {&b, b_old, b_new, mb}};
    return map;
  };

  VoxelRefreshPlan two_phase_plan;
  VoxelMap two_phase = build(two_phase_plan);
  REQUIRE(two_phase.query_voxel(Vec3(1.5, 1.5, 1.0)).node->is_plane());
  refresh_voxel_map(two_phase, two_phase_plan, RefreshOrder::TwoPhase);
  CHECK(audit_refresh(two_phase, two_phase_plan).identical());
  const VoxelQuery moved = two_phase.query_voxel(Vec3(1.0, 1.0, 1.0));
  REQUIRE(moved);
  CHECK(moved.node->creation_time() == a.frame_index);

  VoxelRefreshPlan interleaved_plan;
  VoxelMap interleaved = build(interleaved_plan);
  refresh_voxel_map(interleaved, interleaved_plan, RefreshOrder::Interleaved);
  CHECK_FALSE(audit_refresh(interleaved, interleaved_plan).identical());
}

TEST_CASE("multi-frame refresh audit") {
  std::mt19937_64 rng(57);
  VoxelMap map;
  std::vector<LidarFrame> frames;
  std::vector<Pose> poses;
  for (int k = 0; k < 10; ++k) {
    poses.emplace_back(Eigen::AngleAxisd(0.05 * k, Vec3::UnitZ()).toRotationMatrix(), Vec3(0.2 * k, 0.1 * k, 0));
    frames.push_back(testsupport::three_plane_scan(poses.back(), 5.0, -1.2, 0.2, 0.01, rng, k, 0.01 * k));
  }
  VoxelRefreshPlan plan;
  for (std::size_t k = 0; k < frames.size(); ++k) {
    const Pose updated = perturb_left(poses[k], (Twist() << random_vec(rng, 0.005), random_vec(rng, 0.02)).finished());
    plan.frames.push_back({&frames[k], poses[k], updated, insert_frame(map, frames[k], poses[k])});
  }
  const RefreshReport rep = refresh_voxel_map(map, plan);
  CHECK(rep.frames_changed == 10);
  CHECK(rep.missing == 0);
  const RefreshAudit audit = audit_refresh(map, plan, 1e-6);
  CHECK(audit.matched > 0);
  CHECK(audit.max_stat_error < 1e-6);
  MESSAGE("refresh audit: matched " << audit.matched << ", mismatched " << audit.mismatched.size());
}
