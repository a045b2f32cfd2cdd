// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria.

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ba_oracle.hpp"
#include "support.hpp"
#include "voxsfm/bundle.hpp"
#include "voxsfm/io.hpp"
#include "voxsfm/loopclosure.hpp"
#include "voxsfm/metrics.hpp"
#include "voxsfm/registration.hpp"
#include "voxsfm/sim.hpp"
#include "voxsfm/visual.hpp"
#include "voxsfm/voxelmap.hpp"

using namespace voxsfm;
using testsupport::random_vec;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

class Clock {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

bool inside(const VoxelNode& n, const Vec3& x) {
  for (int i = 0; i < 3; ++i) {
    if (x(i) < n.origin()(i) || x(i) >= n.origin()(i) + n.size()) return false;
  }
  return true;
}

Outcome incremental_stats() {
  const Clock clock;
  VoxelMapConfig cfg;
  cfg.sigma_d = 1e-9;  // nothing freezes, so every point stays in the tree
  double worst = 0.0;
  bool counts_ok = true;
  std::size_t nodes = 0;
  for (int seq = 0; seq < 1000; ++seq) {
    std::mt19937_64 rng(1000 + static_cast<std::uint64_t>(seq));
    VoxelMap map(cfg);
    std::vector<Vec3> live;
    const int ops = 100 + static_cast<int>(rng() % 200);
    for (int op = 0; op < ops; ++op) {
      if (!live.empty() && rng() % 3 == 0) {
        const std::size_t k = rng() % live.size();
        map.remove_point(live[k]);
        live.erase(live.begin() + static_cast<long>(k));
      } else {
        live.push_back(random_vec(rng, 3.5) + Vec3::Constant(0.01));
        map.insert_point(live.back(), 10.0, op);
      }
    }
    map.visit_nodes([&](const VoxelKey&, const std::string&, const VoxelNode& n) {
      std::vector<Vec3> mine;
      for (const auto& p : live) {
        if (inside(n, p)) mine.push_back(p);
      }
      counts_ok = counts_ok && n.stats().count == mine.size();
      const auto o = testsupport::batch_oracle(mine);
      worst = std::max({worst, (n.stats().mean - o.mean).cwiseAbs().maxCoeff(),
                        (n.stats().covariance - o.cov).cwiseAbs().maxCoeff()});
      ++nodes;
    });
  }
  const double t = clock.seconds();
  return {counts_ok && worst < 1e-7 && t < 10.0,
          std::to_string(nodes) + " nodes, max error " + fmt("%.2e", worst) + ", " + fmt("%.2f", t) + " s"};
}

Outcome planarity() {
  std::mt19937_64 rng(2000);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const VoxelMapConfig cfg;
  int correct = 0, total = 0;
  double worst_plane_ratio = 0.0;
  auto classify = [&](const std::vector<Vec3>& pts) {
    GaussianStats s;
    for (const auto& p : pts) s = stats_add(s, p);
    return eig3_sym(s.covariance);
  };
  for (int f = 0; f < 200; ++f) {
    const Mat3 axes = testsupport::random_rotation(rng);
    const Vec3 center = random_vec(rng, 5.0);
    const double extent = std::uniform_real_distribution<double>(0.2, 1.5)(rng);
    // Square-ish grid patch, so the in-plane spread is comparable along both axes.
    const int side = 4 + static_cast<int>(rng() % 7);
    const double aspect = std::uniform_real_distribution<double>(0.8, 1.0)(rng);
    std::vector<Vec3> plane, blob, line;
    for (int i = 0; i < side; ++i) {
      for (int j = 0; j < side; ++j) {
        const double a = extent * (2.0 * i / (side - 1) - 1.0), b = aspect * extent * (2.0 * j / (side - 1) - 1.0);
        plane.push_back(center + axes * Vec3(a, b, 0.0));
        blob.push_back(center + axes * Vec3(extent * n(rng), extent * n(rng), extent * n(rng)));
        line.push_back(center + axes * Vec3(extent * u(rng), 0.0, 0.0));
      }
    }
    const EigenSystem3 ep = classify(plane);
    worst_plane_ratio = std::max(worst_plane_ratio, ep.values(2) / ep.values(0));
    correct += is_planar(ep, cfg.sigma_d, cfg.sigma_s) ? 1 : 0;
    correct += is_planar(classify(blob), cfg.sigma_d, cfg.sigma_s) ? 0 : 1;
    correct += is_planar(classify(line), cfg.sigma_d, cfg.sigma_s) ? 0 : 1;
    total += 3;
  }
  return {correct == total, std::to_string(correct) + "/" + std::to_string(total) +
                                " correct, worst plane e3/e1 " + fmt("%.1e", worst_plane_ratio)};
}

Outcome registration_recovery() {
  const Clock clock;
  int ok = 0;
  double worst_t = 0.0, worst_r = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    std::mt19937_64 rng(3000 + static_cast<std::uint64_t>(trial));
    VoxelMap map;
    insert_frame(map, testsupport::three_plane_scan(Pose(), 6.0, -1.5, 0.05, 0.01, rng), Pose());
    map.refresh_eigensystems();
    const Pose gt(testsupport::random_small_rotation(rng, 15.0), random_vec(rng, 0.8));
    const LidarFrame scan = testsupport::three_plane_scan(gt, 6.0, -1.5, 0.1, 0.01, rng, 1, 0.025);
    const double dt = std::uniform_real_distribution<double>(0.0, 0.3)(rng);
    const double dr = std::uniform_real_distribution<double>(0.0, 5.0)(rng);
    const Pose init(testsupport::random_small_rotation(rng, dr) * gt.rotation,
                    gt.translation + dt * random_vec(rng, 1.0).normalized());
    try {
      const RegistrationResult r = register_lidar_frame(scan, init, map);
      const double et = (r.pose.translation - gt.translation).norm();
      const double er = testsupport::angle_between_deg(r.pose.rotation, gt.rotation);
      worst_t = std::max(worst_t, et);
      worst_r = std::max(worst_r, er);
      if (et < 1e-2 && er < 0.1) ++ok;
    } catch (const Error&) {
    }
  }
  const double t = clock.seconds();
  return {ok >= 95 && t < 60.0, std::to_string(ok) + "/100 recovered, worst " + fmt("%.4f", worst_t) + " m / " +
                                    fmt("%.4f", worst_r) + " deg, " + fmt("%.1f", t) + " s"};
}

Outcome gradient_checks() {
  std::mt19937_64 rng(4000);
  const double h = 1e-6;
  int p2g_ok = 0, rep_ok = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    VoxelMapConfig cfg;
    cfg.max_depth = 0;
    VoxelMap map(cfg);
    const Mat3 axes = testsupport::random_rotation(rng);
    const Vec3 scales(0.5, 0.3, std::uniform_real_distribution<double>(0.05, 0.2)(rng));
    std::normal_distribution<double> n(0.0, 1.0);
    for (int i = 0; i < 60; ++i) {
      map.insert_point(Vec3(1.5, 1.5, 1.5) + axes * scales.cwiseProduct(Vec3(n(rng), n(rng), n(rng))) * 0.5, 100.0, 0);
    }
    const VoxelQuery q = map.query_voxel(Vec3(1.5, 1.5, 1.5));
    if (!q.mature) continue;
    const Pose pose = testsupport::random_pose(rng, 1.0);
    const EigenSystem3 es = q.node->eigensystem();
    const double sd = std::sqrt(es.values(2));
    const Vec3 along = random_vec(rng, 0.3);
    const Vec3 xw = q.node->stats().mean + along - es.normal() * es.normal().dot(along) +
                    es.normal() * std::uniform_real_distribution<double>(-1.5 * sd, 1.5 * sd)(rng);
    const Vec3 xl = pose.inverse() * xw;
    const double intensity = std::uniform_real_distribution<double>(5.0, 255.0)(rng);
    const Vec6 analytic = point_to_gaussian_gradient(xl, intensity, pose, *q.node, cfg);
    Vec6 numeric;
    for (int k = 0; k < 6; ++k) {
      Twist d = Twist::Zero();
      d(k) = h;
      numeric(k) = (point_to_gaussian_cost(xl, intensity, perturb_left(pose, d), *q.node, cfg) -
                    point_to_gaussian_cost(xl, intensity, perturb_left(pose, -d), *q.node, cfg)) /
                   (2 * h);
    }
    if ((analytic - numeric).norm() <= 1e-5 * numeric.norm()) ++p2g_ok;
  }

  const PinholeIntrinsics k{500.0, 500.0, 320.0, 240.0};
  auto project = [&](const Pose& wc, const Vec3& xw) {
    const Vec3 xc = wc.rotation.transpose() * (xw - wc.translation);
    return Vec2(k.fu * xc.x() / xc.z() + k.cu, k.fv * xc.y() / xc.z() + k.cv);
  };
  for (int trial = 0; trial < 1000; ++trial) {
    const Pose wc(testsupport::random_small_rotation(rng, 20.0), random_vec(rng, 1.0));
    std::uniform_real_distribution<double> lateral(-2.0, 2.0), depth(2.0, 10.0);
    const Vec3 xw = wc * Vec3(lateral(rng), lateral(rng), depth(rng));
    const Vec2 obs = project(wc, xw) + Vec2(3.0, -2.0);
    const ReprojectionJacobian j = reprojection_jacobian(k, wc, xw, obs);
    Eigen::Matrix<double, 2, 6> num_pose;
    for (int c = 0; c < 6; ++c) {
      Twist d = Twist::Zero();
      d(c) = h;
      num_pose.col(c) = (project(perturb_left(wc, d), xw) - project(perturb_left(wc, -d), xw)) / (2 * h);
    }
    Eigen::Matrix<double, 2, 3> num_point;
    for (int c = 0; c < 3; ++c) {
      Vec3 d = Vec3::Zero();
      d(c) = h;
      num_point.col(c) = (project(wc, xw + d) - project(wc, xw - d)) / (2 * h);
    }
    if ((j.d_pose - num_pose).norm() <= 1e-5 * num_pose.norm() &&
        (j.d_point - num_point).norm() <= 1e-5 * num_point.norm()) {
      ++rep_ok;
    }
  }
  return {p2g_ok == 1000 && rep_ok == 1000,
          "point-to-gaussian " + std::to_string(p2g_ok) + "/1000, reprojection " + std::to_string(rep_ok) + "/1000"};
}

Outcome time_weight_contract() {
  const double w0 = time_weight(0.0);
  bool decreasing = true, bounded = w0 <= 15.0;
  // Beyond a few hundred the excess over 1 drops below double resolution.
  for (double dt = 0.0; dt < 500.0; dt += 0.25) {
    decreasing = decreasing && time_weight(dt + 0.25) < time_weight(dt);
    bounded = bounded && time_weight(dt) <= 15.0 && time_weight(dt) > 1.0;
  }
  const double tail = time_weight(1e6);
  return {w0 >= 14.9 && w0 <= 15.0 && decreasing && bounded && std::abs(tail - 1.0) < 1e-9,
          "w(0) " + fmt("%.4f", w0) + ", w(1e6) " + fmt("%.9f", tail)};
}

Outcome joint_ba_scene() {
  SceneSpec scene = default_room_scene();
  scene.trajectory.frames = 20;
  scene.render_images = false;
  const SimDataset data = generate_dataset(scene, 7);
  VoxelMap map;
  for (std::size_t k = 0; k < data.lidar.size(); ++k) insert_frame(map, data.lidar[k], data.gt_lidar[k]);
  map.refresh_eigensystems();

  std::mt19937_64 rng(5000);
  std::normal_distribution<double> n(0.0, 1.0);
  auto perturb = [&](const Pose& p) {
    Twist d;
    d << Vec3(n(rng), n(rng), n(rng)) * deg2rad(1.0) / std::sqrt(3.0),
        Vec3(n(rng), n(rng), n(rng)) * 0.05 / std::sqrt(3.0);
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
  bool monotone = r.final_energy.e < r.initial.e;
  double prev = r.initial.e;
  for (const auto& entry : r.log) {
    monotone = monotone && entry.energy.e < prev;
    prev = entry.energy.e;
  }
  std::vector<Pose> lidar_est, cam_est;
  for (const auto& b : p.lidar) lidar_est.push_back(b.pose);
  for (const auto& b : p.cameras) cam_est.push_back(b.pose);
  const double ape_l = ape_rpe(lidar_est, data.gt_lidar, false).ape_mae;
  const double ape_c = ape_rpe(cam_est, data.gt_camera, false).ape_mae;

  // Without LiDAR residuals the solver reduces to plain reprojection BA.
  std::mt19937_64 rng2(5001);
  const testsupport::VisualScene s = testsupport::small_visual_scene(rng2, 5, 30, 0.5);
  BundleProblem vp;
  testsupport::DenseBa ref;
  for (std::size_t c = 0; c < s.frames.size(); ++c) {
    Pose init = s.gt[c];
    if (c > 0) init = perturb_left(init, (Twist() << random_vec(rng2, 0.01), random_vec(rng2, 0.03)).finished());
    vp.cameras.push_back({&s.frames[c], init, false});
    ref.cams.push_back(init);
  }
  for (std::size_t i = 0; i < s.points.size(); ++i) {
    MapPoint mp;
    mp.position = s.points[i] + random_vec(rng2, 0.05);
    for (int c = 0; c < static_cast<int>(s.frames.size()); ++c) mp.track.push_back({c, static_cast<int>(i)});
    vp.points.emplace(static_cast<int>(i), mp);
    ref.pts.push_back(mp.position);
  }
  ref.gauge_distance = (ref.cams[1].translation - ref.cams[0].translation).norm();
  BundleOptions vopts;
  vopts.max_iterations = 200;
  vopts.relative_decrease_tol = 0.0;
  vopts.step_tol = 1e-14;
  (void)joint_ba(vp, vopts);
  ref.solve(s, 200);
  double diff = 0.0;
  for (std::size_t c = 0; c < ref.cams.size(); ++c) {
    diff = std::max(diff, (vp.cameras[c].pose.matrix() - ref.cams[c].matrix()).cwiseAbs().maxCoeff());
  }
  for (std::size_t i = 0; i < ref.pts.size(); ++i) {
    diff = std::max(diff, (vp.points.at(static_cast<int>(i)).position - ref.pts[i]).cwiseAbs().maxCoeff());
  }

  return {monotone && ape_l < 5e-3 && ape_c < 5e-3 && diff < 1e-9,
          std::string(monotone ? "monotone" : "NOT monotone") + " over " + std::to_string(r.log.size()) +
              " steps, APE lidar " + fmt("%.2e", ape_l) + " camera " + fmt("%.2e", ape_c) +
              ", reprojection-only diff " + fmt("%.1e", diff)};
}

Outcome voxel_refresh() {
  std::mt19937_64 rng(6000);
  // Identity delta.
  VoxelMap map;
  std::vector<LidarFrame> frames;
  std::vector<Pose> poses;
  for (int k = 0; k < 4; ++k) {
    poses.emplace_back(Eigen::AngleAxisd(0.1 * k, Vec3::UnitZ()).toRotationMatrix(), Vec3(0.3 * k, 0, 0));
    frames.push_back(testsupport::three_plane_scan(poses.back(), 5.0, -1.2, 0.15, 0.01, rng, k));
  }
  VoxelRefreshPlan plan;
  for (std::size_t k = 0; k < frames.size(); ++k) {
    plan.frames.push_back({&frames[k], poses[k], poses[k], insert_frame(map, frames[k], poses[k])});
  }
  std::ostringstream before, after;
  map.dump(before);
  (void)refresh_voxel_map(map, plan);
  map.dump(after);
  const bool noop = before.str() == after.str();

  // One frame moves; compare with a map built directly at the new pose.
  const LidarFrame f = testsupport::three_plane_scan(Pose(), 4.0, -1.0, 0.2, 0.02, rng);
  const Pose moved(Eigen::AngleAxisd(0.05, Vec3::UnitZ()).toRotationMatrix(), Vec3(1.0, 0.2, 0.0));
  VoxelMap single;
  VoxelRefreshPlan single_plan;
  single_plan.frames.push_back({&f, Pose(), moved, insert_frame(single, f, Pose())});
  (void)refresh_voxel_map(single, single_plan);
  VoxelMap rebuilt;
  insert_frame(rebuilt, f, moved);
  const RefreshAudit audit = compare_maps(single, rebuilt, 1e-7);

  // Frame b leaves cell [0,3)^3 while frame a's identical plane moves in.
  LidarFrame a, b;
  a.frame_index = 0;
  b.frame_index = 1;
  for (int k = 0; k < 100; ++k) {
    const int i = (k * 37) % 100;
    a.points.push_back({Vec3(0.5 + 0.2 * (i % 10), 0.5 + 0.2 * (i / 10), 1.0), 100.0});
    b.points.push_back(a.points.back());
  }
  const Pose a_old(Mat3::Identity(), Vec3(-3.0, 0, 0)), b_new(Mat3::Identity(), Vec3(6.0, 0, 0));
  VoxelMap two;
  const auto ma = insert_frame(two, a, a_old);
  const auto mb = insert_frame(two, b, Pose());
  VoxelRefreshPlan two_plan;
  two_plan.frames = {{&a, a_old, Pose(), ma}, {&b, Pose(), b_new, mb}};
  (void)refresh_voxel_map(two, two_plan, RefreshOrder::TwoPhase);
  const bool two_phase = audit_refresh(two, two_plan).identical();

  return {noop && audit.identical() && audit.max_stat_error < 1e-7 && two_phase,
          std::string("identity ") + (noop ? "no-op" : "CHANGED") + ", single frame " +
              std::to_string(audit.matched) + " nodes max error " + fmt("%.1e", audit.max_stat_error) +
              ", two-phase " + (two_phase ? "ok" : "MISMATCH")};
}

std::vector<TimedPose> line_motion(int n, double speed) {
  std::vector<TimedPose> out;
  for (int k = 0; k < n; ++k) out.push_back({k, 0.1 * k, Pose(Mat3::Identity(), Vec3(0.1 * speed * k, 0, 0))});
  return out;
}

Outcome loop_closure() {
  const int n = 100;
  std::mt19937_64 rng(7000);
  std::normal_distribution<double> noise(0.0, 0.01);
  std::vector<Pose> gt, est;
  for (int k = 0; k < n; ++k) {
    const double a = 2.0 * kPi * k / n;
    gt.emplace_back(Eigen::AngleAxisd(a + kPi / 2, Vec3::UnitZ()).toRotationMatrix(),
                    Vec3(10.0 * std::cos(a), 10.0 * std::sin(a), 0.0));
    Pose e = gt.back();
    if (k > 0) {
      e.translation += Vec3(2.0 * k / (n - 1) + noise(rng), noise(rng), noise(rng));
      e.rotation = testsupport::random_small_rotation(rng, 0.05) * e.rotation;
    }
    est.push_back(e);
  }
  PoseGraph g;
  for (int k = 0; k < n; ++k) g.nodes.push_back({NodeKind::Lidar, k, 0.1 * k, est[static_cast<std::size_t>(k)]});
  for (std::size_t k = 0; k + 1 < static_cast<std::size_t>(n); ++k) {
    g.add_edge({EdgeKind::LidarTop5, k, k + 1, est[k].inverse() * est[k + 1], 1.0});
  }
  g.add_edge({EdgeKind::Loop, static_cast<std::size_t>(n - 1), 0, gt.back().inverse() * gt.front(), 10.0});
  const double before = (est.back().translation - gt.back().translation).norm();
  const std::vector<std::size_t> anchor{0};
  (void)optimize_pose_graph(g, anchor);
  const double after = (g.nodes.back().pose.translation - gt.back().translation).norm();
  const double reduction = 1.0 - after / before;

  const DriftThresholds kitti = DriftThresholds::for_profile(DriftProfile::Kitti);
  bool fires = detect_visual_drift(100, 9, kitti) && !detect_visual_drift(100, 10, kitti);
  auto turned = line_motion(5, 10.0);
  turned[4].pose.rotation = Eigen::AngleAxisd(deg2rad(3.5), Vec3::UnitZ()).toRotationMatrix();
  auto slight = turned;
  slight[4].pose.rotation = Eigen::AngleAxisd(deg2rad(2.5), Vec3::UnitZ()).toRotationMatrix();
  auto fast = line_motion(5, 10.0);
  fast[4].pose.translation = fast[3].pose.translation + Vec3(2.1, 0, 0);
  auto brisk = fast;
  brisk[4].pose.translation = fast[3].pose.translation + Vec3(1.9, 0, 0);
  fires = fires && detect_lidar_drift(turned, kitti).drift && !detect_lidar_drift(slight, kitti).drift;
  fires = fires && detect_lidar_drift(fast, kitti).drift && !detect_lidar_drift(brisk, kitti).drift;

  // Constant velocity along a line and around a circle.
  std::vector<TimedPose> circle;
  for (int k = 0; k < 300; ++k) {
    const double a = 0.01 * k;
    circle.push_back({k, 0.1 * k, Pose(Eigen::AngleAxisd(a + kPi / 2, Vec3::UnitZ()).toRotationMatrix(),
                                       Vec3(10.0 * std::cos(a), 10.0 * std::sin(a), 0.0))});
  }
  const bool silent = scan_lidar_drift(line_motion(50, 10.0), kitti).empty() && scan_lidar_drift(circle, kitti).empty();

  return {reduction >= 0.9 && fires && silent,
          "endpoint " + fmt("%.3f", before) + " m -> " + fmt("%.2e", after) + " m (" + fmt("%.1f", 100 * reduction) +
              "% reduction), detectors " + (fires ? "fire" : "MISS") + ", constant velocity " +
              (silent ? "silent" : "NOT silent")};
}

Outcome metrics() {
  std::vector<Pose> gt;
  for (int k = 0; k < 60; ++k) {
    Pose p(Eigen::AngleAxisd(0.05 * k, Vec3::UnitZ()).toRotationMatrix(),
           Vec3(0.3 * k, std::sin(0.2 * k), 0.1 * std::cos(0.1 * k)));
    p.timestamp = 0.1 * k;
    gt.push_back(p);
  }
  const TrajectoryMetrics zero = ape_rpe(gt, gt);
  const bool zeros = zero.ape_mae == 0.0 && zero.ape_rmse == 0.0 && zero.rpe_mae == 0.0 && zero.rpe_rmse == 0.0;
  auto shifted = gt;
  for (auto& p : shifted) p.translation += Vec3(1.0, 0, 0);
  const double unaligned = ape_rpe(shifted, gt, false).ape_mae;
  const double aligned = ape_rpe(shifted, gt, true).ape_mae;

  std::mt19937_64 rng(8000);
  std::normal_distribution<double> n(0.0, 0.05);
  auto noisy = gt;
  for (auto& p : noisy) p.translation += Vec3(n(rng), n(rng), n(rng));
  const Pose g = testsupport::random_pose(rng, 5.0);
  auto moved = noisy;
  for (auto& p : moved) {
    const auto t = p.timestamp;
    p = g * p;
    p.timestamp = t;
  }
  const TrajectoryMetrics m0 = ape_rpe(noisy, gt, false, 2), m1 = ape_rpe(moved, gt, false, 2);
  const double rpe_diff = std::abs(m1.rpe_rmse - m0.rpe_rmse) + std::abs(m1.rpe_mae - m0.rpe_mae);
  return {zeros && std::abs(unaligned - 1.0) < 1e-9 && aligned < 1e-9 && rpe_diff < 1e-9,
          std::string(zeros ? "exact zeros" : "NONZERO") + ", offset APE " + fmt("%.6f", unaligned) + " / " +
              fmt("%.1e", aligned) + " aligned, RPE change " + fmt("%.1e", rpe_diff)};
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(VOXSFM_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

Outcome determinism() {
  const auto dir = testsupport::temp_dir("acceptance_determinism");
  const std::string d = dir.string();
  if (run_cli("sim --out " + d + "/ds --frames 20 --no-images --seed 3") != 0) return {false, "sim failed"};
  const int a = run_cli("run --config " + d + "/ds/config.json --quiet --output " + d + "/a");
  const int b = run_cli("run --config " + d + "/ds/config.json --quiet --output " + d + "/b");
  if (a != 0 || b != 0) return {false, "run exited with " + std::to_string(a) + "/" + std::to_string(b)};
  bool same = true;
  std::string files;
  for (const char* f : {"lidar_poses.tum", "lidar_poses.txt", "camera_poses.tum"}) {
    const std::string x = slurp(dir / "a" / f), y = slurp(dir / "b" / f);
    same = same && !x.empty() && x == y;
    files += std::string(files.empty() ? "" : ", ") + f;
  }
  return {same, files + (same ? " byte-identical" : " DIFFER")};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"incremental statistics", incremental_stats},
      {"planarity classification", planarity},
      {"registration recovery", registration_recovery},
      {"gradient checks", gradient_checks},
      {"time weight contract", time_weight_contract},
      {"joint bundle adjustment", joint_ba_scene},
      {"voxel refresh", voxel_refresh},
      {"loop closure", loop_closure},
      {"metrics", metrics},
      {"end-to-end determinism", determinism},
  };
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
  }
  return failed;
}
