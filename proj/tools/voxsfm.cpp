// voxsfm command line: dataset simulation, the full pipeline, and each stage
// on its own over intermediate artifacts.
//
// Exit codes: 0 success, 2 configuration or usage error, 3 stage failure.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "voxsfm/bundle.hpp"
#include "voxsfm/config.hpp"
#include "voxsfm/error.hpp"
#include "voxsfm/format.hpp"
#include "voxsfm/fusion.hpp"
#include "voxsfm/io.hpp"
#include "voxsfm/loopclosure.hpp"
#include "voxsfm/metrics.hpp"
#include "voxsfm/pipeline.hpp"
#include "voxsfm/registration.hpp"
#include "voxsfm/sim.hpp"

namespace fs = std::filesystem;
using namespace voxsfm;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;

Vec3 parse_vec3(const std::string& text) {
  double x = 0, y = 0, z = 0;
  char c1 = 0, c2 = 0;
  std::istringstream is(text);
  if (!(is >> x >> c1 >> y >> c2 >> z) || c1 != ',' || c2 != ',') {
    throw Error(ErrorCode::ConfigError, "expected x,y,z but got '" + text + "'");
  }
  return Vec3(x, y, z);
}

// FRAME:dx,dy,dz
PoseJump parse_jump(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw Error(ErrorCode::ConfigError, "expected FRAME:dx,dy,dz but got '" + text + "'");
  PoseJump j;
  try {
    j.frame = std::stoi(text.substr(0, colon));
  } catch (const std::exception&) {
    throw Error(ErrorCode::ConfigError, "bad frame in '" + text + "'");
  }
  j.offset = parse_vec3(text.substr(colon + 1));
  return j;
}

std::string read_text(const fs::path& p) {
  std::ifstream is(p);
  if (!is) throw Error(ErrorCode::ConfigError, "cannot open " + p.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// Poses of a TUM file keyed to frames by timestamp.
template <typename Frame>
std::vector<std::optional<Pose>> match_poses(const std::vector<Frame>& frames, const std::vector<Pose>& poses) {
  std::vector<std::optional<Pose>> out(frames.size());
  for (const auto& p : poses) {
    if (!p.timestamp) continue;
    for (std::size_t i = 0; i < frames.size(); ++i) {
      if (std::abs(frames[i].timestamp - *p.timestamp) <= 1e-6) {
        out[i] = p;
        break;
      }
    }
  }
  return out;
}

void print_pose(std::ostream& os, const std::string& key, const Pose& p) {
  const Eigen::Quaterniond q(p.rotation);
  os << key << '=' << format_double(p.translation.x()) << ',' << format_double(p.translation.y()) << ','
     << format_double(p.translation.z()) << ',' << format_double(q.x()) << ',' << format_double(q.y()) << ','
     << format_double(q.z()) << ',' << format_double(q.w()) << '\n';
}

// Tracks of map points over the posed frames that observe them.
void attach_tracks(MapPoints& points, const std::vector<VisualFrame>& frames) {
  for (auto& [id, mp] : points) mp.track.clear();
  for (const auto& f : frames) {
    if (!f.pose) continue;
    for (const auto& o : f.observations) {
      auto it = points.find(o.feature_id);
      if (it != points.end()) it->second.track.push_back({f.frame_index, o.feature_id});
    }
  }
  std::erase_if(points, [](const auto& kv) { return kv.second.track.size() < 2; });
}

std::vector<Pose> timed(const std::vector<LidarFrame>& frames, const std::vector<std::optional<Pose>>& poses) {
  std::vector<Pose> out;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (poses[i]) out.push_back(Pose(poses[i]->rotation, poses[i]->translation, frames[i].timestamp));
  }
  return out;
}

std::vector<Pose> timed(const std::vector<VisualFrame>& frames) {
  std::vector<Pose> out;
  for (const auto& f : frames) {
    if (f.pose) out.push_back(Pose(f.pose->rotation, f.pose->translation, f.timestamp));
  }
  return out;
}

void build_map(VoxelMap& map, const Dataset& ds, const std::vector<std::optional<Pose>>& poses,
               std::optional<std::size_t> skip = std::nullopt) {
  for (std::size_t i = 0; i < ds.lidar.size(); ++i) {
    if (poses[i] && i != skip) insert_frame(map, ds.lidar[i], *poses[i]);
  }
  map.refresh_eigensystems();
}

struct SimArgs {
  std::string out;
  std::string scene;
  std::uint64_t seed = 1;
  int frames = 0;
  std::vector<std::string> jumps;
  bool no_images = false;
};

int cmd_sim(const SimArgs& a) {
  SceneSpec scene = a.scene.empty() ? default_room_scene() : scene_from_json(read_text(a.scene));
  if (a.frames > 0) scene.trajectory.frames = a.frames;
  for (const auto& j : a.jumps) scene.drift.jumps.push_back(parse_jump(j));
  if (a.no_images) scene.render_images = false;
  scene.seed = a.seed;
  scene.validate();
  const SimDataset ds = generate_dataset(scene, a.seed);
  write_dataset(a.out, ds, scene);

  // Minimal config pointing at the dataset next to it.
  std::ofstream os(fs::path(a.out) / "config.json");
  os << "{\n  \"paths\": {\"dataset\": \".\", \"output_dir\": \"out\"},\n  \"seed\": " << a.seed << "\n}\n";
  std::cout << "lidar_frames=" << ds.lidar.size() << "\nvisual_frames=" << ds.visual.size()
            << "\nlandmarks=" << ds.landmarks.size() << "\nout=" << a.out << '\n';
  return 0;
}

struct RunArgs {
  std::string config;
  std::string output;
  std::optional<std::uint64_t> seed;
  int lidar_step = 0;
  int visual_step = 0;
  std::vector<std::string> faults;
  bool quiet = false;
};

int cmd_run(const RunArgs& a) {
  PipelineConfig cfg = load_config(a.config);
  if (!a.output.empty()) cfg.output_dir = a.output;
  if (a.seed) cfg.seed = *a.seed;
  if (a.lidar_step > 0) cfg.lidar_frame_step = a.lidar_step;
  if (a.visual_step > 0) cfg.visual_frame_step = a.visual_step;
  for (const auto& f : a.faults) cfg.fault_pose_jumps.push_back(parse_jump(f));
  const PipelineResult r = run_pipeline(cfg, a.quiet ? nullptr : &std::cerr);
  std::cout << "lidar_registered=" << r.lidar.size() << '/' << r.lidar_frames << "\ncamera_registered="
            << r.camera.size() << '/' << r.visual_frames << "\nmap_points=" << r.map_points
            << "\ndrift_events=" << r.drift_events.size() << "\nloop_edges=" << r.loop_edges << '\n';
  if (r.metrics) write_metrics(std::cout, *r.metrics);
  return 0;
}

struct StageArgs {
  std::string dataset;
  std::string lidar_poses;
  std::string camera_poses;
  std::string points;
  std::string out;
  int frame = -1;
  std::string offset = "0,0,0";
  double yaw_deg = 0.0;
  std::string profile = "kitti";
  bool ascii = false;
  double downsample = 0.0;
};

int cmd_register(const StageArgs& a) {
  const Dataset ds = read_dataset(fs::path(a.dataset), false);
  const auto poses = match_poses(ds.lidar, read_trajectory(a.lidar_poses, TrajectoryFormat::Tum));
  std::optional<std::size_t> target;
  for (std::size_t i = 0; i < ds.lidar.size(); ++i) {
    if (ds.lidar[i].frame_index == a.frame) target = i;
  }
  if (!target) throw Error(ErrorCode::ConfigError, "no LiDAR frame " + std::to_string(a.frame));
  if (!poses[*target]) throw Error(ErrorCode::ConfigError, "frame has no initial pose in " + a.lidar_poses);
  VoxelMap map;
  build_map(map, ds, poses, target);
  const Pose init = Pose(so3_exp(Vec3(0, 0, deg2rad(a.yaw_deg))), parse_vec3(a.offset)) * *poses[*target];
  const RegistrationResult r = register_lidar_frame(ds.lidar[*target], init, map);
  print_pose(std::cout, "initial_pose", init);
  print_pose(std::cout, "pose", r.pose);
  std::cout << "initial_cost=" << format_double(r.initial_cost) << "\nfinal_cost=" << format_double(r.final_cost)
            << "\ninlier_fraction=" << format_double(r.inlier_fraction) << "\niterations=" << r.iterations
            << "\nconverged=" << (r.converged ? 1 : 0) << '\n';
  return 0;
}

int cmd_ba(const StageArgs& a) {
  Dataset ds = read_dataset(fs::path(a.dataset), false);
  const auto lidar = match_poses(ds.lidar, read_trajectory(a.lidar_poses, TrajectoryFormat::Tum));
  const auto cams = match_poses(ds.visual, read_trajectory(a.camera_poses, TrajectoryFormat::Tum));
  for (std::size_t i = 0; i < ds.visual.size(); ++i) ds.visual[i].pose = cams[i];
  MapPoints points = read_map_points(a.points);
  attach_tracks(points, ds.visual);

  VoxelMap map;
  build_map(map, ds, lidar);
  BundleProblem prob;
  prob.map = &map;
  bool first_lidar = true;
  for (std::size_t i = 0; i < ds.lidar.size(); ++i) {
    if (!lidar[i]) continue;
    prob.lidar.push_back({&ds.lidar[i], *lidar[i], first_lidar});
    first_lidar = false;
  }
  for (const auto& f : ds.visual) {
    if (f.pose) prob.cameras.push_back({&f, *f.pose, false});
  }
  prob.points = std::move(points);
  const BundleReport rep = joint_ba(prob);

  std::vector<std::optional<Pose>> lidar_out(ds.lidar.size());
  for (std::size_t i = 0, k = 0; i < ds.lidar.size(); ++i) {
    if (lidar[i]) lidar_out[i] = prob.lidar[k++].pose;
  }
  for (auto& f : ds.visual) f.pose.reset();
  for (const auto& c : prob.cameras) {
    for (auto& f : ds.visual) {
      if (f.frame_index == c.frame->frame_index) f.pose = c.pose;
    }
  }
  const fs::path out(a.out);
  fs::create_directories(out);
  write_trajectory(out / "lidar_poses.tum", timed(ds.lidar, lidar_out), TrajectoryFormat::Tum);
  write_trajectory(out / "camera_poses.tum", timed(ds.visual), TrajectoryFormat::Tum);
  write_map_points(out / "map_points.txt", prob.points);
  std::ofstream log(out / "ba.log");
  write_ba_log(log, rep);
  std::cout << "e_initial=" << format_double(rep.initial.e) << "\ne_final=" << format_double(rep.final_energy.e)
            << "\niterations=" << rep.iterations << "\nconverged=" << (rep.converged ? 1 : 0) << '\n';
  return 0;
}

int cmd_loop(const StageArgs& a) {
  Dataset ds = read_dataset(fs::path(a.dataset), false);
  const auto lidar = match_poses(ds.lidar, read_trajectory(a.lidar_poses, TrajectoryFormat::Tum));
  MapPoints points;
  if (!a.camera_poses.empty()) {
    const auto cams = match_poses(ds.visual, read_trajectory(a.camera_poses, TrajectoryFormat::Tum));
    for (std::size_t i = 0; i < ds.visual.size(); ++i) ds.visual[i].pose = cams[i];
    if (!a.points.empty()) points = read_map_points(a.points);
    attach_tracks(points, ds.visual);
  }
  DriftProfile profile = DriftProfile::Kitti;
  if (a.profile == "handheld") profile = DriftProfile::Handheld;
  else if (a.profile != "kitti") throw Error(ErrorCode::ConfigError, "unknown profile '" + a.profile + "'");
  const DriftThresholds thr = DriftThresholds::for_profile(profile);

  std::vector<TimedPose> traj;
  PoseGraphInput in;
  for (std::size_t i = 0; i < ds.lidar.size(); ++i) {
    if (!lidar[i]) continue;
    traj.push_back({ds.lidar[i].frame_index, ds.lidar[i].timestamp, *lidar[i]});
    in.lidar.push_back({&ds.lidar[i], *lidar[i]});
  }
  for (const auto& f : ds.visual) {
    if (f.pose) in.visual.push_back(&f);
  }
  std::vector<DriftEvent> events = scan_lidar_drift(traj, thr);
  const auto vis_events = scan_visual_drift(in.visual, points, thr);
  events.insert(events.end(), vis_events.begin(), vis_events.end());

  VoxelMap map;
  build_map(map, ds, lidar);
  in.points = &points;
  in.extrinsics = &ds.extrinsics;
  in.map = &map;
  PoseGraphBuild build = build_pose_graph(in, events);
  const long anchor = build.graph.find(NodeKind::Lidar, traj.front().frame_index);
  const std::size_t anchors[] = {static_cast<std::size_t>(anchor)};
  const PoseGraphReport rep = optimize_pose_graph(build.graph, anchors);

  const fs::path out(a.out);
  fs::create_directories(out);
  std::ofstream graph(out / "graph.txt");
  build.graph.dump(graph);
  std::vector<Pose> lidar_out, cam_out;
  for (const auto& n : build.graph.nodes) {
    (n.kind == NodeKind::Lidar ? lidar_out : cam_out).push_back(Pose(n.pose.rotation, n.pose.translation, n.timestamp));
  }
  write_trajectory(out / "lidar_poses.tum", lidar_out, TrajectoryFormat::Tum);
  if (!cam_out.empty()) write_trajectory(out / "camera_poses.tum", cam_out, TrajectoryFormat::Tum);
  for (const auto& e : events) {
    std::cout << "drift source=" << (e.source == DriftSource::Lidar ? "lidar" : "visual") << " frame_a=" << e.frame_a
              << " frame_b=" << e.frame_b << '\n';
  }
  std::cout << "loop_edges=" << build.graph.count(EdgeKind::Loop) << "\ncost_initial=" << format_double(rep.initial_cost)
            << "\ncost_final=" << format_double(rep.final_cost) << '\n';
  return 0;
}

int cmd_fuse(const StageArgs& a) {
  Dataset ds = read_dataset(fs::path(a.dataset), true);
  const auto lidar = match_poses(ds.lidar, read_trajectory(a.lidar_poses, TrajectoryFormat::Tum));
  std::vector<CameraView> views;
  if (!a.camera_poses.empty()) {
    const auto cams = match_poses(ds.visual, read_trajectory(a.camera_poses, TrajectoryFormat::Tum));
    for (std::size_t i = 0; i < ds.visual.size(); ++i) {
      if (!cams[i] || !ds.images[i]) continue;
      const auto& f = ds.visual[i];
      views.push_back({f.frame_index, f.timestamp, f.intrinsics, *cams[i], &*ds.images[i]});
    }
  }
  FusionOptions fo;
  fo.downsample_voxel = a.downsample;
  const FusedCloud cloud = colorize_and_fuse(ds.lidar, lidar, views, fo);
  write_ply(a.out, cloud, !a.ascii);
  std::cout << "points=" << cloud.points.size() << "\ncolored=" << cloud.colored
            << "\nskipped_frames=" << cloud.skipped_frames.size() << '\n';
  return 0;
}

struct EvalArgs {
  std::string est;
  std::string gt;
  std::string format = "tum";
  bool no_align = false;
  int delta = 1;
};

int cmd_eval(const EvalArgs& a) {
  if (a.format != "tum" && a.format != "kitti") throw Error(ErrorCode::ConfigError, "unknown format '" + a.format + "'");
  const TrajectoryFormat f = a.format == "tum" ? TrajectoryFormat::Tum : TrajectoryFormat::Kitti;
  const std::vector<Pose> est = read_trajectory(a.est, f);
  const std::vector<Pose> gt = read_trajectory(a.gt, f);
  TrajectoryMetrics m;
  if (f == TrajectoryFormat::Tum) {
    std::vector<TimedPose> timed_est;
    for (std::size_t i = 0; i < est.size(); ++i) {
      timed_est.push_back({static_cast<int>(i), est[i].timestamp.value_or(0.0), est[i]});
    }
    const auto r = evaluate_against(timed_est, gt, !a.no_align, a.delta);
    if (!r) throw Error(ErrorCode::LengthMismatch, "no estimated pose shares a timestamp with the ground truth");
    m = *r;
  } else {
    m = ape_rpe(est, gt, !a.no_align, a.delta);
  }
  write_metrics(std::cout, m);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"voxsfm: LiDAR-visual structure from motion on voxel maps"};
  app.require_subcommand(0, 1);
  bool dump_config = false;
  app.add_flag("--dump-config", dump_config, "Print the default pipeline configuration and exit");

  SimArgs sim;
  auto* sim_cmd = app.add_subcommand("sim", "Generate a synthetic dataset");
  sim_cmd->add_option("--out", sim.out, "Output dataset directory")->required();
  sim_cmd->add_option("--scene", sim.scene, "Scene JSON (default: built-in room)");
  sim_cmd->add_option("--seed", sim.seed, "Random seed");
  sim_cmd->add_option("--frames", sim.frames, "Override the trajectory length");
  sim_cmd->add_option("--jump", sim.jumps, "Odometry jump FRAME:dx,dy,dz (repeatable)");
  sim_cmd->add_flag("--no-images", sim.no_images, "Skip image rendering");

  RunArgs run;
  auto* run_cmd = app.add_subcommand("run", "Run the full pipeline");
  run_cmd->add_option("--config", run.config, "Pipeline config JSON")->required();
  run_cmd->add_option("--output", run.output, "Override the output directory");
  run_cmd->add_option("--seed", run.seed, "Override the seed");
  run_cmd->add_option("--lidar-step", run.lidar_step, "Keep every n-th LiDAR frame");
  run_cmd->add_option("--visual-step", run.visual_step, "Keep every n-th frame per camera");
  run_cmd->add_option("--fault", run.faults, "Offset a registered LiDAR pose FRAME:dx,dy,dz (repeatable)");
  run_cmd->add_flag("--quiet", run.quiet, "Suppress stage log lines on stderr");

  StageArgs reg;
  auto* reg_cmd = app.add_subcommand("register", "Register one LiDAR frame against a map built from the others");
  reg_cmd->add_option("--dataset", reg.dataset, "Dataset directory")->required();
  reg_cmd->add_option("--poses", reg.lidar_poses, "TUM LiDAR poses for the map and the initial guess")->required();
  reg_cmd->add_option("--frame", reg.frame, "LiDAR frame index to register")->required();
  reg_cmd->add_option("--offset", reg.offset, "Translation added to the initial guess x,y,z");
  reg_cmd->add_option("--yaw", reg.yaw_deg, "Yaw in degrees applied to the initial guess");

  StageArgs ba;
  auto* ba_cmd = app.add_subcommand("ba", "Joint bundle adjustment over given poses and points");
  ba_cmd->add_option("--dataset", ba.dataset, "Dataset directory")->required();
  ba_cmd->add_option("--lidar-poses", ba.lidar_poses, "TUM LiDAR poses")->required();
  ba_cmd->add_option("--camera-poses", ba.camera_poses, "TUM camera poses")->required();
  ba_cmd->add_option("--points", ba.points, "Map points file")->required();
  ba_cmd->add_option("--out", ba.out, "Output directory")->required();

  StageArgs loop;
  auto* loop_cmd = app.add_subcommand("loop", "Drift detection and pose-graph correction");
  loop_cmd->add_option("--dataset", loop.dataset, "Dataset directory")->required();
  loop_cmd->add_option("--lidar-poses", loop.lidar_poses, "TUM LiDAR poses")->required();
  loop_cmd->add_option("--camera-poses", loop.camera_poses, "TUM camera poses");
  loop_cmd->add_option("--points", loop.points, "Map points file");
  loop_cmd->add_option("--profile", loop.profile, "Drift thresholds: kitti or handheld");
  loop_cmd->add_option("--out", loop.out, "Output directory")->required();

  StageArgs fuse;
  auto* fuse_cmd = app.add_subcommand("fuse", "Colorize and fuse LiDAR frames into a PLY cloud");
  fuse_cmd->add_option("--dataset", fuse.dataset, "Dataset directory")->required();
  fuse_cmd->add_option("--lidar-poses", fuse.lidar_poses, "TUM LiDAR poses")->required();
  fuse_cmd->add_option("--camera-poses", fuse.camera_poses, "TUM camera poses");
  fuse_cmd->add_option("--out", fuse.out, "Output PLY path")->required();
  fuse_cmd->add_flag("--ascii", fuse.ascii, "Write ASCII PLY");
  fuse_cmd->add_option("--downsample", fuse.downsample, "Grid cell size in meters (0 keeps all points)");

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "APE/RPE of an estimated trajectory against ground truth");
  eval_cmd->add_option("--est", eval.est, "Estimated trajectory")->required();
  eval_cmd->add_option("--gt", eval.gt, "Ground-truth trajectory")->required();
  eval_cmd->add_option("--format", eval.format, "tum (matched by timestamp) or kitti (matched by line)");
  eval_cmd->add_flag("--no-align", eval.no_align, "Skip rigid alignment before APE");
  eval_cmd->add_option("--delta", eval.delta, "RPE frame offset");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (dump_config) {
      std::cout << config_to_json(PipelineConfig{});
      return 0;
    }
    if (sim_cmd->parsed()) return cmd_sim(sim);
    if (run_cmd->parsed()) return cmd_run(run);
    if (reg_cmd->parsed()) return cmd_register(reg);
    if (ba_cmd->parsed()) return cmd_ba(ba);
    if (loop_cmd->parsed()) return cmd_loop(loop);
    if (fuse_cmd->parsed()) return cmd_fuse(fuse);
    if (eval_cmd->parsed()) return cmd_eval(eval);
    std::cout << app.help();
    return kExitConfig;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.code() == ErrorCode::ConfigError ? kExitConfig : kExitStage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitStage;
  }
}
