#include "voxsfm/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "voxsfm/error.hpp"

namespace voxsfm {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

template <typename E>
struct EnumName {
  E value;
  const char* name;
};

constexpr EnumName<ScaleGauge> kScaleGauges[] = {
    {ScaleGauge::Auto, "auto"}, {ScaleGauge::None, "none"}, {ScaleGauge::SecondCameraDistance, "second_camera"}};
constexpr EnumName<DriftProfile> kProfiles[] = {{DriftProfile::Kitti, "kitti"}, {DriftProfile::Handheld, "handheld"}};

// Reads keys out of a JSON object and remembers which ones were seen so that
// leftovers can be reported.
class Reader {
 public:
  explicit Reader(const json& root) : root_(root) {
    if (!root.is_object()) throw Error(ErrorCode::ConfigError, "config must be a JSON object");
  }

  const json* find(const std::string& section, const std::string& key) {
    seen_.insert(section + "." + key);
    const json* obj = &root_;
    if (!section.empty()) {
      const auto it = root_.find(section);
      if (it == root_.end()) return nullptr;
      if (!it->is_object()) throw Error(ErrorCode::ConfigError, "'" + section + "' must be an object");
      obj = &*it;
    }
    const auto it = obj->find(key);
    return it == obj->end() ? nullptr : &*it;
  }

  template <typename T>
  void field(const std::string& section, const std::string& key, T& target) {
    const json* j = find(section, key);
    if (j == nullptr) return;
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!j->is_boolean()) throw Error(ErrorCode::ConfigError, name(section, key) + " must be a boolean");
        target = j->get<bool>();
      } else if constexpr (std::is_integral_v<T>) {
        if (!j->is_number_integer()) throw Error(ErrorCode::ConfigError, name(section, key) + " must be an integer");
        if (std::is_unsigned_v<T> && j->get<long long>() < 0) {
          throw Error(ErrorCode::ConfigError, name(section, key) + " must be non-negative");
        }
        target = j->get<T>();
      } else {
        target = j->get<T>();
      }
    } catch (const json::exception& e) {
      throw Error(ErrorCode::ConfigError, name(section, key) + ": " + e.what());
    }
  }

  template <typename E, std::size_t N>
  void enumeration(const std::string& section, const std::string& key, E& target, const EnumName<E> (&names)[N]) {
    const json* j = find(section, key);
    if (j == nullptr) return;
    if (!j->is_string()) throw Error(ErrorCode::ConfigError, name(section, key) + " must be a string");
    for (const auto& n : names) {
      if (j->get<std::string>() == n.name) {
        target = n.value;
        return;
      }
    }
    throw Error(ErrorCode::ConfigError, name(section, key) + ": unknown value '" + j->get<std::string>() + "'");
  }

  void path(const std::string& key, fs::path& target) {
    const json* j = find("paths", key);
    if (j == nullptr || j->is_null()) return;
    if (!j->is_string()) throw Error(ErrorCode::ConfigError, name("paths", key) + " must be a string");
    target = j->get<std::string>();
  }

  void optional_path(const std::string& key, std::optional<fs::path>& target) {
    fs::path p;
    path(key, p);
    if (!p.empty()) target = p;
  }

  void reject_unknown() const {
    for (auto it = root_.begin(); it != root_.end(); ++it) {
      if (it->is_object()) {
        for (auto inner = it->begin(); inner != it->end(); ++inner) {
          if (!seen_.count(it.key() + "." + inner.key())) {
            throw Error(ErrorCode::ConfigError, "unknown key '" + it.key() + "." + inner.key() + "'");
          }
        }
      } else if (!seen_.count("." + it.key())) {
        throw Error(ErrorCode::ConfigError, "unknown key '" + it.key() + "'");
      }
    }
  }

 private:
  static std::string name(const std::string& section, const std::string& key) {
    return section.empty() ? key : section + "." + key;
  }

  const json& root_;
  std::set<std::string> seen_;
};

class Writer {
 public:
  template <typename T>
  void field(const std::string& section, const std::string& key, const T& value) {
    slot(section, key) = value;
  }

  template <typename E, std::size_t N>
  void enumeration(const std::string& section, const std::string& key, const E& value,
                   const EnumName<E> (&names)[N]) {
    for (const auto& n : names) {
      if (n.value == value) slot(section, key) = n.name;
    }
  }

  json root = json::object();

 private:
  json& slot(const std::string& section, const std::string& key) {
    return section.empty() ? root[key] : root[section][key];
  }
};

// One list of keys shared by parsing and dumping.
template <typename V, typename C>
void visit_fields(V& v, C& c) {
  v.field("", "seed", c.seed);
  v.field("frames", "lidar_step", c.lidar_frame_step);
  v.field("frames", "visual_step", c.visual_frame_step);

  v.field("voxel_map", "root_size", c.voxel.root_size);
  v.field("voxel_map", "max_depth", c.voxel.max_depth);
  v.field("voxel_map", "min_points_for_fit", c.voxel.min_points_for_fit);
  v.field("voxel_map", "sigma_d", c.voxel.sigma_d);
  v.field("voxel_map", "sigma_s", c.voxel.sigma_s);
  v.field("voxel_map", "eig_floor", c.voxel.eig_floor);
  v.field("voxel_map", "recompute_period", c.voxel.recompute_period);

  v.field("registration", "max_iterations", c.registration.max_iterations);
  v.field("registration", "step_tol", c.registration.step_tol);
  v.field("registration", "cost_tol", c.registration.cost_tol);
  v.field("registration", "damping_init", c.registration.damping_init);
  v.field("registration", "damping_scale", c.registration.damping_scale);
  v.field("registration", "max_damping_retries", c.registration.max_damping_retries);
  v.field("registration", "overlap_min", c.registration.overlap_min);
  v.field("registration", "anneal_sigmas", c.registration.anneal_sigmas);
  v.field("registration", "point_stride", c.registration.point_stride);
  v.field("registration", "inlier_r2", c.registration.inlier_r2);

  v.field("scheduler", "max_rotation_deg", c.max_rotation_deg);
  v.field("scheduler", "max_time_offset", c.max_time_offset);

  v.field("visual", "init_inlier_threshold_px", c.two_view.inlier_threshold_px);
  v.field("visual", "init_min_parallax_deg", c.two_view.min_parallax_deg);
  v.field("visual", "init_min_points", c.two_view.min_points);
  v.field("visual", "init_search_frames", c.init_search_frames);
  v.field("visual", "pnp_threshold_px", c.pnp.reprojection_threshold_px);
  v.field("visual", "pnp_ransac_iterations", c.pnp.ransac_iterations);
  v.field("visual", "pnp_confidence", c.pnp.confidence);
  v.field("visual", "pnp_refine_iterations", c.pnp.refine_iterations);
  v.field("visual", "min_pnp_inliers", c.min_pnp_inliers);
  v.field("visual", "min_triangulation_parallax_deg", c.min_triangulation_parallax_deg);
  v.field("visual", "max_triangulation_rms_px", c.max_triangulation_rms_px);

  v.field("icp", "max_correspondence_distance", c.icp.max_correspondence_distance);
  v.field("icp", "max_iterations", c.icp.max_iterations);
  v.field("icp", "min_inlier_fraction", c.icp.min_inlier_fraction);
  v.field("icp", "convergence_tol", c.icp.convergence_tol);

  v.field("ba", "cadence", c.ba_cadence);
  v.field("ba", "max_iterations", c.ba.max_iterations);
  v.field("ba", "relative_decrease_tol", c.ba.relative_decrease_tol);
  v.field("ba", "step_tol", c.ba.step_tol);
  v.field("ba", "damping_init", c.ba.damping_init);
  v.field("ba", "damping_scale", c.ba.damping_scale);
  v.field("ba", "max_damping_retries", c.ba.max_damping_retries);
  v.field("ba", "anneal_sigmas", c.ba.anneal_sigmas);
  v.field("ba", "time_weighting", c.ba.time_weighting);
  v.field("ba", "time_weight_inverted", c.ba.time_weight_inverted);
  v.field("ba", "mappoint_voxel_terms", c.ba.mappoint_voxel_terms);
  v.field("ba", "huber_px", c.ba.huber_px);
  v.enumeration("ba", "scale_gauge", c.ba.scale_gauge, kScaleGauges);
  v.field("ba", "gauge_weight", c.ba.gauge_weight);
  v.field("ba", "lidar_point_stride", c.ba.lidar_point_stride);

  v.field("loop", "enabled", c.loop_closure);
  v.field("loop", "visual_consensus_ratio", c.drift.visual_consensus_ratio);
  v.field("loop", "delta_alpha_deg", c.drift.delta_alpha_deg);
  v.field("loop", "delta_s", c.drift.delta_s);
  v.field("loop", "consensus_pixel_tolerance", c.consensus_pixel_tolerance);
  v.field("loop", "top_k", c.graph.top_k);
  v.field("loop", "loop_weight", c.graph.loop_weight);
  v.field("loop", "rig_edges", c.graph.rig_edges);
  v.field("loop", "rig_max_time_offset", c.graph.rig_max_time_offset);
  v.field("loop", "solver_max_iterations", c.graph_solver.max_iterations);
  v.field("loop", "solver_relative_decrease_tol", c.graph_solver.relative_decrease_tol);

  v.field("fusion", "enabled", c.fuse);
  v.field("fusion", "ply_binary", c.ply_binary);
  v.field("fusion", "downsample_voxel", c.fusion_downsample);

  v.field("eval", "align", c.align_metrics);
  v.field("eval", "rpe_delta", c.rpe_delta);
}

fs::path resolve(const fs::path& p, const fs::path& base) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

}  // namespace

DatasetPaths PipelineConfig::dataset_paths() const {
  DatasetPaths p;
  p.lidar_dir = lidar_dir;
  p.frames_file = frames_file;
  p.tracks_file = tracks_file;
  p.images_dir = images_dir;
  p.gt_trajectory = gt_trajectory;
  return p;
}

void PipelineConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw Error(ErrorCode::ConfigError, what);
  };
  require(!lidar_dir.empty() && fs::is_directory(lidar_dir), "LiDAR directory not found: '" + lidar_dir.string() + "'");
  require(!frames_file.empty() && fs::is_regular_file(frames_file),
          "frames file not found: '" + frames_file.string() + "'");
  require(!tracks_file.empty() && fs::is_regular_file(tracks_file),
          "tracks file not found: '" + tracks_file.string() + "'");
  if (images_dir) require(fs::is_directory(*images_dir), "image directory not found: '" + images_dir->string() + "'");
  if (gt_trajectory) {
    require(fs::is_regular_file(*gt_trajectory), "ground-truth trajectory not found: '" + gt_trajectory->string() + "'");
  }
  require(!output_dir.empty(), "output directory must be set");

  voxel.validate();
  drift.validate();
  require(lidar_frame_step >= 1 && visual_frame_step >= 1, "frame steps must be >= 1");
  require(registration.max_iterations > 0 && ba.max_iterations > 0, "iteration limits must be positive");
  require(registration.overlap_min >= 0.0 && registration.overlap_min <= 1.0, "overlap_min must lie in [0, 1]");
  require(registration.damping_scale > 1.0 && ba.damping_scale > 1.0, "damping scale must exceed 1");
  require(registration.point_stride >= 1 && ba.lidar_point_stride >= 1, "point strides must be >= 1");
  for (double s : registration.anneal_sigmas) require(s > 0.0, "registration anneal sigmas must be positive");
  for (double s : ba.anneal_sigmas) require(s > 0.0, "ba anneal sigmas must be positive");
  require(max_rotation_deg > 0.0 && max_rotation_deg <= 180.0, "max_rotation_deg must lie in (0, 180]");
  require(max_time_offset > 0.0, "max_time_offset must be positive");
  require(two_view.inlier_threshold_px > 0.0 && pnp.reprojection_threshold_px > 0.0,
          "pixel thresholds must be positive");
  require(two_view.min_points >= 8, "init_min_points must be >= 8");
  require(init_search_frames >= 1, "init_search_frames must be >= 1");
  require(pnp.ransac_iterations > 0 && pnp.confidence > 0.0 && pnp.confidence < 1.0, "invalid PnP RANSAC settings");
  require(min_pnp_inliers >= 4, "min_pnp_inliers must be >= 4");
  require(min_triangulation_parallax_deg >= 0.0 && max_triangulation_rms_px > 0.0, "invalid triangulation gates");
  require(icp.max_correspondence_distance > 0.0 && icp.max_iterations > 0, "invalid ICP settings");
  require(ba_cadence >= 1, "ba.cadence must be >= 1");
  require(ba.huber_px >= 0.0 && ba.gauge_weight > 0.0, "invalid BA robust/gauge settings");
  require(consensus_pixel_tolerance > 0.0, "consensus_pixel_tolerance must be positive");
  require(graph.top_k >= 1 && graph.loop_weight > 0.0, "invalid pose-graph settings");
  require(fusion_downsample >= 0.0, "fusion downsample must be >= 0");
  require(rpe_delta >= 1, "rpe_delta must be >= 1");
}

PipelineConfig config_from_json(const std::string& text, const fs::path& base_dir) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("config is not valid JSON: ") + e.what());
  }
  Reader r(root);
  PipelineConfig c;

  r.enumeration("loop", "profile", c.drift_profile, kProfiles);
  c.drift = DriftThresholds::for_profile(c.drift_profile);
  visit_fields(r, c);

  r.path("dataset", c.dataset_dir);
  r.path("lidar_dir", c.lidar_dir);
  r.path("frames_file", c.frames_file);
  r.path("tracks_file", c.tracks_file);
  r.optional_path("images_dir", c.images_dir);
  r.optional_path("gt_trajectory", c.gt_trajectory);
  r.path("output_dir", c.output_dir);

  if (const json* jumps = r.find("", "fault_pose_jumps")) {
    if (!jumps->is_array()) throw Error(ErrorCode::ConfigError, "fault_pose_jumps must be an array");
    for (const auto& j : *jumps) {
      try {
        PoseJump jump;
        jump.frame = j.at("frame").get<int>();
        const auto o = j.at("offset").get<std::vector<double>>();
        if (o.size() != 3 || j.size() != 2) throw Error(ErrorCode::ConfigError, "fault jump needs frame and offset[3]");
        jump.offset = Vec3(o[0], o[1], o[2]);
        c.fault_pose_jumps.push_back(jump);
      } catch (const json::exception& e) {
        throw Error(ErrorCode::ConfigError, std::string("fault_pose_jumps: ") + e.what());
      }
    }
  }
  r.reject_unknown();

  c.dataset_dir = resolve(c.dataset_dir, base_dir);
  c.lidar_dir = resolve(c.lidar_dir, base_dir);
  c.frames_file = resolve(c.frames_file, base_dir);
  c.tracks_file = resolve(c.tracks_file, base_dir);
  if (c.images_dir) c.images_dir = resolve(*c.images_dir, base_dir);
  if (c.gt_trajectory) c.gt_trajectory = resolve(*c.gt_trajectory, base_dir);
  c.output_dir = resolve(c.output_dir, base_dir);

  if (!c.dataset_dir.empty()) {
    const DatasetPaths std_paths = DatasetPaths::in_directory(c.dataset_dir);
    if (c.lidar_dir.empty()) c.lidar_dir = std_paths.lidar_dir;
    if (c.frames_file.empty()) c.frames_file = std_paths.frames_file;
    if (c.tracks_file.empty()) c.tracks_file = std_paths.tracks_file;
    if (!c.images_dir) c.images_dir = std_paths.images_dir;
    if (!c.gt_trajectory) c.gt_trajectory = std_paths.gt_trajectory;
  }
  return c;
}

std::string config_to_json(const PipelineConfig& config) {
  Writer w;
  w.enumeration("loop", "profile", config.drift_profile, kProfiles);
  visit_fields(w, config);
  auto path_str = [](const fs::path& p) { return p.string(); };
  w.root["paths"] = json{{"dataset", path_str(config.dataset_dir)},
                         {"lidar_dir", path_str(config.lidar_dir)},
                         {"frames_file", path_str(config.frames_file)},
                         {"tracks_file", path_str(config.tracks_file)},
                         {"images_dir", config.images_dir ? path_str(*config.images_dir) : ""},
                         {"gt_trajectory", config.gt_trajectory ? path_str(*config.gt_trajectory) : ""},
                         {"output_dir", path_str(config.output_dir)}};
  json jumps = json::array();
  for (const auto& j : config.fault_pose_jumps) {
    jumps.push_back(json{{"frame", j.frame}, {"offset", {j.offset.x(), j.offset.y(), j.offset.z()}}});
  }
  w.root["fault_pose_jumps"] = jumps;
  return w.root.dump(2) + "\n";
}

PipelineConfig load_config(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::ConfigError, "cannot open config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  PipelineConfig c = config_from_json(ss.str(), path.parent_path());
  c.validate();
  return c;
}

}  // namespace voxsfm
