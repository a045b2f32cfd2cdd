#pragma once

// Pipeline configuration: JSON text with one object per module. Unknown keys
// are rejected; relative paths resolve against the config file's directory.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "voxsfm/bundle.hpp"
#include "voxsfm/io.hpp"
#include "voxsfm/loopclosure.hpp"
#include "voxsfm/registration.hpp"
#include "voxsfm/sim.hpp"
#include "voxsfm/visual.hpp"
#include "voxsfm/voxelmap.hpp"

namespace voxsfm {

struct PipelineConfig {
  // paths.dataset fills the standard layout for any path left empty.
  std::filesystem::path dataset_dir;
  std::filesystem::path lidar_dir;
  std::filesystem::path frames_file;
  std::filesystem::path tracks_file;
  std::optional<std::filesystem::path> images_dir;
  std::optional<std::filesystem::path> gt_trajectory;
  std::filesystem::path output_dir = "voxsfm_out";

  std::uint64_t seed = 1;
  int lidar_frame_step = 1;   // keep every n-th LiDAR frame
  int visual_frame_step = 1;  // keep every n-th frame per camera

  VoxelMapConfig voxel;
  RegistrationOptions registration;
  double max_rotation_deg = 60.0;
  double max_time_offset = 0.5;

  TwoViewOptions two_view;
  int init_search_frames = 15;
  IcpOptions icp;
  PnpOptions pnp;
  int min_pnp_inliers = 12;
  double min_triangulation_parallax_deg = 1.0;
  double max_triangulation_rms_px = 2.0;

  int ba_cadence = 20;  // K: registered LiDAR frames between BA rounds
  BundleOptions ba;

  bool loop_closure = true;
  // Profile defaults, individually overridable.
  DriftProfile drift_profile = DriftProfile::Kitti;
  DriftThresholds drift;
  double consensus_pixel_tolerance = 2.0;
  PoseGraphOptions graph;
  PoseGraphSolverOptions graph_solver;

  bool fuse = true;
  bool ply_binary = true;
  double fusion_downsample = 0.0;

  bool align_metrics = true;
  int rpe_delta = 1;

  // Fault injection for testing loop closure: offsets added to a LiDAR
  // frame's registered pose before it enters the map.
  std::vector<PoseJump> fault_pose_jumps;

  DatasetPaths dataset_paths() const;
  // Ranges and path existence. Throws ConfigError.
  void validate() const;
};

PipelineConfig config_from_json(const std::string& text, const std::filesystem::path& base_dir = {});
std::string config_to_json(const PipelineConfig& config);
// Reads, resolves paths and validates. Throws ConfigError.
PipelineConfig load_config(const std::filesystem::path& path);

}  // namespace voxsfm
