#pragma once

// Joint LiDAR-visual bundle adjustment and the incremental voxel-map refresh
// that follows pose updates.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "voxsfm/geom.hpp"
#include "voxsfm/lidar_frame.hpp"
#include "voxsfm/visual.hpp"
#include "voxsfm/voxelmap.hpp"

namespace voxsfm {

// 38 / exp(dt / 25 + 1) + 1, clamped to at most 15. The inverted variant
// returns 16 - w so that older voxels weigh more.
double time_weight(double delta_t, bool inverted = false);

// Time-weighted Point-to-Gaussian cost of a sensor-frame point against the
// node, with dt = |current_frame_index - node.creation_time()|. Throws
// ImmatureVoxel.
double weighted_point_cost(const Vec3& x_local, double intensity, const Pose& pose, const VoxelNode& node,
                           int current_frame_index, const VoxelMapConfig& config, bool inverted = false);

// Unit-weight Point-to-Gaussian cost of a visual map point in the voxel it falls
// into; 0 when no mature voxel contains it.
double mappoint_voxel_cost(const Vec3& x, const VoxelMap& map);

struct LidarBlock {
  const LidarFrame* frame = nullptr;
  Pose pose;
  bool fixed = false;
};

struct CameraBlock {
  const VisualFrame* frame = nullptr;  // frame_index must be unique across cameras
  Pose pose;                           // world_from_camera
  bool fixed = false;
};

struct BundleProblem {
  std::vector<LidarBlock> lidar;
  std::vector<CameraBlock> cameras;
  MapPoints points;
  const VoxelMap* map = nullptr;  // held fixed; null disables every LiDAR term
};

enum class ScaleGauge { Auto, None, SecondCameraDistance };

struct BundleOptions {
  int max_iterations = 30;  // per kernel stage
  double relative_decrease_tol = 1e-8;
  double step_tol = 1e-12;
  double damping_init = 1e-4;
  double damping_scale = 10.0;
  int max_damping_retries = 10;
  // LiDAR kernel inflation schedule (meters) before the exact cost.
  std::vector<double> anneal_sigmas = {0.5, 0.25, 0.1, 0.05, 0.02};
  bool time_weighting = true;
  bool time_weight_inverted = false;
  bool mappoint_voxel_terms = true;
  double huber_px = 0.0;  // 0 = plain squared reprojection error
  bool anchor_first_camera = true;
  // Auto fixes the distance between the first two cameras when no LiDAR term
  // constrains scale.
  ScaleGauge scale_gauge = ScaleGauge::Auto;
  double gauge_weight = 1e6;
  std::size_t lidar_point_stride = 1;
};

struct EnergyBreakdown {
  double e = 0.0;
  double e_i = 0.0;      // reprojection
  double e_l = 0.0;      // LiDAR points plus map-point-to-voxel terms
  double e_gauge = 0.0;  // scale prior
};

struct BaLogEntry {
  int iteration = 0;
  int stage = 0;  // index into the anneal schedule; last stage is the exact cost
  EnergyBreakdown energy;
  double damping = 0.0;
  double step_norm = 0.0;
};

struct BundleReport {
  EnergyBreakdown initial;
  EnergyBreakdown final_energy;
  int iterations = 0;
  bool converged = false;
  std::vector<BaLogEntry> log;  // one entry per accepted step
};

// Exact energy of the problem at its current variables.
EnergyBreakdown bundle_energy(const BundleProblem& problem, const BundleOptions& opts = {});

// Damped Gauss-Newton over every free block with a sparse LDLT solve. Each
// accepted step lowers the exact energy. Throws Gauge when nothing anchors the
// problem, DegenerateInput for a problem without residuals, and SolverFailed
// when no damping level yields a decrease away from a stationary point.
BundleReport joint_ba(BundleProblem& problem, const BundleOptions& opts = {});

// iteration stage E E_I E_L damping step_norm
void write_ba_log(std::ostream& os, const BundleReport& report);

// ---------------------------------------------------------------------------
// Voxel map refresh

struct RefreshFrame {
  const LidarFrame* frame = nullptr;
  Pose old_pose;                        // exact pose used at insertion
  Pose new_pose;
  std::vector<std::uint8_t> absorbed;   // insertion outcome per point; updated by the refresh
};

struct VoxelRefreshPlan {
  std::vector<RefreshFrame> frames;
};

enum class RefreshOrder { TwoPhase, Interleaved };

struct RefreshReport {
  std::size_t frames_changed = 0;
  std::size_t deleted = 0;
  std::size_t added = 0;
  std::size_t discarded = 0;
  std::size_t missing = 0;  // MissingVoxel raised by a delete
};

// Deletes every changed frame's absorbed points at the old pose, then adds all
// points at the new pose. Frames whose pose did not change are left alone.
// Interleaved (per-frame delete then add) exists for comparison only.
RefreshReport refresh_voxel_map(VoxelMap& map, VoxelRefreshPlan& plan,
                                RefreshOrder order = RefreshOrder::TwoPhase);

struct RefreshAudit {
  std::size_t matched = 0;
  std::vector<std::string> mismatched;  // "ix iy iz path" of nodes that differ
  std::size_t only_refreshed = 0;
  std::size_t only_rebuilt = 0;
  double max_stat_error = 0.0;  // over matched nodes

  bool identical() const { return mismatched.empty() && only_refreshed == 0 && only_rebuilt == 0; }
};

// Node-wise comparison of count, mean and covariance against a map rebuilt by
// inserting the frames at their new poses in plan order.
RefreshAudit audit_refresh(const VoxelMap& refreshed, const VoxelRefreshPlan& plan, double tol = 1e-7);

// Same comparison between two arbitrary maps.
RefreshAudit compare_maps(const VoxelMap& a, const VoxelMap& b, double tol);

}  // namespace voxsfm
