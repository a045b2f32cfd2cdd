#pragma once

// Frame-to-model LiDAR registration against the voxel map, and the scheduler
// that alternates visual and LiDAR frame registration.

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "voxsfm/geom.hpp"
#include "voxsfm/lidar_frame.hpp"
#include "voxsfm/voxelmap.hpp"

namespace voxsfm {

// w(u) = 1 - exp(-u^2 / 100), u in [0, 255].
double intensity_weight(double intensity);

// What a Point-to-Gaussian residual needs from a voxel node: the mean, the
// minimum-eigenvalue direction and the floored variance along it.
struct NormalGaussian {
  Vec3 mean = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();
  double variance = 1.0;
};

NormalGaussian normal_gaussian(const VoxelNode& node, double eig_floor);

// weight * (1 - exp(-r^2)), r = n.(x - mean) / sqrt(variance + inflation).
// `inflation` widens the kernel during coarse-to-fine solves and is 0 for the
// actual cost.
struct GaussianResidual {
  double cost = 0.0;
  double r = 0.0;
  double decay = 1.0;      // exp(-r^2)
  Vec3 dr_dx = Vec3::Zero();
};

GaussianResidual gaussian_residual(const Vec3& x_world, const NormalGaussian& g, double weight,
                                   double inflation = 0.0);

// Point-to-Gaussian cost of one sensor-frame point. Throws ImmatureVoxel when
// the node has fewer than config.min_points_for_fit points.
double point_to_gaussian_cost(const Vec3& x_local, double intensity, const Pose& pose,
                              const VoxelNode& node, const VoxelMapConfig& config);

// Analytic derivative of point_to_gaussian_cost with respect to a left
// perturbation exp(xi) * pose, xi = (omega, v). The node is held fixed.
Vec6 point_to_gaussian_gradient(const Vec3& x_local, double intensity, const Pose& pose,
                                const VoxelNode& node, const VoxelMapConfig& config);

struct FrameCost {
  double total = 0.0;
  std::vector<double> terms;  // per point, 0 for uncovered points
  std::size_t covered = 0;    // hit a mature voxel
  std::size_t immature = 0;
  std::size_t absent = 0;
  double weight_sum = 0.0;    // sum of intensity weights over all points

  double coverage() const {
    const std::size_t n = covered + immature + absent;
    return n == 0 ? 0.0 : static_cast<double>(covered) / static_cast<double>(n);
  }
};

FrameCost frame_cost(const LidarFrame& frame, const Pose& pose, const VoxelMap& map);

struct RegistrationOptions {
  int max_iterations = 50;        // per kernel stage
  double step_tol = 1e-6;
  double cost_tol = 1e-8;
  double damping_init = 1e-4;
  double damping_scale = 10.0;
  int max_damping_retries = 10;
  double overlap_min = 0.1;
  // Kernel inflation schedule (meters) solved before the exact cost.
  std::vector<double> anneal_sigmas = {0.5, 0.25, 0.1, 0.05, 0.02};
  std::size_t point_stride = 1;
  // Squared normalized distance below which a covered point counts as an inlier.
  double inlier_r2 = 9.0;
};

struct RegistrationResult {
  Pose pose;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  double inlier_fraction = 0.0;
  int iterations = 0;
  bool converged = false;
};

// Minimizes the frame's Point-to-Gaussian cost over its pose with damped
// Gauss-Newton (IRLS on the Welsch profile), re-associating voxels every
// iteration. Throws InsufficientOverlap or Diverged.
RegistrationResult register_lidar_frame(const LidarFrame& frame, const Pose& init_pose,
                                        const VoxelMap& map, const RegistrationOptions& opts = {});

// Inserts every point at pose * x_l; the returned mask marks absorbed points
// (1) versus points discarded by plane leaves (0).
std::vector<std::uint8_t> insert_frame(VoxelMap& map, const LidarFrame& frame, const Pose& pose);

// ---------------------------------------------------------------------------
// Frame scheduling

struct VisualCandidate {
  int frame_index = 0;
  double timestamp = 0.0;
  int match_score = 0;  // matches to already triangulated map points
};

struct LidarSlot {
  int frame_index = 0;
  double timestamp = 0.0;
  std::optional<Pose> registered_pose;
};

struct SchedulerState {
  std::vector<VisualCandidate> visual;  // unregistered visual frames
  std::vector<LidarSlot> lidar;         // every LiDAR frame
  double max_rotation_deg = 60.0;
  double max_time_offset = 0.5;         // seconds
  // Camera-derived initial LiDAR pose for a LiDAR frame once the given visual
  // frame is registered.
  std::function<std::optional<Pose>(int visual_frame, int lidar_frame)> predict_lidar_pose;
};

enum class LidarSlotStatus { Selected, NoCandidate, TooFarInTime, RotationGate };

struct FrameSelection {
  int visual_frame = -1;
  std::optional<int> lidar_frame;
  std::optional<Pose> lidar_init;
  LidarSlotStatus lidar_status = LidarSlotStatus::NoCandidate;
};

// Best-scoring visual frame (ties to the earlier timestamp) plus the
// time-closest unregistered LiDAR frame when it passes the rotation gate.
// Throws Exhausted when no visual frame has a positive score.
FrameSelection select_next_frames(const SchedulerState& state);

}  // namespace voxsfm
