#pragma once

// Synthetic scenes: analytic surfaces, a parametric sensor trajectory, a
// spinning LiDAR, pinhole cameras observing surface landmarks, and odometry
// with injected drift.

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "voxsfm/fusion.hpp"
#include "voxsfm/geom.hpp"
#include "voxsfm/lidar_frame.hpp"
#include "voxsfm/visual.hpp"

namespace voxsfm {

struct Material {
  std::array<std::uint8_t, 3> color{200, 200, 200};
  double intensity = 100.0;
};

// Points x with normal . x = offset.
struct PlaneSurface {
  Vec3 normal = Vec3::UnitZ();
  double offset = 0.0;
  Material material;
};

// Axis-aligned; rays hit it from outside or inside.
struct BoxSurface {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Ones();
  Material material;
};

struct SphereSurface {
  Vec3 center = Vec3::Zero();
  double radius = 1.0;
  Material material;
};

enum class TrajectoryKind { Circle, Line };

struct TrajectorySpec {
  TrajectoryKind kind = TrajectoryKind::Circle;
  int frames = 40;
  double rate_hz = 10.0;
  // Circle: constant speed around center in the horizontal plane, heading along the tangent.
  Vec3 center = Vec3::Zero();
  double radius = 2.5;
  double speed = 1.0;
  // Line: start + velocity * t, heading along the velocity.
  Vec3 start = Vec3::Zero();
  Vec3 velocity = Vec3::UnitX();
  double pitch_amplitude_deg = 0.0;  // sinusoidal pitch, one period per 40 frames
};

struct LidarSpec {
  int rings = 16;
  double min_elevation_deg = -15.0;
  double max_elevation_deg = 15.0;
  int azimuth_steps = 360;
  double max_range = 50.0;
  double range_noise = 0.01;
};

struct CameraSpec {
  int id = 1;
  PinholeIntrinsics intrinsics{200.0, 200.0, 160.0, 120.0};
  int width = 320;
  int height = 240;
  Pose lidar_from_camera;  // x_lidar = T * x_camera
  double pixel_noise = 0.0;
};

struct PoseJump {
  int frame = 0;
  Vec3 offset = Vec3::Zero();
};

struct DriftSpec {
  double odometry_sigma_t = 0.0;      // meters per step
  double odometry_sigma_r_deg = 0.0;  // degrees per step
  std::vector<PoseJump> jumps;
};

struct SceneSpec {
  std::vector<PlaneSurface> planes;
  std::vector<BoxSurface> boxes;
  std::vector<SphereSurface> spheres;
  TrajectorySpec trajectory;
  LidarSpec lidar;
  std::vector<CameraSpec> cameras;
  int landmarks = 1500;
  double landmark_max_range = 15.0;
  bool render_images = true;
  DriftSpec drift;
  std::uint64_t seed = 1;

  void validate() const;
};

// Forward-looking camera axes (x right, y down, z forward) in a LiDAR frame
// with x forward, y left, z up.
Mat3 forward_camera_rotation();

// A 12 x 10 x 4 m room with colored walls, two boxes and a sphere, one
// forward camera and a circular trajectory.
SceneSpec default_room_scene();

SceneSpec scene_from_json(const std::string& text);
std::string scene_to_json(const SceneSpec& scene);

struct RayHit {
  double t = 0.0;
  Vec3 normal = Vec3::Zero();
  Material material;
};

// Nearest hit with t > 1e-9 along origin + t * direction (direction unit length).
std::optional<RayHit> raycast(const SceneSpec& scene, const Vec3& origin, const Vec3& direction);

// Ground-truth world_from_lidar poses with timestamps k / rate_hz.
std::vector<Pose> trajectory_poses(const TrajectorySpec& traj);

// Unit ray directions of one LiDAR sweep in the sensor frame, ring-major.
std::vector<Vec3> lidar_rays(const LidarSpec& lidar);

// Raycast sweep with Gaussian range noise. Throws NoHits.
LidarFrame gen_scan(const SceneSpec& scene, const Pose& world_from_lidar, int frame_index, double timestamp,
                    std::mt19937_64& rng);

// Landmarks visible from the camera: in front, inside the image and unoccluded.
std::vector<Observation> observe_landmarks(const SceneSpec& scene, std::span<const Vec3> landmarks,
                                           const CameraSpec& camera, const Pose& world_from_camera,
                                           std::mt19937_64& rng);

// Flat-shaded image of the material colors; black where nothing is hit.
RgbImage render_image(const SceneSpec& scene, const CameraSpec& camera, const Pose& world_from_camera);

struct SimDataset {
  std::vector<LidarFrame> lidar;
  std::vector<Pose> gt_lidar;        // per LiDAR frame
  std::vector<VisualFrame> visual;   // unposed; frame_index = k * cameras + camera slot
  std::vector<Pose> gt_camera;       // per visual frame
  std::vector<RgbImage> images;      // per visual frame when rendered
  Extrinsics extrinsics;
  std::vector<Vec3> landmarks;       // indexed by feature id
  std::vector<Pose> odometry;        // drifted LiDAR trajectory
};

// Deterministic for a given seed and thread count independent.
SimDataset generate_dataset(const SceneSpec& scene, std::uint64_t seed);

// Composes ground-truth relative motions perturbed per step, then applies the
// jumps to the frames at and after each jump frame.
std::vector<Pose> simulate_odometry(std::span<const Pose> gt, double sigma_t, double sigma_r_deg,
                                    std::span<const PoseJump> jumps, std::uint64_t seed);

// Per-purpose generator seeded from (seed, stream, index).
std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index);

}  // namespace voxsfm
