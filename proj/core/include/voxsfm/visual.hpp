#pragma once

// Sparse visual map: feature tracks, triangulation, PnP, two-view
// initialization, and the LiDAR pair bootstrap (ICP + similarity alignment).

#include <map>
#include <optional>
#include <span>
#include <vector>

#include "voxsfm/geom.hpp"
#include "voxsfm/lidar_frame.hpp"

namespace voxsfm {

struct Observation {
  int feature_id = 0;
  Vec2 pixel = Vec2::Zero();
};

struct VisualFrame {
  int frame_index = 0;
  int camera_id = 1;
  double timestamp = 0.0;
  PinholeIntrinsics intrinsics;
  std::vector<Observation> observations;  // sorted by feature_id
  std::optional<Pose> pose;               // world_from_camera once registered

  const Observation* find(int feature_id) const;
  void sort_observations();
};

struct TrackElement {
  int frame_index = 0;
  int feature_id = 0;
};

struct MapPoint {
  Vec3 position = Vec3::Zero();
  std::vector<TrackElement> track;
};

// Keyed by feature id; a feature id names one physical landmark across frames.
using MapPoints = std::map<int, MapPoint>;

// Camera-to-LiDAR transforms (x_lidar = T * x_camera) per camera id.
struct Extrinsics {
  std::map<int, Pose> lidar_from_camera;

  const Pose& get(int camera_id) const;
  // world_from_lidar implied by a world_from_camera pose.
  Pose lidar_pose_from_camera(const Pose& world_from_camera, int camera_id) const;
  Pose camera_pose_from_lidar(const Pose& world_from_lidar, int camera_id) const;
};

// Projected minus observed pixel. Throws BehindCamera, or DegenerateInput when
// the frame is unposed or lacks the feature.
Vec2 reprojection_residual(const MapPoint& mp, const VisualFrame& frame, int feature_id);

// d(residual)/d(xi_camera) under a left perturbation of world_from_camera and
// d(residual)/d(point).
struct ReprojectionJacobian {
  Vec2 residual = Vec2::Zero();
  Eigen::Matrix<double, 2, 6> d_pose = Eigen::Matrix<double, 2, 6>::Zero();
  Eigen::Matrix<double, 2, 3> d_point = Eigen::Matrix<double, 2, 3>::Zero();
};

ReprojectionJacobian reprojection_jacobian(const PinholeIntrinsics& k, const Pose& world_from_camera,
                                           const Vec3& x_world, const Vec2& observed);

struct TriangulationView {
  Pose world_from_camera;
  PinholeIntrinsics intrinsics;
  Vec2 pixel = Vec2::Zero();
};

struct TriangulationResult {
  Vec3 point = Vec3::Zero();
  double rms_reprojection = 0.0;  // pixels
  double max_parallax_deg = 0.0;
};

// Linear (DLT) estimate refined by Gauss-Newton on reprojection error.
// Throws DegenerateBaseline when all camera centers coincide.
TriangulationResult triangulate(std::span<const TriangulationView> views);

struct PnpOptions {
  double reprojection_threshold_px = 2.0;
  int ransac_iterations = 300;
  double confidence = 0.999;
  int refine_iterations = 20;
};

struct PnpResult {
  Pose world_from_camera;
  std::vector<int> inliers;  // feature ids
  double rms_reprojection = 0.0;
};

// Robust pose from the frame's observations of known map points. Throws
// TooFewCorrespondences (< 4) or ConsensusFailed.
PnpResult pnp_register(const VisualFrame& frame, const MapPoints& points, const PnpOptions& opts = {});

// Same, from explicit 2D-3D pairs.
PnpResult pnp_register(const PinholeIntrinsics& k, std::span<const Vec2> pixels, std::span<const Vec3> points,
                       std::span<const int> ids, const PnpOptions& opts = {});

struct TwoViewOptions {
  double inlier_threshold_px = 1.5;
  double min_parallax_deg = 1.0;  // median over triangulated matches
  int min_points = 8;
};

struct TwoViewResult {
  Pose pose_a;  // identity
  Pose pose_b;  // unit-norm translation
  MapPoints points;
};

// Relative pose from the shared feature ids of two frames. Throws
// DegenerateGeometry (< 8 matches, no parallax, or too few valid points).
TwoViewResult two_view_init(const VisualFrame& a, const VisualFrame& b, const TwoViewOptions& opts = {});

struct IcpOptions {
  double max_correspondence_distance = 1.0;
  int max_iterations = 30;
  double min_inlier_fraction = 0.1;
  double convergence_tol = 1e-10;
};

struct IcpResult {
  Pose a_from_b;
  double rms = 0.0;
  int iterations = 0;
};

// Point-to-point ICP aligning frame b onto frame a; the result maps b's
// coordinates into a's. Throws IcpDiverged.
IcpResult init_lidar_pair_icp(const LidarFrame& a, const LidarFrame& b, const Pose& init,
                              const IcpOptions& opts = {});

struct PosePair {
  Pose lidar;   // world_from_lidar in the LiDAR map
  Pose camera;  // world_from_camera in the visual map
  int camera_id = 1;
};

// Similarity taking LiDAR-map coordinates to visual-map coordinates, fitted on
// camera centers predicted from the LiDAR poses through the extrinsics.
// Throws DegenerateInput for fewer than 2 pairs or coincident positions.
Similarity align_lidar_to_visual(std::span<const PosePair> pairs, const Extrinsics& extrinsics);

}  // namespace voxsfm
