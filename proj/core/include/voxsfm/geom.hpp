#pragma once

// Rigid and similarity transforms, SE(3) exp/log, symmetric 3x3 eigensolver
// and pinhole projection.
//
// Convention: every Pose maps sensor coordinates into world coordinates
// (x_world = pose * x_sensor). Optimizers perturb poses on the left,
// pose <- exp(xi) * pose, with xi = (omega, v).

#include <optional>
#include <span>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace voxsfm {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using Twist = Vec6;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kDepthFloor = 1e-6;

inline double deg2rad(double deg) { return deg * kPi / 180.0; }
inline double rad2deg(double rad) { return rad * 180.0 / kPi; }

struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  std::optional<double> timestamp;

  Pose() = default;
  Pose(const Mat3& r, const Vec3& t, std::optional<double> stamp = std::nullopt)
      : rotation(r), translation(t), timestamp(stamp) {}

  static Pose identity() { return Pose(); }
  static Pose from_matrix(const Mat4& m);

  Mat4 matrix() const;
  Pose inverse() const;

  Vec3 operator*(const Vec3& x) const { return rotation * x + translation; }
  // Composition keeps the left operand's timestamp.
  Pose operator*(const Pose& other) const;

  // Orthonormality and det(R) = +1 within tol.
  bool is_valid(double tol = 1e-9) const;
};

Pose se3_compose(const Pose& a, const Pose& b);

Mat3 skew(const Vec3& v);
Mat3 so3_exp(const Vec3& omega);
Vec3 so3_log(const Mat3& r);
// Left Jacobian of SO(3) and its inverse.
Mat3 so3_left_jacobian(const Vec3& omega);
Mat3 so3_left_jacobian_inverse(const Vec3& omega);

Pose se3_exp(const Twist& xi);
Twist se3_log(const Pose& p);

// Returns exp(delta) * p, the left perturbation used by every optimizer.
Pose perturb_left(const Pose& p, const Twist& delta);

// Geodesic angle of a rotation matrix in radians, in [0, pi].
double rotation_angle(const Mat3& r);

// Projects an arbitrary 3x3 matrix onto SO(3).
Mat3 orthonormalize(const Mat3& r);

struct EigenSystem3 {
  Vec3 values = Vec3::Zero();          // e1 >= e2 >= e3 >= 0
  Mat3 vectors = Mat3::Identity();     // column i pairs with values(i)

  Vec3 normal() const { return vectors.col(2); }
};

inline constexpr double kEigenClamp = 1e-12;

// Symmetrizes the input, sorts descending and clamps values below 1e-12 to 0.
EigenSystem3 eig3_sym(const Mat3& m);

struct Similarity {
  double scale = 1.0;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 operator*(const Vec3& x) const { return scale * (rotation * x) + translation; }
  Similarity inverse() const;
  // Applies the similarity to a pose: rotation composes, translation maps as a point.
  Pose apply(const Pose& p) const;
};

// Closed-form least-squares fit of dst ~ s * R * src + t.
// Throws DegenerateInput for fewer than 3 points or collinear sources.
Similarity umeyama_align(std::span<const Vec3> src, std::span<const Vec3> dst, bool with_scale);

struct PinholeIntrinsics {
  double fu = 1.0;
  double fv = 1.0;
  double cu = 0.0;
  double cv = 0.0;
};

// Projects a camera-frame point. Throws BehindCamera when z <= kDepthFloor.
Vec2 project_camera(const PinholeIntrinsics& k, const Vec3& x_cam);

// Projects a world point through a world-from-camera pose.
Vec2 project_pinhole(const PinholeIntrinsics& k, const Pose& world_from_camera, const Vec3& x_world);

}  // namespace voxsfm
