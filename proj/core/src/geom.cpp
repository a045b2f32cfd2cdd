#include "voxsfm/geom.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "voxsfm/error.hpp"

namespace voxsfm {

Pose Pose::from_matrix(const Mat4& m) {
  return Pose(m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>());
}

Mat4 Pose::matrix() const {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = rotation;
  m.topRightCorner<3, 1>() = translation;
  return m;
}

Pose Pose::inverse() const {
  const Mat3 rt = rotation.transpose();
  return Pose(rt, -(rt * translation), timestamp);
}

Pose Pose::operator*(const Pose& other) const {
  return Pose(rotation * other.rotation, rotation * other.translation + translation, timestamp);
}

bool Pose::is_valid(double tol) const {
  if (!rotation.allFinite() || !translation.allFinite()) return false;
  const double ortho = (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
  return ortho <= tol && std::abs(rotation.determinant() - 1.0) <= tol;
}

Pose se3_compose(const Pose& a, const Pose& b) { return a * b; }

Mat3 skew(const Vec3& v) {
  Mat3 s;
  // clang-format off
  s <<    0.0, -v.z(),  v.y(),
        v.z(),    0.0, -v.x(),
       -v.y(),  v.x(),    0.0;
  // clang-format on
  return s;
}

Mat3 so3_exp(const Vec3& omega) {
  const double theta = omega.norm();
  if (theta < 1e-12) {
    return Mat3::Identity() + skew(omega);
  }
  return Eigen::AngleAxisd(theta, omega / theta).toRotationMatrix();
}

Vec3 so3_log(const Mat3& r) {
  const Eigen::AngleAxisd aa(r);
  const double theta = aa.angle();
  if (theta < 1e-12) {
    // First-order: R ~ I + [w]x.
    return Vec3(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1)) * 0.5;
  }
  return aa.axis() * theta;
}

Mat3 so3_left_jacobian(const Vec3& omega) {
  const double theta = omega.norm();
  const Mat3 w = skew(omega);
  if (theta < 1e-6) {
    return Mat3::Identity() + 0.5 * w + w * w / 6.0;
  }
  const double t2 = theta * theta;
  return Mat3::Identity() + (1.0 - std::cos(theta)) / t2 * w +
         (theta - std::sin(theta)) / (t2 * theta) * w * w;
}

Mat3 so3_left_jacobian_inverse(const Vec3& omega) {
  const double theta = omega.norm();
  const Mat3 w = skew(omega);
  if (theta < 1e-6) {
    return Mat3::Identity() - 0.5 * w + w * w / 12.0;
  }
  const double c = 1.0 / (theta * theta) - (1.0 + std::cos(theta)) / (2.0 * theta * std::sin(theta));
  return Mat3::Identity() - 0.5 * w + c * w * w;
}

Pose se3_exp(const Twist& xi) {
  const Vec3 omega = xi.head<3>();
  const Vec3 v = xi.tail<3>();
  return Pose(so3_exp(omega), so3_left_jacobian(omega) * v);
}

Twist se3_log(const Pose& p) {
  const Vec3 omega = so3_log(p.rotation);
  Twist xi;
  xi.head<3>() = omega;
  xi.tail<3>() = so3_left_jacobian_inverse(omega) * p.translation;
  return xi;
}

Pose perturb_left(const Pose& p, const Twist& delta) {
  Pose out = se3_exp(delta) * p;
  out.rotation = orthonormalize(out.rotation);
  out.timestamp = p.timestamp;
  return out;
}

double rotation_angle(const Mat3& r) {
  const double c = std::clamp((r.trace() - 1.0) * 0.5, -1.0, 1.0);
  // acos loses precision near 0; fall back to the skew part there.
  if (c > 0.99) {
    const Vec3 s(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
    return std::asin(std::min(1.0, 0.5 * s.norm()));
  }
  return std::acos(c);
}

Mat3 orthonormalize(const Mat3& r) {
  const Eigen::JacobiSVD<Mat3> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 u = svd.matrixU();
  const Mat3 v = svd.matrixV();
  if ((u * v.transpose()).determinant() < 0.0) u.col(2) *= -1.0;
  return u * v.transpose();
}

EigenSystem3 eig3_sym(const Mat3& m) {
  const Mat3 sym = 0.5 * (m + m.transpose());
  const Eigen::SelfAdjointEigenSolver<Mat3> solver(sym);
  EigenSystem3 out;
  // Eigen sorts ascending.
  for (int i = 0; i < 3; ++i) {
    double value = solver.eigenvalues()(2 - i);
    if (value < kEigenClamp) value = 0.0;
    out.values(i) = value;
    out.vectors.col(i) = solver.eigenvectors().col(2 - i);
  }
  return out;
}

Similarity Similarity::inverse() const {
  Similarity inv;
  inv.scale = 1.0 / scale;
  inv.rotation = rotation.transpose();
  inv.translation = -(inv.scale * (inv.rotation * translation));
  return inv;
}

Pose Similarity::apply(const Pose& p) const {
  return Pose(rotation * p.rotation, (*this) * p.translation, p.timestamp);
}

Similarity umeyama_align(std::span<const Vec3> src, std::span<const Vec3> dst, bool with_scale) {
  if (src.size() != dst.size()) {
    throw Error(ErrorCode::DegenerateInput, "umeyama_align: point count mismatch");
  }
  const auto n = static_cast<Eigen::Index>(src.size());
  if (n < 3) {
    throw Error(ErrorCode::DegenerateInput, "umeyama_align: need at least 3 correspondences");
  }
  Eigen::Matrix3Xd s(3, n), d(3, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    s.col(i) = src[static_cast<std::size_t>(i)];
    d.col(i) = dst[static_cast<std::size_t>(i)];
  }
  const Vec3 mean_s = s.rowwise().mean();
  const Eigen::Matrix3Xd centered = s.colwise() - mean_s;
  const Mat3 scatter = centered * centered.transpose() / static_cast<double>(n);
  const EigenSystem3 es = eig3_sym(scatter);
  if (es.values(0) <= 0.0 || es.values(1) <= 1e-12 * es.values(0)) {
    throw Error(ErrorCode::DegenerateInput, "umeyama_align: source points are collinear");
  }
  const Mat4 t = Eigen::umeyama(s, d, with_scale);
  Similarity out;
  if (with_scale) {
    const double sc = t.topLeftCorner<3, 3>().col(0).norm();
    out.scale = sc;
    out.rotation = t.topLeftCorner<3, 3>() / sc;
  } else {
    out.scale = 1.0;
    out.rotation = t.topLeftCorner<3, 3>();
  }
  out.translation = t.topRightCorner<3, 1>();
  return out;
}

Vec2 project_camera(const PinholeIntrinsics& k, const Vec3& x_cam) {
  if (!(x_cam.z() > kDepthFloor)) {
    throw Error(ErrorCode::BehindCamera, "point depth below projection floor");
  }
  return Vec2(k.fu * x_cam.x() / x_cam.z() + k.cu, k.fv * x_cam.y() / x_cam.z() + k.cv);
}

Vec2 project_pinhole(const PinholeIntrinsics& k, const Pose& world_from_camera, const Vec3& x_world) {
  const Vec3 x_cam = world_from_camera.rotation.transpose() * (x_world - world_from_camera.translation);
  return project_camera(k, x_cam);
}

}  // namespace voxsfm
