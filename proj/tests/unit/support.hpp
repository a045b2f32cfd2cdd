#pragma once

// Shared fixtures and oracles for the unit tests. Everything here is computed
// directly from definitions, without calling the library code under test.

#include <cmath>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Geometry>

#include "voxsfm/error.hpp"
#include "voxsfm/geom.hpp"
#include "voxsfm/lidar_frame.hpp"

namespace testsupport {

using voxsfm::Mat3;
using voxsfm::Pose;
using voxsfm::Vec3;

inline Vec3 random_vec(std::mt19937_64& rng, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  return Vec3(u(rng), u(rng), u(rng));
}

// Rotation via a random unit quaternion; independent of so3_exp.
inline Mat3 random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  q.normalize();
  return q.toRotationMatrix();
}

// Rotation of `deg` degrees about a random axis.
inline Mat3 random_small_rotation(std::mt19937_64& rng, double deg) {
  Vec3 axis = random_vec(rng, 1.0);
  while (axis.norm() < 1e-3) axis = random_vec(rng, 1.0);
  return Eigen::AngleAxisd(deg * M_PI / 180.0, axis.normalized()).toRotationMatrix();
}

inline Pose random_pose(std::mt19937_64& rng, double t_scale = 2.0) {
  return Pose(random_rotation(rng), random_vec(rng, t_scale));
}

inline double angle_between_deg(const Mat3& a, const Mat3& b) {
  const Eigen::AngleAxisd aa(Mat3(a.transpose() * b));
  return std::abs(aa.angle()) * 180.0 / M_PI;
}

// Population mean and covariance, two-pass.
struct BatchStats {
  Vec3 mean = Vec3::Zero();
  Mat3 cov = Mat3::Zero();
};

inline BatchStats batch_oracle(const std::vector<Vec3>& pts) {
  BatchStats s;
  if (pts.empty()) return s;
  for (const auto& p : pts) s.mean += p;
  s.mean /= static_cast<double>(pts.size());
  for (const auto& p : pts) s.cov += (p - s.mean) * (p - s.mean).transpose();
  s.cov /= static_cast<double>(pts.size());
  return s;
}

// Sensor-frame samples of three orthogonal planes: the floor z = floor_z and
// the walls x = extent and y = extent, each a square grid of the given
// spacing, with Gaussian noise along the viewing ray.
inline voxsfm::LidarFrame three_plane_scan(const Pose& world_from_sensor, double extent, double floor_z,
                                           double spacing, double noise, std::mt19937_64& rng,
                                           int frame_index = 0, double grid_offset = 0.0) {
  voxsfm::LidarFrame f;
  f.frame_index = frame_index;
  std::normal_distribution<double> n(0.0, 1.0);
  const Pose inv = world_from_sensor.inverse();
  auto push = [&](const Vec3& w) {
    Vec3 x = inv * w;
    if (noise > 0.0) x += x.normalized() * (noise * n(rng));
    f.points.push_back({x, 100.0});
  };
  const double ceiling = floor_z + 3.0;
  for (double a = -extent + grid_offset; a < extent; a += spacing) {
    for (double b = -extent + grid_offset; b < extent; b += spacing) push(Vec3(a, b, floor_z));
    for (double z = floor_z + spacing / 2 + grid_offset; z < ceiling; z += spacing) {
      push(Vec3(extent, a, z));
      push(Vec3(a, extent, z));
    }
  }
  return f;
}

// Code of the voxsfm::Error thrown by f, or nullopt when it returns normally.
template <typename F>
std::optional<voxsfm::ErrorCode> thrown_code(F&& f) {
  try {
    f();
  } catch (const voxsfm::Error& e) {
    return e.code();
  }
  return std::nullopt;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("voxsfm_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testsupport
