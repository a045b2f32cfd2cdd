#include "voxsfm/registration.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Cholesky>

#include "voxsfm/error.hpp"
#include "voxsfm/parallel.hpp"

namespace voxsfm {

void LidarFrame::validate() const {
  if (points.empty()) {
    throw Error(ErrorCode::DegenerateInput, "LiDAR frame " + std::to_string(frame_index) + " has no points");
  }
  for (const auto& p : points) {
    if (!(p.intensity >= 0.0 && p.intensity <= 255.0)) {
      throw Error(ErrorCode::DegenerateInput, "LiDAR intensity outside [0, 255]");
    }
  }
}

double intensity_weight(double intensity) {
  return 1.0 - std::exp(-intensity * intensity / 100.0);
}

NormalGaussian normal_gaussian(const VoxelNode& node, double eig_floor) {
  const EigenSystem3 es = node.eigensystem();
  NormalGaussian g;
  g.mean = node.stats().mean;
  g.normal = es.normal();
  g.variance = std::max(es.values(2), eig_floor);
  return g;
}

GaussianResidual gaussian_residual(const Vec3& x_world, const NormalGaussian& g, double weight,
                                   double inflation) {
  GaussianResidual out;
  const double inv_sigma = 1.0 / std::sqrt(g.variance + inflation);
  out.r = g.normal.dot(x_world - g.mean) * inv_sigma;
  out.decay = std::exp(-out.r * out.r);
  out.cost = weight * (1.0 - out.decay);
  out.dr_dx = g.normal * inv_sigma;
  return out;
}

namespace {

const VoxelNode& require_mature(const VoxelNode& node, const VoxelMapConfig& config) {
  if (node.stats().count < config.min_points_for_fit) {
    throw Error(ErrorCode::ImmatureVoxel, "voxel node has too few points for a Gaussian fit");
  }
  return node;
}

// dx_world / dxi for x_world = exp(xi) * pose * x_local at xi = 0.
Eigen::Matrix<double, 3, 6> point_jacobian(const Vec3& x_world) {
  Eigen::Matrix<double, 3, 6> j;
  j.leftCols<3>() = -skew(x_world);
  j.rightCols<3>() = Mat3::Identity();
  return j;
}

struct NormalEquations {
  Mat6 h = Mat6::Zero();
  Vec6 g = Vec6::Zero();
  double cost = 0.0;
  std::size_t covered = 0;
  std::size_t inliers = 0;
};

constexpr std::size_t kChunk = 1024;

NormalEquations accumulate(const LidarFrame& frame, const Pose& pose, const VoxelMap& map,
                           double inflation, std::size_t stride, bool with_jacobian,
                           double inlier_r2) {
  const auto& config = map.config();
  const std::size_t n = (frame.points.size() + stride - 1) / stride;
  return parallel_reduce(
      n, kChunk, NormalEquations{},
      [&](std::size_t begin, std::size_t end, NormalEquations& acc) {
        for (std::size_t k = begin; k < end; ++k) {
          const LidarPoint& p = frame.points[k * stride];
          const Vec3 xw = pose * p.position;
          const VoxelQuery q = map.query_voxel(xw);
          const double w = intensity_weight(p.intensity);
          // Uncovered points count as saturated so leaving the map is never a descent direction.
          if (!q.mature) {
            acc.cost += w;
            continue;
          }
          ++acc.covered;
          const NormalGaussian g = normal_gaussian(*q.node, config.eig_floor);
          const GaussianResidual res = gaussian_residual(xw, g, w, inflation);
          acc.cost += res.cost;
          if (res.r * res.r < inlier_r2) ++acc.inliers;
          if (!with_jacobian || w == 0.0) continue;
          // d/dxi of w(1 - exp(-r^2)) = 2 w exp(-r^2) r dr/dxi; IRLS Hessian 2 w exp(-r^2) J^T J.
          const Eigen::Matrix<double, 1, 6> jr = res.dr_dx.transpose() * point_jacobian(xw);
          const double irls = 2.0 * w * res.decay;
          acc.h.noalias() += irls * jr.transpose() * jr;
          acc.g.noalias() += irls * res.r * jr.transpose();
        }
      },
      [](NormalEquations& total, const NormalEquations& part) {
        total.h += part.h;
        total.g += part.g;
        total.cost += part.cost;
        total.covered += part.covered;
        total.inliers += part.inliers;
      });
}

Vec6 solve_damped(const Mat6& h, const Vec6& g, double lambda) {
  Mat6 a = h;
  for (int i = 0; i < 6; ++i) a(i, i) += lambda * std::max(h(i, i), 1e-9);
  return a.ldlt().solve(-g);
}

}  // namespace

double point_to_gaussian_cost(const Vec3& x_local, double intensity, const Pose& pose,
                              const VoxelNode& node, const VoxelMapConfig& config) {
  const NormalGaussian g = normal_gaussian(require_mature(node, config), config.eig_floor);
  return gaussian_residual(pose * x_local, g, intensity_weight(intensity)).cost;
}

Vec6 point_to_gaussian_gradient(const Vec3& x_local, double intensity, const Pose& pose,
                                const VoxelNode& node, const VoxelMapConfig& config) {
  const NormalGaussian g = normal_gaussian(require_mature(node, config), config.eig_floor);
  const Vec3 xw = pose * x_local;
  const double w = intensity_weight(intensity);
  const GaussianResidual res = gaussian_residual(xw, g, w);
  const Eigen::Matrix<double, 1, 6> jr = res.dr_dx.transpose() * point_jacobian(xw);
  return (2.0 * w * res.decay * res.r) * jr.transpose();
}

FrameCost frame_cost(const LidarFrame& frame, const Pose& pose, const VoxelMap& map) {
  FrameCost out;
  out.terms.assign(frame.points.size(), 0.0);
  const auto& config = map.config();
  for (std::size_t i = 0; i < frame.points.size(); ++i) {
    const LidarPoint& p = frame.points[i];
    const double w = intensity_weight(p.intensity);
    out.weight_sum += w;
    const Vec3 xw = pose * p.position;
    const VoxelQuery q = map.query_voxel(xw);
    if (!q) {
      ++out.absent;
      continue;
    }
    if (!q.mature) {
      ++out.immature;
      continue;
    }
    ++out.covered;
    out.terms[i] = gaussian_residual(xw, normal_gaussian(*q.node, config.eig_floor), w).cost;
    out.total += out.terms[i];
  }
  return out;
}

RegistrationResult register_lidar_frame(const LidarFrame& frame, const Pose& init_pose,
                                        const VoxelMap& map, const RegistrationOptions& opts) {
  if (!init_pose.is_valid(1e-6)) {
    throw Error(ErrorCode::DegenerateInput, "register_lidar_frame: invalid initial pose");
  }
  if (frame.points.empty()) {
    throw Error(ErrorCode::InsufficientOverlap, "register_lidar_frame: empty frame");
  }
  const std::size_t stride = std::max<std::size_t>(1, opts.point_stride);
  const std::size_t sampled = (frame.points.size() + stride - 1) / stride;

  const NormalEquations start = accumulate(frame, init_pose, map, 0.0, stride, false, opts.inlier_r2);
  const double coverage = static_cast<double>(start.covered) / static_cast<double>(sampled);
  if (coverage < opts.overlap_min) {
    throw Error(ErrorCode::InsufficientOverlap,
                "only " + std::to_string(coverage * 100.0) + "% of points hit mature voxels");
  }

  RegistrationResult result;
  result.initial_cost = start.cost;
  Pose pose = init_pose;
  bool ever_accepted = false;

  std::vector<double> stages;
  for (double s : opts.anneal_sigmas) {
    if (s > 0.0) stages.push_back(s * s);
  }
  stages.push_back(0.0);

  for (const double inflation : stages) {
    double lambda = opts.damping_init;
    NormalEquations eq = accumulate(frame, pose, map, inflation, stride, true, opts.inlier_r2);
    for (int it = 0; it < opts.max_iterations; ++it) {
      ++result.iterations;
      bool accepted = false;
      bool converged = false;
      for (int retry = 0; retry <= opts.max_damping_retries; ++retry) {
        const Vec6 delta = solve_damped(eq.h, eq.g, lambda);
        if (!delta.allFinite()) {
          lambda *= opts.damping_scale;
          continue;
        }
        if (delta.norm() < opts.step_tol) {
          converged = true;
          break;
        }
        const Pose trial = perturb_left(pose, delta);
        NormalEquations trial_eq = accumulate(frame, trial, map, inflation, stride, true, opts.inlier_r2);
        if (trial_eq.cost < eq.cost) {
          const double rel = (eq.cost - trial_eq.cost) / std::max(eq.cost, 1e-300);
          pose = trial;
          eq = std::move(trial_eq);
          lambda = std::max(lambda / opts.damping_scale, 1e-12);
          accepted = true;
          ever_accepted = true;
          converged = rel < opts.cost_tol || delta.norm() < opts.step_tol;
          break;
        }
        lambda *= opts.damping_scale;
      }
      if (converged) break;
      if (!accepted) {
        // No damping level lowers the cost. Only an immediate failure with a
        // non-negligible gradient counts as divergence.
        if (!ever_accepted && inflation == stages.front() && eq.g.norm() > 1e-6 * std::max(1.0, eq.cost)) {
          throw Error(ErrorCode::Diverged, "register_lidar_frame: cost increases at every damping level");
        }
        break;
      }
    }
  }

  const NormalEquations finish = accumulate(frame, pose, map, 0.0, stride, false, opts.inlier_r2);
  if (finish.cost > start.cost) {
    pose = init_pose;
    result.final_cost = start.cost;
    result.inlier_fraction = static_cast<double>(start.inliers) / static_cast<double>(sampled);
  } else {
    result.final_cost = finish.cost;
    result.inlier_fraction = static_cast<double>(finish.inliers) / static_cast<double>(sampled);
  }
  pose.timestamp = frame.timestamp;
  result.pose = pose;
  result.converged = true;
  return result;
}

std::vector<std::uint8_t> insert_frame(VoxelMap& map, const LidarFrame& frame, const Pose& pose) {
  std::vector<std::uint8_t> absorbed(frame.points.size(), 0);
  for (std::size_t i = 0; i < frame.points.size(); ++i) {
    const auto& p = frame.points[i];
    absorbed[i] = map.insert_point(pose * p.position, p.intensity, frame.frame_index) ==
                          InsertOutcome::Absorbed
                      ? 1
                      : 0;
  }
  return absorbed;
}

FrameSelection select_next_frames(const SchedulerState& state) {
  const VisualCandidate* best = nullptr;
  for (const auto& c : state.visual) {
    if (c.match_score <= 0) continue;
    if (best == nullptr || c.match_score > best->match_score ||
        (c.match_score == best->match_score && c.timestamp < best->timestamp)) {
      best = &c;
    }
  }
  if (best == nullptr) {
    throw Error(ErrorCode::Exhausted, "no registrable visual frame remains");
  }
  FrameSelection sel;
  sel.visual_frame = best->frame_index;

  const LidarSlot* closest = nullptr;
  for (const auto& slot : state.lidar) {
    if (slot.registered_pose) continue;
    const double dt = std::abs(slot.timestamp - best->timestamp);
    if (closest == nullptr || dt < std::abs(closest->timestamp - best->timestamp) ||
        (dt == std::abs(closest->timestamp - best->timestamp) && slot.timestamp < closest->timestamp)) {
      closest = &slot;
    }
  }
  if (closest == nullptr) {
    sel.lidar_status = LidarSlotStatus::NoCandidate;
    return sel;
  }
  if (std::abs(closest->timestamp - best->timestamp) > state.max_time_offset) {
    sel.lidar_status = LidarSlotStatus::TooFarInTime;
    return sel;
  }
  std::optional<Pose> predicted;
  if (state.predict_lidar_pose) predicted = state.predict_lidar_pose(best->frame_index, closest->frame_index);
  if (!predicted) {
    sel.lidar_status = LidarSlotStatus::NoCandidate;
    return sel;
  }

  const LidarSlot* nearest = nullptr;
  double nearest_dist = std::numeric_limits<double>::infinity();
  for (const auto& slot : state.lidar) {
    if (!slot.registered_pose) continue;
    const double d = (slot.registered_pose->translation - predicted->translation).norm();
    if (d < nearest_dist) {
      nearest_dist = d;
      nearest = &slot;
    }
  }
  if (nearest != nullptr) {
    const double angle =
        rad2deg(rotation_angle(nearest->registered_pose->rotation.transpose() * predicted->rotation));
    if (angle > state.max_rotation_deg) {
      sel.lidar_status = LidarSlotStatus::RotationGate;
      return sel;
    }
  }
  sel.lidar_frame = closest->frame_index;
  sel.lidar_init = predicted;
  sel.lidar_status = LidarSlotStatus::Selected;
  return sel;
}

}  // namespace voxsfm
