#include "voxsfm/metrics.hpp"

#include <cmath>
#include <ostream>

#include <Eigen/Geometry>

#include "voxsfm/error.hpp"
#include "voxsfm/format.hpp"

namespace voxsfm {

namespace {

Similarity rigid_fit(std::span<const Pose> est, std::span<const Pose> gt) {
  Similarity s;
  const auto n = static_cast<Eigen::Index>(est.size());
  if (n < 3) {
    Vec3 d = Vec3::Zero();
    for (std::size_t i = 0; i < est.size(); ++i) d += gt[i].translation - est[i].translation;
    s.translation = d / static_cast<double>(est.size());
    return s;
  }
  Eigen::Matrix3Xd src(3, n), dst(3, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    src.col(i) = est[static_cast<std::size_t>(i)].translation;
    dst.col(i) = gt[static_cast<std::size_t>(i)].translation;
  }
  const Mat4 t = Eigen::umeyama(src, dst, false);
  s.rotation = t.topLeftCorner<3, 3>();
  s.translation = t.topRightCorner<3, 1>();
  return s;
}

void mae_rmse(const std::vector<double>& errors, double& mae, double& rmse) {
  mae = rmse = 0.0;
  if (errors.empty()) return;
  for (double e : errors) {
    mae += e;
    rmse += e * e;
  }
  mae /= static_cast<double>(errors.size());
  rmse = std::sqrt(rmse / static_cast<double>(errors.size()));
}

}  // namespace

TrajectoryMetrics ape_rpe(std::span<const Pose> est, std::span<const Pose> gt, bool align, int rpe_delta) {
  if (est.size() != gt.size()) {
    throw Error(ErrorCode::LengthMismatch, "ape_rpe: " + std::to_string(est.size()) + " estimated vs " +
                                               std::to_string(gt.size()) + " ground-truth poses");
  }
  if (est.empty()) throw Error(ErrorCode::DegenerateInput, "ape_rpe: empty trajectories");
  if (rpe_delta < 1) throw Error(ErrorCode::DegenerateInput, "ape_rpe: rpe_delta must be >= 1");
  for (std::size_t i = 0; i < est.size(); ++i) {
    if (est[i].timestamp && gt[i].timestamp && std::abs(*est[i].timestamp - *gt[i].timestamp) > 1e-6) {
      throw Error(ErrorCode::LengthMismatch, "ape_rpe: timestamps differ at index " + std::to_string(i));
    }
  }
  TrajectoryMetrics m;
  m.frames = est.size();
  auto errors = [&](const Similarity& s) {
    std::vector<double> e;
    for (std::size_t i = 0; i < est.size(); ++i) e.push_back((s * est[i].translation - gt[i].translation).norm());
    return e;
  };
  auto sum_sq = [](const std::vector<double>& e) {
    double acc = 0.0;
    for (double v : e) acc += v * v;
    return acc;
  };
  std::vector<double> ape = errors(m.alignment);
  if (align) {
    // The identity competes with the fit so that rounding in the fit never
    // makes an already aligned estimate look worse.
    const Similarity fit = rigid_fit(est, gt);
    std::vector<double> fitted = errors(fit);
    if (sum_sq(fitted) < sum_sq(ape)) {
      m.alignment = fit;
      ape = std::move(fitted);
    }
  }
  mae_rmse(ape, m.ape_mae, m.ape_rmse);

  std::vector<double> rpe;
  const auto d = static_cast<std::size_t>(rpe_delta);
  for (std::size_t i = 0; i + d < est.size(); ++i) {
    const Pose rel_est = est[i].inverse() * est[i + d];
    const Pose rel_gt = gt[i].inverse() * gt[i + d];
    rpe.push_back((rel_gt.inverse() * rel_est).translation.norm());
  }
  mae_rmse(rpe, m.rpe_mae, m.rpe_rmse);
  return m;
}

void write_metrics(std::ostream& os, const TrajectoryMetrics& m) {
  os << "frames=" << m.frames << '\n'
     << "ape_mae=" << format_double(m.ape_mae) << '\n'
     << "ape_rmse=" << format_double(m.ape_rmse) << '\n'
     << "rpe_mae=" << format_double(m.rpe_mae) << '\n'
     << "rpe_rmse=" << format_double(m.rpe_rmse) << '\n';
}

}  // namespace voxsfm
