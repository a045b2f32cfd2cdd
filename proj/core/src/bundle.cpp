#include "voxsfm/bundle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <ostream>
#include <unordered_map>

#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include "voxsfm/error.hpp"
#include "voxsfm/format.hpp"
#include "voxsfm/parallel.hpp"
#include "voxsfm/registration.hpp"

namespace voxsfm {

double time_weight(double delta_t, bool inverted) {
  const double w = std::min(38.0 / std::exp(std::abs(delta_t) / 25.0 + 1.0) + 1.0, 15.0);
  return inverted ? 16.0 - w : w;
}

double weighted_point_cost(const Vec3& x_local, double intensity, const Pose& pose, const VoxelNode& node,
                           int current_frame_index, const VoxelMapConfig& config, bool inverted) {
  const double dt = std::abs(current_frame_index - node.creation_time());
  return time_weight(dt, inverted) * point_to_gaussian_cost(x_local, intensity, pose, node, config);
}

double mappoint_voxel_cost(const Vec3& x, const VoxelMap& map) {
  const VoxelQuery q = map.query_voxel(x);
  if (!q.mature) return 0.0;
  return gaussian_residual(x, normal_gaussian(*q.node, map.config().eig_floor), 1.0).cost;
}

namespace {

using Row6 = Eigen::Matrix<double, 1, 6>;
using Mat23 = Eigen::Matrix<double, 2, 3>;
using Mat26 = Eigen::Matrix<double, 2, 6>;
using Mat63 = Eigen::Matrix<double, 6, 3>;

struct ObservationRef {
  std::size_t camera = 0;
  std::size_t point = 0;
  Vec2 pixel = Vec2::Zero();
};

struct Variables {
  std::vector<Pose> lidar;
  std::vector<Pose> cameras;
  std::vector<Vec3> points;
};

struct Linearization {
  EnergyBreakdown energy;
  std::vector<Mat6> lidar_h;
  std::vector<Vec6> lidar_g;
  std::vector<Mat6> camera_h;
  std::vector<Vec6> camera_g;
  std::vector<Mat3> point_h;
  std::vector<Vec3> point_g;
  std::vector<Mat63> cross;  // per observation, camera x point
  Eigen::Matrix<double, 12, 12> gauge_h = Eigen::Matrix<double, 12, 12>::Zero();
  Eigen::Matrix<double, 12, 1> gauge_g = Eigen::Matrix<double, 12, 1>::Zero();
};

struct LidarAccumulator {
  Mat6 h = Mat6::Zero();
  Vec6 g = Vec6::Zero();
  double cost = 0.0;
};

class Solver {
 public:
  Solver(const BundleProblem& problem, const BundleOptions& opts) : problem_(problem), opts_(opts) {
    for (const auto& c : problem.cameras) {
      if (c.frame == nullptr) throw Error(ErrorCode::DegenerateInput, "joint_ba: camera block without frame");
    }
    for (const auto& l : problem.lidar) {
      if (l.frame == nullptr) throw Error(ErrorCode::DegenerateInput, "joint_ba: LiDAR block without frame");
    }
    std::unordered_map<int, std::size_t> camera_of;
    for (std::size_t j = 0; j < problem.cameras.size(); ++j) {
      if (!camera_of.emplace(problem.cameras[j].frame->frame_index, j).second) {
        throw Error(ErrorCode::DegenerateInput, "joint_ba: duplicate camera frame index");
      }
    }
    std::size_t k = 0;
    for (const auto& [id, mp] : problem.points) {
      point_ids_.push_back(id);
      for (const auto& te : mp.track) {
        const auto it = camera_of.find(te.frame_index);
        if (it == camera_of.end()) continue;
        const Observation* obs = problem.cameras[it->second].frame->find(te.feature_id);
        if (obs == nullptr) continue;
        observations_.push_back({it->second, k, obs->pixel});
      }
      ++k;
    }

    lidar_free_.assign(problem.lidar.size(), false);
    camera_free_.assign(problem.cameras.size(), false);
    bool anchored = false;
    for (std::size_t i = 0; i < problem.lidar.size(); ++i) {
      lidar_free_[i] = !problem.lidar[i].fixed;
      anchored = anchored || problem.lidar[i].fixed;
    }
    for (std::size_t j = 0; j < problem.cameras.size(); ++j) {
      const bool fixed = problem.cameras[j].fixed || (j == 0 && opts.anchor_first_camera);
      camera_free_[j] = !fixed;
      anchored = anchored || fixed;
    }
    lidar_active_ = problem.map != nullptr && !problem.map->empty() && !problem.lidar.empty();
    mappoint_active_ = problem.map != nullptr && !problem.map->empty() && opts.mappoint_voxel_terms;
    if (observations_.empty() && !lidar_active_ && !mappoint_active_) {
      throw Error(ErrorCode::DegenerateInput, "joint_ba: problem has no residuals");
    }
    // A fixed voxel map pins LiDAR poses in its frame.
    if (!anchored && !lidar_active_) throw Error(ErrorCode::Gauge, "joint_ba: no pose is anchored");

    const std::size_t fixed_cameras =
        static_cast<std::size_t>(std::count(camera_free_.begin(), camera_free_.end(), false));
    switch (opts.scale_gauge) {
      case ScaleGauge::None:
        gauge_active_ = false;
        break;
      case ScaleGauge::SecondCameraDistance:
        gauge_active_ = problem.cameras.size() >= 2;
        break;
      case ScaleGauge::Auto:
        gauge_active_ = problem.cameras.size() >= 2 && fixed_cameras < 2 && !lidar_active_ && !mappoint_active_;
        break;
    }
    if (gauge_active_) {
      gauge_distance_ = (problem.cameras[1].pose.translation - problem.cameras[0].pose.translation).norm();
    }

    // Column offsets of the free blocks.
    std::size_t offset = 0;
    for (std::size_t i = 0; i < problem.lidar.size(); ++i) {
      lidar_col_.push_back(lidar_free_[i] ? static_cast<long>(offset) : -1);
      if (lidar_free_[i]) offset += 6;
    }
    for (std::size_t j = 0; j < problem.cameras.size(); ++j) {
      camera_col_.push_back(camera_free_[j] ? static_cast<long>(offset) : -1);
      if (camera_free_[j]) offset += 6;
    }
    for (std::size_t p = 0; p < point_ids_.size(); ++p) {
      point_col_.push_back(static_cast<long>(offset));
      offset += 3;
    }
    dimension_ = offset;
  }

  Variables initial() const {
    Variables v;
    for (const auto& l : problem_.lidar) v.lidar.push_back(l.pose);
    for (const auto& c : problem_.cameras) v.cameras.push_back(c.pose);
    for (const auto& [id, mp] : problem_.points) v.points.push_back(mp.position);
    return v;
  }

  void store(const Variables& v, BundleProblem& problem) const {
    for (std::size_t i = 0; i < v.lidar.size(); ++i) problem.lidar[i].pose = v.lidar[i];
    for (std::size_t j = 0; j < v.cameras.size(); ++j) problem.cameras[j].pose = v.cameras[j];
    std::size_t k = 0;
    for (auto& [id, mp] : problem.points) mp.position = v.points[k++];
  }

  std::size_t dimension() const { return dimension_; }

  Linearization evaluate(const Variables& v, double inflation, bool with_jacobian) const {
    Linearization lin;
    if (with_jacobian) {
      lin.lidar_h.assign(v.lidar.size(), Mat6::Zero());
      lin.lidar_g.assign(v.lidar.size(), Vec6::Zero());
      lin.camera_h.assign(v.cameras.size(), Mat6::Zero());
      lin.camera_g.assign(v.cameras.size(), Vec6::Zero());
      lin.point_h.assign(v.points.size(), Mat3::Zero());
      lin.point_g.assign(v.points.size(), Vec3::Zero());
      lin.cross.assign(observations_.size(), Mat63::Zero());
    }

    // Reprojection terms, one slot per observation so the merge order is fixed.
    struct ObsTerm {
      double cost = 0.0;
      Mat26 jc = Mat26::Zero();
      Mat23 jp = Mat23::Zero();
      Vec2 r = Vec2::Zero();
      double weight = 1.0;
    };
    std::vector<ObsTerm> terms(observations_.size());
    parallel_chunks(observations_.size(), 256, [&](std::size_t begin, std::size_t end, std::size_t) {
      for (std::size_t o = begin; o < end; ++o) {
        const ObservationRef& ob = observations_[o];
        const PinholeIntrinsics& k = problem_.cameras[ob.camera].frame->intrinsics;
        ObsTerm& t = terms[o];
        ReprojectionJacobian rj;
        try {
          rj = reprojection_jacobian(k, v.cameras[ob.camera], v.points[ob.point], ob.pixel);
        } catch (const Error&) {
          t.cost = std::numeric_limits<double>::infinity();
          t.weight = 0.0;
          continue;
        }
        const double s = rj.residual.norm();
        if (opts_.huber_px > 0.0 && s > opts_.huber_px) {
          t.cost = 2.0 * opts_.huber_px * s - opts_.huber_px * opts_.huber_px;
          t.weight = opts_.huber_px / s;
        } else {
          t.cost = s * s;
        }
        t.jc = rj.d_pose;
        t.jp = rj.d_point;
        t.r = rj.residual;
      }
    });
    for (std::size_t o = 0; o < observations_.size(); ++o) {
      const ObsTerm& t = terms[o];
      lin.energy.e_i += t.cost;
      if (!with_jacobian) continue;
      const ObservationRef& ob = observations_[o];
      lin.camera_h[ob.camera].noalias() += t.weight * t.jc.transpose() * t.jc;
      lin.camera_g[ob.camera].noalias() += t.weight * t.jc.transpose() * t.r;
      lin.point_h[ob.point].noalias() += t.weight * t.jp.transpose() * t.jp;
      lin.point_g[ob.point].noalias() += t.weight * t.jp.transpose() * t.r;
      lin.cross[o].noalias() = t.weight * t.jc.transpose() * t.jp;
    }

    if (lidar_active_) {
      std::vector<LidarAccumulator> acc(v.lidar.size());
      parallel_chunks(v.lidar.size(), 1, [&](std::size_t begin, std::size_t end, std::size_t) {
        for (std::size_t i = begin; i < end; ++i) acc[i] = lidar_terms(i, v.lidar[i], inflation, with_jacobian);
      });
      for (std::size_t i = 0; i < acc.size(); ++i) {
        lin.energy.e_l += acc[i].cost;
        if (with_jacobian) {
          lin.lidar_h[i] = acc[i].h;
          lin.lidar_g[i] = acc[i].g;
        }
      }
    }

    if (mappoint_active_) {
      const double floor = problem_.map->config().eig_floor;
      for (std::size_t p = 0; p < v.points.size(); ++p) {
        const VoxelQuery q = problem_.map->query_voxel(v.points[p]);
        if (!q.mature) continue;
        const GaussianResidual res = gaussian_residual(v.points[p], normal_gaussian(*q.node, floor), 1.0, inflation);
        lin.energy.e_l += res.cost;
        if (!with_jacobian) continue;
        lin.point_h[p].noalias() += res.decay * res.dr_dx * res.dr_dx.transpose();
        lin.point_g[p].noalias() += res.decay * res.r * res.dr_dx;
      }
    }

    if (gauge_active_) {
      const Vec3 diff = v.cameras[1].translation - v.cameras[0].translation;
      const double dist = diff.norm();
      const double sw = std::sqrt(opts_.gauge_weight);
      const double r = sw * (dist - gauge_distance_);
      lin.energy.e_gauge = r * r;
      if (with_jacobian && dist > 0.0) {
        const Vec3 u = diff / dist;
        auto translation_jacobian = [](const Vec3& t) {
          Eigen::Matrix<double, 3, 6> j;
          j.leftCols<3>() = -skew(t);
          j.rightCols<3>() = Mat3::Identity();
          return j;
        };
        Eigen::Matrix<double, 1, 12> j;
        j.leftCols<6>() = -sw * u.transpose() * translation_jacobian(v.cameras[0].translation);
        j.rightCols<6>() = sw * u.transpose() * translation_jacobian(v.cameras[1].translation);
        lin.gauge_h = j.transpose() * j;
        lin.gauge_g = j.transpose() * r;
      }
    }

    lin.energy.e = lin.energy.e_i + lin.energy.e_l + lin.energy.e_gauge;
    return lin;
  }

  // Assembles the sparse normal matrix (free blocks only) and right-hand side.
  void assemble(const Linearization& lin, Eigen::SparseMatrix<double>& h, Eigen::VectorXd& g) const {
    std::vector<Eigen::Triplet<double>> trip;
    g = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dimension_));
    auto add_block = [&](long r0, long c0, const auto& block) {
      for (Eigen::Index r = 0; r < block.rows(); ++r) {
        for (Eigen::Index c = 0; c < block.cols(); ++c) {
          if (block(r, c) != 0.0) trip.emplace_back(r0 + r, c0 + c, block(r, c));
        }
      }
    };
    for (std::size_t i = 0; i < lidar_col_.size(); ++i) {
      if (lidar_col_[i] < 0) continue;
      add_block(lidar_col_[i], lidar_col_[i], lin.lidar_h[i]);
      g.segment<6>(lidar_col_[i]) += lin.lidar_g[i];
    }
    for (std::size_t j = 0; j < camera_col_.size(); ++j) {
      if (camera_col_[j] < 0) continue;
      add_block(camera_col_[j], camera_col_[j], lin.camera_h[j]);
      g.segment<6>(camera_col_[j]) += lin.camera_g[j];
    }
    for (std::size_t p = 0; p < point_col_.size(); ++p) {
      add_block(point_col_[p], point_col_[p], lin.point_h[p]);
      g.segment<3>(point_col_[p]) += lin.point_g[p];
    }
    for (std::size_t o = 0; o < observations_.size(); ++o) {
      const long cc = camera_col_[observations_[o].camera];
      if (cc < 0) continue;
      const long pc = point_col_[observations_[o].point];
      add_block(cc, pc, lin.cross[o]);
      add_block(pc, cc, lin.cross[o].transpose().eval());
    }
    if (gauge_active_) {
      const long c[2] = {camera_col_[0], camera_col_[1]};
      for (int a = 0; a < 2; ++a) {
        if (c[a] < 0) continue;
        g.segment<6>(c[a]) += lin.gauge_g.segment<6>(6 * a);
        for (int b = 0; b < 2; ++b) {
          if (c[b] < 0) continue;
          add_block(c[a], c[b], lin.gauge_h.block<6, 6>(6 * a, 6 * b).eval());
        }
      }
    }
    h.resize(static_cast<Eigen::Index>(dimension_), static_cast<Eigen::Index>(dimension_));
    h.setFromTriplets(trip.begin(), trip.end());
    // Keep every diagonal entry present so damping can reach unconstrained variables.
    for (Eigen::Index d = 0; d < h.rows(); ++d) h.coeffRef(d, d) += 0.0;
    h.makeCompressed();
  }

  Variables apply(const Variables& v, const Eigen::VectorXd& delta) const {
    Variables out = v;
    for (std::size_t i = 0; i < v.lidar.size(); ++i) {
      if (lidar_col_[i] >= 0) out.lidar[i] = perturb_left(v.lidar[i], delta.segment<6>(lidar_col_[i]));
    }
    for (std::size_t j = 0; j < v.cameras.size(); ++j) {
      if (camera_col_[j] >= 0) out.cameras[j] = perturb_left(v.cameras[j], delta.segment<6>(camera_col_[j]));
    }
    for (std::size_t p = 0; p < v.points.size(); ++p) out.points[p] += delta.segment<3>(point_col_[p]);
    return out;
  }

  bool has_voxel_terms() const { return lidar_active_ || mappoint_active_; }

 private:
  LidarAccumulator lidar_terms(std::size_t i, const Pose& pose, double inflation, bool with_jacobian) const {
    LidarAccumulator acc;
    const LidarFrame& frame = *problem_.lidar[i].frame;
    const VoxelMap& map = *problem_.map;
    const double floor = map.config().eig_floor;
    const std::size_t stride = std::max<std::size_t>(1, opts_.lidar_point_stride);
    for (std::size_t k = 0; k < frame.points.size(); k += stride) {
      const LidarPoint& p = frame.points[k];
      const Vec3 xw = pose * p.position;
      const VoxelQuery q = map.query_voxel(xw);
      if (!q.mature) continue;
      double w = intensity_weight(p.intensity);
      if (opts_.time_weighting) {
        w *= time_weight(std::abs(frame.frame_index - q.node->creation_time()), opts_.time_weight_inverted);
      }
      const GaussianResidual res = gaussian_residual(xw, normal_gaussian(*q.node, floor), w, inflation);
      acc.cost += res.cost;
      if (!with_jacobian || w == 0.0) continue;
      Row6 jr;
      jr.leftCols<3>() = res.dr_dx.transpose() * -skew(xw);
      jr.rightCols<3>() = res.dr_dx.transpose();
      const double irls = w * res.decay;
      acc.h.noalias() += irls * jr.transpose() * jr;
      acc.g.noalias() += irls * res.r * jr.transpose();
    }
    return acc;
  }

  const BundleProblem& problem_;
  const BundleOptions& opts_;
  std::vector<int> point_ids_;
  std::vector<ObservationRef> observations_;
  std::vector<bool> lidar_free_;
  std::vector<bool> camera_free_;
  std::vector<long> lidar_col_;
  std::vector<long> camera_col_;
  std::vector<long> point_col_;
  std::size_t dimension_ = 0;
  bool lidar_active_ = false;
  bool mappoint_active_ = false;
  bool gauge_active_ = false;
  double gauge_distance_ = 0.0;
};

}  // namespace

EnergyBreakdown bundle_energy(const BundleProblem& problem, const BundleOptions& opts) {
  const Solver solver(problem, opts);
  return solver.evaluate(solver.initial(), 0.0, false).energy;
}

BundleReport joint_ba(BundleProblem& problem, const BundleOptions& opts) {
  const Solver solver(problem, opts);
  Variables vars = solver.initial();
  BundleReport report;
  report.initial = solver.evaluate(vars, 0.0, false).energy;
  if (!std::isfinite(report.initial.e)) {
    throw Error(ErrorCode::DegenerateInput, "joint_ba: a map point starts behind an observing camera");
  }
  EnergyBreakdown exact = report.initial;

  std::vector<double> stages;
  if (solver.has_voxel_terms()) {
    for (double s : opts.anneal_sigmas) {
      if (s > 0.0) stages.push_back(s * s);
    }
  }
  stages.push_back(0.0);

  bool ever_accepted = false;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt;
  for (std::size_t stage = 0; stage < stages.size(); ++stage) {
    const double inflation = stages[stage];
    const bool final_stage = stage + 1 == stages.size();
    double lambda = opts.damping_init;
    Linearization lin = solver.evaluate(vars, inflation, true);
    bool stage_converged = false;
    for (int it = 0; it < opts.max_iterations && solver.dimension() > 0; ++it) {
      Eigen::SparseMatrix<double> h;
      Eigen::VectorXd g;
      solver.assemble(lin, h, g);
      ldlt.analyzePattern(h);
      bool accepted = false;
      for (int retry = 0; retry <= opts.max_damping_retries; ++retry) {
        Eigen::SparseMatrix<double> a = h;
        for (Eigen::Index d = 0; d < a.rows(); ++d) {
          a.coeffRef(d, d) += lambda * std::max(h.coeff(d, d), 1e-9);
        }
        ldlt.factorize(a);
        if (ldlt.info() != Eigen::Success) {
          lambda *= opts.damping_scale;
          continue;
        }
        const Eigen::VectorXd delta = ldlt.solve(-g);
        if (!delta.allFinite()) {
          lambda *= opts.damping_scale;
          continue;
        }
        if (delta.norm() < opts.step_tol) {
          stage_converged = true;
          break;
        }
        const Variables trial = solver.apply(vars, delta);
        Linearization trial_lin = solver.evaluate(trial, inflation, true);
        const EnergyBreakdown trial_exact =
            inflation == 0.0 ? trial_lin.energy : solver.evaluate(trial, 0.0, false).energy;
        if (trial_lin.energy.e < lin.energy.e && trial_exact.e <= exact.e) {
          const double rel = (lin.energy.e - trial_lin.energy.e) / std::max(lin.energy.e, 1e-300);
          vars = trial;
          lin = std::move(trial_lin);
          exact = trial_exact;
          ever_accepted = true;
          accepted = true;
          ++report.iterations;
          report.log.push_back({report.iterations, static_cast<int>(stage), exact, lambda, delta.norm()});
          lambda = std::max(lambda / opts.damping_scale, 1e-12);
          stage_converged = rel < opts.relative_decrease_tol;
          break;
        }
        lambda *= opts.damping_scale;
      }
      if (stage_converged || !accepted) {
        if (!accepted && !stage_converged && final_stage && !ever_accepted) {
          Eigen::SparseMatrix<double> h;
          Eigen::VectorXd g;
          solver.assemble(lin, h, g);
          if (g.norm() > 1e-6 * std::max(1.0, lin.energy.e)) {
            throw Error(ErrorCode::SolverFailed, "joint_ba: no damping level lowers the energy");
          }
        }
        if (final_stage) report.converged = true;
        break;
      }
    }
  }

  solver.store(vars, problem);
  report.final_energy = exact;
  return report;
}

void write_ba_log(std::ostream& os, const BundleReport& report) {
  os << "# iteration stage E E_I E_L damping step_norm\n";
  os << 0 << ' ' << -1 << ' ' << format_double(report.initial.e) << ' ' << format_double(report.initial.e_i) << ' '
     << format_double(report.initial.e_l) << " 0 0\n";
  for (const auto& e : report.log) {
    os << e.iteration << ' ' << e.stage << ' ' << format_double(e.energy.e) << ' ' << format_double(e.energy.e_i)
       << ' ' << format_double(e.energy.e_l) << ' ' << format_double(e.damping) << ' '
       << format_double(e.step_norm) << '\n';
  }
}

// ---------------------------------------------------------------------------

namespace {

bool same_pose(const Pose& a, const Pose& b) {
  return a.rotation == b.rotation && a.translation == b.translation;
}

void delete_frame(VoxelMap& map, const RefreshFrame& f, RefreshReport& report) {
  for (std::size_t i = 0; i < f.frame->points.size(); ++i) {
    if (i < f.absorbed.size() && f.absorbed[i] == 0) continue;
    try {
      map.remove_point(f.old_pose * f.frame->points[i].position);
      ++report.deleted;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::MissingVoxel) throw;
      ++report.missing;
    }
  }
}

void add_frame(VoxelMap& map, RefreshFrame& f, RefreshReport& report) {
  f.absorbed.assign(f.frame->points.size(), 0);
  for (std::size_t i = 0; i < f.frame->points.size(); ++i) {
    const LidarPoint& p = f.frame->points[i];
    if (map.insert_point(f.new_pose * p.position, p.intensity, f.frame->frame_index) == InsertOutcome::Absorbed) {
      f.absorbed[i] = 1;
      ++report.added;
    } else {
      ++report.discarded;
    }
  }
  f.old_pose = f.new_pose;
}

}  // namespace

RefreshReport refresh_voxel_map(VoxelMap& map, VoxelRefreshPlan& plan, RefreshOrder order) {
  RefreshReport report;
  std::vector<RefreshFrame*> changed;
  for (auto& f : plan.frames) {
    if (f.frame == nullptr) throw Error(ErrorCode::DegenerateInput, "refresh_voxel_map: frame missing");
    if (!same_pose(f.old_pose, f.new_pose)) changed.push_back(&f);
  }
  report.frames_changed = changed.size();
  if (order == RefreshOrder::TwoPhase) {
    for (RefreshFrame* f : changed) delete_frame(map, *f, report);
    for (RefreshFrame* f : changed) add_frame(map, *f, report);
  } else {
    for (RefreshFrame* f : changed) {
      delete_frame(map, *f, report);
      add_frame(map, *f, report);
    }
  }
  return report;
}

namespace {

struct NodeSnapshot {
  GaussianStats stats;
};

std::map<std::string, NodeSnapshot> snapshot(const VoxelMap& map) {
  std::map<std::string, NodeSnapshot> out;
  map.visit_nodes([&](const VoxelKey& key, const std::string& path, const VoxelNode& node) {
    out.emplace(std::to_string(key.ix) + ' ' + std::to_string(key.iy) + ' ' + std::to_string(key.iz) + ' ' + path,
                NodeSnapshot{node.stats()});
  });
  return out;
}

}  // namespace

RefreshAudit compare_maps(const VoxelMap& a, const VoxelMap& b, double tol) {
  RefreshAudit audit;
  const auto sa = snapshot(a);
  const auto sb = snapshot(b);
  for (const auto& [key, na] : sa) {
    const auto it = sb.find(key);
    if (it == sb.end()) {
      ++audit.only_refreshed;
      audit.mismatched.push_back(key);
      continue;
    }
    const GaussianStats& x = na.stats;
    const GaussianStats& y = it->second.stats;
    const double err = std::max((x.mean - y.mean).cwiseAbs().maxCoeff(),
                                (x.covariance - y.covariance).cwiseAbs().maxCoeff());
    if (x.count != y.count || !(err <= tol)) {
      audit.mismatched.push_back(key);
    } else {
      ++audit.matched;
      audit.max_stat_error = std::max(audit.max_stat_error, err);
    }
  }
  for (const auto& [key, nb] : sb) {
    if (!sa.contains(key)) {
      ++audit.only_rebuilt;
      audit.mismatched.push_back(key);
    }
  }
  return audit;
}

RefreshAudit audit_refresh(const VoxelMap& refreshed, const VoxelRefreshPlan& plan, double tol) {
  VoxelMap rebuilt(refreshed.config());
  for (const auto& f : plan.frames) insert_frame(rebuilt, *f.frame, f.new_pose);
  return compare_maps(refreshed, rebuilt, tol);
}

}  // namespace voxsfm
