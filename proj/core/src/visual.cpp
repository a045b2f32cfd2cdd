#include "voxsfm/visual.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_map>

#include <Eigen/Cholesky>
#include <Eigen/SVD>
#include <opencv2/calib3d.hpp>
#include <opencv2/core.hpp>

#include "voxsfm/error.hpp"

namespace voxsfm {

const Observation* VisualFrame::find(int feature_id) const {
  const auto it = std::lower_bound(observations.begin(), observations.end(), feature_id,
                                   [](const Observation& o, int id) { return o.feature_id < id; });
  if (it == observations.end() || it->feature_id != feature_id) return nullptr;
  return &*it;
}

void VisualFrame::sort_observations() {
  std::sort(observations.begin(), observations.end(),
            [](const Observation& a, const Observation& b) { return a.feature_id < b.feature_id; });
}

const Pose& Extrinsics::get(int camera_id) const {
  const auto it = lidar_from_camera.find(camera_id);
  if (it == lidar_from_camera.end()) {
    throw Error(ErrorCode::ConfigError, "no extrinsics for camera " + std::to_string(camera_id));
  }
  return it->second;
}

Pose Extrinsics::lidar_pose_from_camera(const Pose& world_from_camera, int camera_id) const {
  Pose out = world_from_camera * get(camera_id).inverse();
  out.timestamp = world_from_camera.timestamp;
  return out;
}

Pose Extrinsics::camera_pose_from_lidar(const Pose& world_from_lidar, int camera_id) const {
  Pose out = world_from_lidar * get(camera_id);
  out.timestamp = world_from_lidar.timestamp;
  return out;
}

Vec2 reprojection_residual(const MapPoint& mp, const VisualFrame& frame, int feature_id) {
  if (!frame.pose) {
    throw Error(ErrorCode::DegenerateInput, "reprojection_residual: frame is not registered");
  }
  const Observation* obs = frame.find(feature_id);
  if (obs == nullptr) {
    throw Error(ErrorCode::DegenerateInput, "reprojection_residual: feature not observed in frame");
  }
  return project_pinhole(frame.intrinsics, *frame.pose, mp.position) - obs->pixel;
}

ReprojectionJacobian reprojection_jacobian(const PinholeIntrinsics& k, const Pose& world_from_camera,
                                           const Vec3& x_world, const Vec2& observed) {
  const Mat3 rt = world_from_camera.rotation.transpose();
  const Vec3 xc = rt * (x_world - world_from_camera.translation);
  ReprojectionJacobian out;
  out.residual = project_camera(k, xc) - observed;
  const double iz = 1.0 / xc.z();
  Eigen::Matrix<double, 2, 3> dpi;
  dpi << k.fu * iz, 0.0, -k.fu * xc.x() * iz * iz, 0.0, k.fv * iz, -k.fv * xc.y() * iz * iz;
  out.d_point = dpi * rt;
  out.d_pose.leftCols<3>() = dpi * rt * skew(x_world);
  out.d_pose.rightCols<3>() = -out.d_point;
  return out;
}

namespace {

Vec3 normalized_ray(const PinholeIntrinsics& k, const Vec2& px) {
  return Vec3((px.x() - k.cu) / k.fu, (px.y() - k.cv) / k.fv, 1.0);
}

double reprojection_rms(std::span<const TriangulationView> views, const Vec3& x) {
  double sum = 0.0;
  for (const auto& v : views) {
    const Vec3 xc = v.world_from_camera.rotation.transpose() * (x - v.world_from_camera.translation);
    if (xc.z() <= kDepthFloor) return std::numeric_limits<double>::infinity();
    sum += (project_camera(v.intrinsics, xc) - v.pixel).squaredNorm();
  }
  return std::sqrt(sum / static_cast<double>(views.size()));
}

}  // namespace

TriangulationResult triangulate(std::span<const TriangulationView> views) {
  if (views.size() < 2) {
    throw Error(ErrorCode::DegenerateBaseline, "triangulate: need at least two views");
  }
  double baseline = 0.0;
  for (std::size_t i = 0; i < views.size(); ++i) {
    for (std::size_t j = i + 1; j < views.size(); ++j) {
      baseline = std::max(baseline, (views[i].world_from_camera.translation -
                                     views[j].world_from_camera.translation).norm());
    }
  }
  if (baseline < 1e-9) {
    throw Error(ErrorCode::DegenerateBaseline, "triangulate: camera centers coincide");
  }

  Eigen::MatrixXd a(2 * views.size(), 4);
  for (std::size_t i = 0; i < views.size(); ++i) {
    const auto& v = views[i];
    const Mat3 rt = v.world_from_camera.rotation.transpose();
    Eigen::Matrix<double, 3, 4> p;
    p.leftCols<3>() = rt;
    p.col(3) = -rt * v.world_from_camera.translation;
    const Vec3 ray = normalized_ray(v.intrinsics, v.pixel);
    a.row(static_cast<Eigen::Index>(2 * i)) = ray.x() * p.row(2) - p.row(0);
    a.row(static_cast<Eigen::Index>(2 * i + 1)) = ray.y() * p.row(2) - p.row(1);
  }
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const Eigen::Vector4d h = svd.matrixV().col(3);
  if (std::abs(h(3)) < 1e-12 * h.head<3>().norm()) {
    throw Error(ErrorCode::DegenerateBaseline, "triangulate: point at infinity");
  }
  Vec3 x = h.head<3>() / h(3);

  // Gauss-Newton on pixel error; keeps the linear estimate if a step does not help.
  double rms = reprojection_rms(views, x);
  for (int it = 0; it < 10 && std::isfinite(rms); ++it) {
    Mat3 jtj = Mat3::Zero();
    Vec3 jtr = Vec3::Zero();
    bool ok = true;
    for (const auto& v : views) {
      try {
        const ReprojectionJacobian rj = reprojection_jacobian(v.intrinsics, v.world_from_camera, x, v.pixel);
        jtj += rj.d_point.transpose() * rj.d_point;
        jtr += rj.d_point.transpose() * rj.residual;
      } catch (const Error&) {
        ok = false;
        break;
      }
    }
    if (!ok) break;
    const Vec3 step = jtj.ldlt().solve(-jtr);
    if (!step.allFinite()) break;
    const Vec3 candidate = x + step;
    const double candidate_rms = reprojection_rms(views, candidate);
    if (!(candidate_rms <= rms)) break;
    x = candidate;
    const bool done = rms - candidate_rms < 1e-14 * std::max(1.0, rms) || step.norm() < 1e-12;
    rms = candidate_rms;
    if (done) break;
  }

  TriangulationResult out;
  out.point = x;
  out.rms_reprojection = rms;
  for (std::size_t i = 0; i < views.size(); ++i) {
    for (std::size_t j = i + 1; j < views.size(); ++j) {
      const Vec3 ri = (x - views[i].world_from_camera.translation).normalized();
      const Vec3 rj = (x - views[j].world_from_camera.translation).normalized();
      out.max_parallax_deg = std::max(out.max_parallax_deg, rad2deg(std::acos(std::clamp(ri.dot(rj), -1.0, 1.0))));
    }
  }
  return out;
}

namespace {

// Gauss-Newton refinement of world_from_camera on the given correspondences.
Pose refine_pose(const PinholeIntrinsics& k, Pose pose, std::span<const Vec2> pixels,
                 std::span<const Vec3> points, const std::vector<std::size_t>& subset, int iterations) {
  auto cost_of = [&](const Pose& p) {
    double c = 0.0;
    for (std::size_t i : subset) {
      const Vec3 xc = p.rotation.transpose() * (points[i] - p.translation);
      if (xc.z() <= kDepthFloor) return std::numeric_limits<double>::infinity();
      c += (project_camera(k, xc) - pixels[i]).squaredNorm();
    }
    return c;
  };
  double cost = cost_of(pose);
  double lambda = 1e-6;
  for (int it = 0; it < iterations && std::isfinite(cost); ++it) {
    Mat6 h = Mat6::Zero();
    Vec6 g = Vec6::Zero();
    for (std::size_t i : subset) {
      const ReprojectionJacobian rj = reprojection_jacobian(k, pose, points[i], pixels[i]);
      h += rj.d_pose.transpose() * rj.d_pose;
      g += rj.d_pose.transpose() * rj.residual;
    }
    bool accepted = false;
    for (int retry = 0; retry < 8; ++retry) {
      Mat6 a = h;
      for (int d = 0; d < 6; ++d) a(d, d) += lambda * std::max(h(d, d), 1e-12);
      const Vec6 delta = a.ldlt().solve(-g);
      if (!delta.allFinite()) break;
      const Pose trial = perturb_left(pose, delta);
      const double trial_cost = cost_of(trial);
      if (trial_cost <= cost) {
        const bool done = delta.norm() < 1e-14 || cost - trial_cost <= 1e-16 * std::max(cost, 1e-300);
        pose = trial;
        cost = trial_cost;
        lambda = std::max(lambda * 0.1, 1e-12);
        accepted = !done;
        break;
      }
      lambda *= 10.0;
    }
    if (!accepted) break;
  }
  return pose;
}

std::vector<std::size_t> inliers_of(const PinholeIntrinsics& k, const Pose& pose, std::span<const Vec2> pixels,
                                    std::span<const Vec3> points, double threshold) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Vec3 xc = pose.rotation.transpose() * (points[i] - pose.translation);
    if (xc.z() <= kDepthFloor) continue;
    if ((project_camera(k, xc) - pixels[i]).norm() <= threshold) out.push_back(i);
  }
  return out;
}

}  // namespace

PnpResult pnp_register(const PinholeIntrinsics& k, std::span<const Vec2> pixels, std::span<const Vec3> points,
                       std::span<const int> ids, const PnpOptions& opts) {
  if (pixels.size() != points.size() || ids.size() != points.size()) {
    throw Error(ErrorCode::DegenerateInput, "pnp_register: correspondence arrays differ in length");
  }
  if (points.size() < 4) {
    throw Error(ErrorCode::TooFewCorrespondences,
                "pnp_register: " + std::to_string(points.size()) + " correspondences, need 4");
  }
  std::vector<cv::Point3d> object;
  std::vector<cv::Point2d> image;
  object.reserve(points.size());
  image.reserve(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    object.emplace_back(points[i].x(), points[i].y(), points[i].z());
    image.emplace_back(pixels[i].x(), pixels[i].y());
  }
  const cv::Matx33d kmat(k.fu, 0.0, k.cu, 0.0, k.fv, k.cv, 0.0, 0.0, 1.0);
  cv::Mat rvec, tvec;
  std::vector<int> cv_inliers;
  bool ok = false;
  try {
    ok = cv::solvePnPRansac(object, image, kmat, cv::noArray(), rvec, tvec, false, opts.ransac_iterations,
                            static_cast<float>(opts.reprojection_threshold_px), opts.confidence, cv_inliers,
                            cv::SOLVEPNP_EPNP);
  } catch (const cv::Exception& e) {
    throw Error(ErrorCode::ConsensusFailed, std::string("pnp_register: ") + e.what());
  }
  if (!ok || cv_inliers.size() < 4) {
    throw Error(ErrorCode::ConsensusFailed, "pnp_register: RANSAC found no consistent pose");
  }
  cv::Matx33d rcw;
  cv::Rodrigues(rvec, rcw);
  Mat3 r;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) r(i, j) = rcw(i, j);
  }
  const Vec3 t(tvec.at<double>(0), tvec.at<double>(1), tvec.at<double>(2));
  Pose pose = Pose(orthonormalize(r), t).inverse();

  std::vector<std::size_t> subset(cv_inliers.begin(), cv_inliers.end());
  pose = refine_pose(k, pose, pixels, points, subset, opts.refine_iterations);
  subset = inliers_of(k, pose, pixels, points, opts.reprojection_threshold_px);
  if (subset.size() < 4) {
    throw Error(ErrorCode::ConsensusFailed, "pnp_register: refined pose lost its inliers");
  }
  pose = refine_pose(k, pose, pixels, points, subset, opts.refine_iterations);
  subset = inliers_of(k, pose, pixels, points, opts.reprojection_threshold_px);
  if (subset.size() < 4) {
    throw Error(ErrorCode::ConsensusFailed, "pnp_register: refined pose lost its inliers");
  }

  PnpResult out;
  out.world_from_camera = pose;
  double sum = 0.0;
  for (std::size_t i : subset) {
    out.inliers.push_back(ids[i]);
    sum += (project_pinhole(k, pose, points[i]) - pixels[i]).squaredNorm();
  }
  out.rms_reprojection = std::sqrt(sum / static_cast<double>(subset.size()));
  return out;
}

PnpResult pnp_register(const VisualFrame& frame, const MapPoints& points, const PnpOptions& opts) {
  std::vector<Vec2> pixels;
  std::vector<Vec3> xyz;
  std::vector<int> ids;
  for (const auto& obs : frame.observations) {
    const auto it = points.find(obs.feature_id);
    if (it == points.end()) continue;
    pixels.push_back(obs.pixel);
    xyz.push_back(it->second.position);
    ids.push_back(obs.feature_id);
  }
  PnpResult out = pnp_register(frame.intrinsics, pixels, xyz, ids, opts);
  out.world_from_camera.timestamp = frame.timestamp;
  return out;
}

namespace {

// Median angle left between matched rays after the best pure rotation b <- a.
double rotation_only_parallax_deg(const std::vector<cv::Point2d>& pa, const std::vector<cv::Point2d>& pb) {
  std::vector<Vec3> ra, rb;
  Mat3 h = Mat3::Zero();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    ra.push_back(Vec3(pa[i].x, pa[i].y, 1.0).normalized());
    rb.push_back(Vec3(pb[i].x, pb[i].y, 1.0).normalized());
    h += rb.back() * ra.back().transpose();
  }
  const Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  const Mat3 r = svd.matrixU() * d * svd.matrixV().transpose();
  std::vector<double> angles;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    angles.push_back(rad2deg(std::acos(std::clamp((r * ra[i]).dot(rb[i]), -1.0, 1.0))));
  }
  std::nth_element(angles.begin(), angles.begin() + static_cast<std::ptrdiff_t>(angles.size() / 2), angles.end());
  return angles[angles.size() / 2];
}

}  // namespace

TwoViewResult two_view_init(const VisualFrame& a, const VisualFrame& b, const TwoViewOptions& opts) {
  std::vector<int> ids;
  std::vector<cv::Point2d> pa, pb;
  for (const auto& oa : a.observations) {
    const Observation* ob = b.find(oa.feature_id);
    if (ob == nullptr) continue;
    ids.push_back(oa.feature_id);
    const Vec3 ra = normalized_ray(a.intrinsics, oa.pixel);
    const Vec3 rb = normalized_ray(b.intrinsics, ob->pixel);
    pa.emplace_back(ra.x(), ra.y());
    pb.emplace_back(rb.x(), rb.y());
  }
  if (ids.size() < 8) {
    throw Error(ErrorCode::DegenerateGeometry,
                "two_view_init: " + std::to_string(ids.size()) + " matches, need 8");
  }
  if (rotation_only_parallax_deg(pa, pb) < opts.min_parallax_deg) {
    throw Error(ErrorCode::DegenerateGeometry, "two_view_init: matches are explained by a pure rotation");
  }
  const double focal = 0.25 * (a.intrinsics.fu + a.intrinsics.fv + b.intrinsics.fu + b.intrinsics.fv);
  const double threshold = opts.inlier_threshold_px / focal;

  cv::Mat mask;
  cv::Mat e;
  try {
    e = cv::findEssentialMat(pa, pb, 1.0, cv::Point2d(0.0, 0.0), cv::RANSAC, 0.999, threshold, mask);
  } catch (const cv::Exception& ex) {
    throw Error(ErrorCode::DegenerateGeometry, std::string("two_view_init: ") + ex.what());
  }
  if (e.empty() || e.rows < 3) {
    throw Error(ErrorCode::DegenerateGeometry, "two_view_init: essential matrix estimation failed");
  }
  e = e.rowRange(0, 3).clone();
  cv::Mat rmat, tvec;
  cv::recoverPose(e, pa, pb, rmat, tvec, 1.0, cv::Point2d(0.0, 0.0), mask);

  Mat3 r;
  Vec3 t;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) r(i, j) = rmat.at<double>(i, j);
    t(i) = tvec.at<double>(i);
  }
  if (!(t.norm() > 0.0)) {
    throw Error(ErrorCode::DegenerateGeometry, "two_view_init: zero translation");
  }
  t.normalize();
  // recoverPose returns x_b = R x_a + t.
  TwoViewResult out;
  out.pose_a = Pose(Mat3::Identity(), Vec3::Zero(), a.timestamp);
  out.pose_b = Pose(orthonormalize(r), t, b.timestamp).inverse();

  std::vector<double> parallax;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const Observation* oa = a.find(ids[i]);
    const Observation* ob = b.find(ids[i]);
    const std::array<TriangulationView, 2> views{
        TriangulationView{out.pose_a, a.intrinsics, oa->pixel},
        TriangulationView{out.pose_b, b.intrinsics, ob->pixel}};
    TriangulationResult tri;
    try {
      tri = triangulate(views);
    } catch (const Error&) {
      continue;
    }
    const Vec3 xa = tri.point;
    const Vec3 xb = out.pose_b.inverse() * tri.point;
    if (xa.z() <= kDepthFloor || xb.z() <= kDepthFloor) continue;
    if (!(tri.rms_reprojection < 4.0 * opts.inlier_threshold_px)) continue;
    parallax.push_back(tri.max_parallax_deg);
    MapPoint mp;
    mp.position = tri.point;
    mp.track = {TrackElement{a.frame_index, ids[i]}, TrackElement{b.frame_index, ids[i]}};
    out.points.emplace(ids[i], std::move(mp));
  }
  if (static_cast<int>(out.points.size()) < opts.min_points) {
    throw Error(ErrorCode::DegenerateGeometry, "two_view_init: too few points pass cheirality");
  }
  std::nth_element(parallax.begin(), parallax.begin() + static_cast<std::ptrdiff_t>(parallax.size() / 2),
                   parallax.end());
  if (parallax[parallax.size() / 2] < opts.min_parallax_deg) {
    throw Error(ErrorCode::DegenerateGeometry, "two_view_init: insufficient parallax");
  }
  return out;
}

namespace {

// Uniform hash grid answering radius-gated nearest-neighbor queries.
class GridIndex {
 public:
  GridIndex(std::span<const LidarPoint> points, double cell) : points_(points), cell_(cell) {
    for (std::size_t i = 0; i < points.size(); ++i) {
      cells_[key_of(points[i].position)].push_back(i);
    }
  }

  // Index of the nearest point within radius (<= cell), or -1.
  long nearest(const Vec3& q, double radius) const {
    const Key k = key_of(q);
    long best = -1;
    double best_d2 = radius * radius;
    for (long dx = -1; dx <= 1; ++dx) {
      for (long dy = -1; dy <= 1; ++dy) {
        for (long dz = -1; dz <= 1; ++dz) {
          const auto it = cells_.find(Key{k.x + dx, k.y + dy, k.z + dz});
          if (it == cells_.end()) continue;
          for (std::size_t i : it->second) {
            const double d2 = (points_[i].position - q).squaredNorm();
            if (d2 <= best_d2) {
              if (d2 < best_d2 || best < 0 || static_cast<long>(i) < best) best = static_cast<long>(i);
              best_d2 = d2;
            }
          }
        }
      }
    }
    return best;
  }

 private:
  struct Key {
    long x, y, z;
    bool operator==(const Key&) const = default;
  };
  struct KeyHash {
    std::size_t operator()(const Key& k) const noexcept {
      return static_cast<std::size_t>((k.x * 73856093) ^ (k.y * 19349669) ^ (k.z * 83492791));
    }
  };
  Key key_of(const Vec3& p) const {
    return Key{static_cast<long>(std::floor(p.x() / cell_)), static_cast<long>(std::floor(p.y() / cell_)),
               static_cast<long>(std::floor(p.z() / cell_))};
  }

  std::span<const LidarPoint> points_;
  double cell_;
  std::unordered_map<Key, std::vector<std::size_t>, KeyHash> cells_;
};

}  // namespace

IcpResult init_lidar_pair_icp(const LidarFrame& a, const LidarFrame& b, const Pose& init, const IcpOptions& opts) {
  if (a.points.empty() || b.points.empty()) {
    throw Error(ErrorCode::IcpDiverged, "init_lidar_pair_icp: empty frame");
  }
  const GridIndex index(a.points, opts.max_correspondence_distance);
  IcpResult out;
  Pose current = init;
  const std::size_t min_pairs =
      std::max<std::size_t>(3, static_cast<std::size_t>(opts.min_inlier_fraction * static_cast<double>(b.points.size())));

  std::vector<Vec3> src, dst;
  for (int it = 0; it < opts.max_iterations; ++it) {
    src.clear();
    dst.clear();
    for (const auto& p : b.points) {
      const Vec3 x = current * p.position;
      const long j = index.nearest(x, opts.max_correspondence_distance);
      if (j < 0) continue;
      src.push_back(x);
      dst.push_back(a.points[static_cast<std::size_t>(j)].position);
    }
    if (src.size() < min_pairs) {
      throw Error(ErrorCode::IcpDiverged, "init_lidar_pair_icp: too few correspondences within the gate");
    }
    Similarity step;
    try {
      step = umeyama_align(src, dst, false);
    } catch (const Error&) {
      throw Error(ErrorCode::IcpDiverged, "init_lidar_pair_icp: degenerate correspondence set");
    }
    const Pose delta(orthonormalize(step.rotation), step.translation);
    current = delta * current;
    current.rotation = orthonormalize(current.rotation);
    out.iterations = it + 1;
    if (se3_log(delta).norm() < opts.convergence_tol) break;
  }

  double sum = 0.0;
  std::size_t matched = 0;
  for (const auto& p : b.points) {
    const Vec3 x = current * p.position;
    const long j = index.nearest(x, opts.max_correspondence_distance);
    if (j < 0) continue;
    sum += (a.points[static_cast<std::size_t>(j)].position - x).squaredNorm();
    ++matched;
  }
  if (matched < min_pairs || !current.is_valid(1e-6)) {
    throw Error(ErrorCode::IcpDiverged, "init_lidar_pair_icp: lost overlap");
  }
  out.rms = std::sqrt(sum / static_cast<double>(matched));
  out.a_from_b = current;
  out.a_from_b.timestamp = b.timestamp;
  return out;
}

Similarity align_lidar_to_visual(std::span<const PosePair> pairs, const Extrinsics& extrinsics) {
  if (pairs.size() < 2) {
    throw Error(ErrorCode::DegenerateInput, "align_lidar_to_visual: need at least two pose pairs");
  }
  std::vector<Vec3> src, dst;
  for (const auto& p : pairs) {
    src.push_back(p.lidar * extrinsics.get(p.camera_id).translation);
    dst.push_back(p.camera.translation);
  }
  try {
    return umeyama_align(src, dst, true);
  } catch (const Error&) {
    // Collinear centers (always the case for two pairs): take the rotation from
    // the orientations, then scale and translation in closed form.
  }
  Mat3 sum = Mat3::Zero();
  for (const auto& p : pairs) {
    const Mat3 camera_in_lidar_map = p.lidar.rotation * extrinsics.get(p.camera_id).rotation;
    sum += p.camera.rotation * camera_in_lidar_map.transpose();
  }
  Similarity out;
  out.rotation = orthonormalize(sum);
  Vec3 mean_src = Vec3::Zero(), mean_dst = Vec3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) {
    mean_src += src[i];
    mean_dst += dst[i];
  }
  mean_src /= static_cast<double>(src.size());
  mean_dst /= static_cast<double>(dst.size());
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    const Vec3 rs = out.rotation * (src[i] - mean_src);
    num += (dst[i] - mean_dst).dot(rs);
    den += rs.squaredNorm();
  }
  if (den < 1e-18 || !(num > 0.0)) {
    throw Error(ErrorCode::DegenerateInput, "align_lidar_to_visual: coincident positions");
  }
  out.scale = num / den;
  out.translation = mean_dst - out.scale * (out.rotation * mean_src);
  return out;
}

}  // namespace voxsfm
