#include "voxsfm/sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "voxsfm/error.hpp"
#include "voxsfm/parallel.hpp"

namespace voxsfm {

using nlohmann::json;

void SceneSpec::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::ConfigError, "scene: " + what); };
  if (trajectory.frames < 1) fail("trajectory needs at least one frame");
  if (!(trajectory.rate_hz > 0.0)) fail("rate_hz must be positive");
  if (trajectory.kind == TrajectoryKind::Circle && !(trajectory.radius > 0.0)) fail("circle radius must be positive");
  if (lidar.rings < 1 || lidar.azimuth_steps < 1) fail("LiDAR needs at least one ring and one azimuth step");
  if (!(lidar.max_range > 0.0) || !(lidar.range_noise >= 0.0)) fail("invalid LiDAR range model");
  for (const auto& c : cameras) {
    if (!(c.intrinsics.fu > 0.0 && c.intrinsics.fv > 0.0) || c.width < 2 || c.height < 2) {
      fail("camera " + std::to_string(c.id) + " has invalid intrinsics or size");
    }
    if (!c.lidar_from_camera.is_valid(1e-6)) fail("camera extrinsic rotation is not orthonormal");
  }
  for (const auto& p : planes) {
    if (!(p.normal.norm() > 0.0)) fail("plane normal must be nonzero");
  }
  for (const auto& s : spheres) {
    if (!(s.radius > 0.0)) fail("sphere radius must be positive");
  }
  for (const auto& b : boxes) {
    if (!(b.min.array() < b.max.array()).all()) fail("box min must be below max");
  }
  if (landmarks < 0) fail("landmark count must be non-negative");
}

Mat3 forward_camera_rotation() {
  Mat3 r;
  r.col(0) = -Vec3::UnitY();
  r.col(1) = -Vec3::UnitZ();
  r.col(2) = Vec3::UnitX();
  return r;
}

SceneSpec default_room_scene() {
  SceneSpec s;
  auto wall = [](Vec3 n, double offset, std::array<std::uint8_t, 3> color) {
    return PlaneSurface{n, offset, Material{color, 100.0}};
  };
  s.planes = {
      wall(Vec3::UnitX(), 6.0, {220, 40, 40}),     wall(Vec3::UnitX(), -6.0, {40, 200, 60}),
      wall(Vec3::UnitY(), 5.0, {50, 80, 220}),     wall(Vec3::UnitY(), -5.0, {230, 200, 60}),
      wall(Vec3::UnitZ(), -1.5, {120, 120, 120}),  wall(Vec3::UnitZ(), 2.5, {240, 240, 240}),
  };
  s.boxes = {
      BoxSurface{Vec3(1.5, -4.0, -1.5), Vec3(2.5, -3.0, 1.0), Material{{180, 90, 30}, 150.0}},
      BoxSurface{Vec3(-4.5, -1.0, -1.5), Vec3(-3.5, 0.5, 0.0), Material{{90, 30, 160}, 60.0}},
  };
  s.spheres = {SphereSurface{Vec3(-2.5, 3.5, -0.5), 0.8, Material{{30, 160, 160}, 120.0}}};
  CameraSpec cam;
  cam.lidar_from_camera = Pose(forward_camera_rotation(), Vec3(0.1, 0.0, -0.05));
  s.cameras = {cam};
  return s;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

Vec3 vec3_from(const json& j) {
  if (!j.is_array() || j.size() != 3) throw Error(ErrorCode::ConfigError, "expected a 3-element array");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

json vec3_to(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Material material_from(const json& j) {
  Material m;
  if (j.contains("color")) {
    const auto c = j.at("color");
    if (!c.is_array() || c.size() != 3) throw Error(ErrorCode::ConfigError, "color needs three channels");
    for (int i = 0; i < 3; ++i) {
      const int v = c[static_cast<std::size_t>(i)].get<int>();
      if (v < 0 || v > 255) throw Error(ErrorCode::ConfigError, "color channel outside [0, 255]");
      m.color[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(v);
    }
  }
  m.intensity = j.value("intensity", m.intensity);
  return m;
}

json material_to(const Material& m) {
  return json{{"color", json::array({m.color[0], m.color[1], m.color[2]})}, {"intensity", m.intensity}};
}

Pose pose_from(const json& j) {
  Pose p;
  if (j.contains("translation")) p.translation = vec3_from(j.at("translation"));
  if (j.contains("rotation")) {
    const auto& r = j.at("rotation");
    if (!r.is_array() || r.size() != 9) throw Error(ErrorCode::ConfigError, "rotation needs 9 row-major values");
    for (int i = 0; i < 9; ++i) p.rotation(i / 3, i % 3) = r[static_cast<std::size_t>(i)].get<double>();
  }
  return p;
}

json pose_to(const Pose& p) {
  json r = json::array();
  for (int i = 0; i < 9; ++i) r.push_back(p.rotation(i / 3, i % 3));
  return json{{"translation", vec3_to(p.translation)}, {"rotation", r}};
}

}  // namespace

SceneSpec scene_from_json(const std::string& text) {
  SceneSpec s;
  try {
    const json j = json::parse(text);
    for (const auto& p : j.value("planes", json::array())) {
      s.planes.push_back({vec3_from(p.at("normal")).normalized(), p.at("offset").get<double>(), material_from(p)});
    }
    for (const auto& b : j.value("boxes", json::array())) {
      s.boxes.push_back({vec3_from(b.at("min")), vec3_from(b.at("max")), material_from(b)});
    }
    for (const auto& sp : j.value("spheres", json::array())) {
      s.spheres.push_back({vec3_from(sp.at("center")), sp.at("radius").get<double>(), material_from(sp)});
    }
    if (j.contains("trajectory")) {
      const auto& t = j.at("trajectory");
      auto& tr = s.trajectory;
      const std::string kind = t.value("kind", std::string("circle"));
      if (kind == "circle") {
        tr.kind = TrajectoryKind::Circle;
      } else if (kind == "line") {
        tr.kind = TrajectoryKind::Line;
      } else {
        throw Error(ErrorCode::ConfigError, "unknown trajectory kind " + kind);
      }
      tr.frames = t.value("frames", tr.frames);
      tr.rate_hz = t.value("rate_hz", tr.rate_hz);
      if (t.contains("center")) tr.center = vec3_from(t.at("center"));
      tr.radius = t.value("radius", tr.radius);
      tr.speed = t.value("speed", tr.speed);
      if (t.contains("start")) tr.start = vec3_from(t.at("start"));
      if (t.contains("velocity")) tr.velocity = vec3_from(t.at("velocity"));
      tr.pitch_amplitude_deg = t.value("pitch_amplitude_deg", tr.pitch_amplitude_deg);
    }
    if (j.contains("lidar")) {
      const auto& l = j.at("lidar");
      s.lidar.rings = l.value("rings", s.lidar.rings);
      s.lidar.min_elevation_deg = l.value("min_elevation_deg", s.lidar.min_elevation_deg);
      s.lidar.max_elevation_deg = l.value("max_elevation_deg", s.lidar.max_elevation_deg);
      s.lidar.azimuth_steps = l.value("azimuth_steps", s.lidar.azimuth_steps);
      s.lidar.max_range = l.value("max_range", s.lidar.max_range);
      s.lidar.range_noise = l.value("range_noise", s.lidar.range_noise);
    }
    for (const auto& c : j.value("cameras", json::array())) {
      CameraSpec cam;
      cam.id = c.value("id", cam.id);
      cam.intrinsics.fu = c.value("fu", cam.intrinsics.fu);
      cam.intrinsics.fv = c.value("fv", cam.intrinsics.fv);
      cam.intrinsics.cu = c.value("cu", cam.intrinsics.cu);
      cam.intrinsics.cv = c.value("cv", cam.intrinsics.cv);
      cam.width = c.value("width", cam.width);
      cam.height = c.value("height", cam.height);
      cam.pixel_noise = c.value("pixel_noise", cam.pixel_noise);
      cam.lidar_from_camera = Pose(forward_camera_rotation(), Vec3::Zero());
      if (c.contains("lidar_from_camera")) {
        const auto& e = c.at("lidar_from_camera");
        cam.lidar_from_camera = pose_from(e);
        if (!e.contains("rotation")) cam.lidar_from_camera.rotation = forward_camera_rotation();
      }
      s.cameras.push_back(cam);
    }
    s.landmarks = j.value("landmarks", s.landmarks);
    s.landmark_max_range = j.value("landmark_max_range", s.landmark_max_range);
    s.render_images = j.value("render_images", s.render_images);
    if (j.contains("drift")) {
      const auto& d = j.at("drift");
      s.drift.odometry_sigma_t = d.value("odometry_sigma_t", 0.0);
      s.drift.odometry_sigma_r_deg = d.value("odometry_sigma_r_deg", 0.0);
      for (const auto& jp : d.value("jumps", json::array())) {
        s.drift.jumps.push_back({jp.at("frame").get<int>(), vec3_from(jp.at("offset"))});
      }
    }
    s.seed = j.value("seed", s.seed);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("scene JSON: ") + e.what());
  }
  s.validate();
  return s;
}

std::string scene_to_json(const SceneSpec& s) {
  json j;
  j["planes"] = json::array();
  for (const auto& p : s.planes) {
    json e = material_to(p.material);
    e["normal"] = vec3_to(p.normal);
    e["offset"] = p.offset;
    j["planes"].push_back(e);
  }
  j["boxes"] = json::array();
  for (const auto& b : s.boxes) {
    json e = material_to(b.material);
    e["min"] = vec3_to(b.min);
    e["max"] = vec3_to(b.max);
    j["boxes"].push_back(e);
  }
  j["spheres"] = json::array();
  for (const auto& sp : s.spheres) {
    json e = material_to(sp.material);
    e["center"] = vec3_to(sp.center);
    e["radius"] = sp.radius;
    j["spheres"].push_back(e);
  }
  const auto& t = s.trajectory;
  j["trajectory"] = json{{"kind", t.kind == TrajectoryKind::Circle ? "circle" : "line"},
                         {"frames", t.frames},
                         {"rate_hz", t.rate_hz},
                         {"center", vec3_to(t.center)},
                         {"radius", t.radius},
                         {"speed", t.speed},
                         {"start", vec3_to(t.start)},
                         {"velocity", vec3_to(t.velocity)},
                         {"pitch_amplitude_deg", t.pitch_amplitude_deg}};
  j["lidar"] = json{{"rings", s.lidar.rings},
                    {"min_elevation_deg", s.lidar.min_elevation_deg},
                    {"max_elevation_deg", s.lidar.max_elevation_deg},
                    {"azimuth_steps", s.lidar.azimuth_steps},
                    {"max_range", s.lidar.max_range},
                    {"range_noise", s.lidar.range_noise}};
  j["cameras"] = json::array();
  for (const auto& c : s.cameras) {
    j["cameras"].push_back(json{{"id", c.id},
                                {"fu", c.intrinsics.fu},
                                {"fv", c.intrinsics.fv},
                                {"cu", c.intrinsics.cu},
                                {"cv", c.intrinsics.cv},
                                {"width", c.width},
                                {"height", c.height},
                                {"pixel_noise", c.pixel_noise},
                                {"lidar_from_camera", pose_to(c.lidar_from_camera)}});
  }
  j["landmarks"] = s.landmarks;
  j["landmark_max_range"] = s.landmark_max_range;
  j["render_images"] = s.render_images;
  json jumps = json::array();
  for (const auto& jp : s.drift.jumps) jumps.push_back(json{{"frame", jp.frame}, {"offset", vec3_to(jp.offset)}});
  j["drift"] = json{{"odometry_sigma_t", s.drift.odometry_sigma_t},
                    {"odometry_sigma_r_deg", s.drift.odometry_sigma_r_deg},
                    {"jumps", jumps}};
  j["seed"] = s.seed;
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Geometry

namespace {

constexpr double kHitEps = 1e-9;

void consider(std::optional<RayHit>& best, double t, const Vec3& normal, const Material& m) {
  if (!(t > kHitEps)) return;
  if (!best || t < best->t) best = RayHit{t, normal, m};
}

}  // namespace

std::optional<RayHit> raycast(const SceneSpec& scene, const Vec3& o, const Vec3& d) {
  std::optional<RayHit> best;
  for (const auto& p : scene.planes) {
    const double denom = p.normal.dot(d);
    if (std::abs(denom) < 1e-12) continue;
    consider(best, (p.offset - p.normal.dot(o)) / denom, p.normal, p.material);
  }
  for (const auto& b : scene.boxes) {
    double t_near = -std::numeric_limits<double>::infinity();
    double t_far = std::numeric_limits<double>::infinity();
    int axis_near = 0, axis_far = 0;
    bool miss = false;
    for (int a = 0; a < 3; ++a) {
      if (std::abs(d(a)) < 1e-15) {
        if (o(a) < b.min(a) || o(a) > b.max(a)) miss = true;
        continue;
      }
      double t0 = (b.min(a) - o(a)) / d(a);
      double t1 = (b.max(a) - o(a)) / d(a);
      if (t0 > t1) std::swap(t0, t1);
      if (t0 > t_near) {
        t_near = t0;
        axis_near = a;
      }
      if (t1 < t_far) {
        t_far = t1;
        axis_far = a;
      }
    }
    if (miss || t_near > t_far) continue;
    Vec3 n_near = Vec3::Zero(), n_far = Vec3::Zero();
    n_near(axis_near) = d(axis_near) > 0.0 ? -1.0 : 1.0;
    n_far(axis_far) = d(axis_far) > 0.0 ? 1.0 : -1.0;
    if (t_near > kHitEps) {
      consider(best, t_near, n_near, b.material);
    } else {
      consider(best, t_far, n_far, b.material);
    }
  }
  for (const auto& s : scene.spheres) {
    const Vec3 oc = o - s.center;
    const double bq = oc.dot(d);
    const double c = oc.squaredNorm() - s.radius * s.radius;
    const double disc = bq * bq - c;
    if (disc < 0.0) continue;
    const double root = std::sqrt(disc);
    const double t0 = -bq - root;
    const double t = t0 > kHitEps ? t0 : -bq + root;
    consider(best, t, (o + t * d - s.center) / s.radius, s.material);
  }
  return best;
}

std::vector<Pose> trajectory_poses(const TrajectorySpec& traj) {
  std::vector<Pose> out;
  out.reserve(static_cast<std::size_t>(traj.frames));
  for (int k = 0; k < traj.frames; ++k) {
    const double t = k / traj.rate_hz;
    Vec3 pos;
    double yaw;
    if (traj.kind == TrajectoryKind::Circle) {
      const double theta = traj.speed / traj.radius * t;
      pos = traj.center + traj.radius * Vec3(std::cos(theta), std::sin(theta), 0.0);
      yaw = theta + kPi / 2.0;
    } else {
      pos = traj.start + traj.velocity * t;
      yaw = std::atan2(traj.velocity.y(), traj.velocity.x());
    }
    const double pitch = deg2rad(traj.pitch_amplitude_deg) * std::sin(2.0 * kPi * k / 40.0);
    const Mat3 r = (Eigen::AngleAxisd(yaw, Vec3::UnitZ()) * Eigen::AngleAxisd(pitch, Vec3::UnitY())).toRotationMatrix();
    out.emplace_back(r, pos, t);
  }
  return out;
}

std::vector<Vec3> lidar_rays(const LidarSpec& lidar) {
  std::vector<Vec3> rays;
  rays.reserve(static_cast<std::size_t>(lidar.rings) * lidar.azimuth_steps);
  for (int r = 0; r < lidar.rings; ++r) {
    const double elev = lidar.rings == 1 ? deg2rad(0.5 * (lidar.min_elevation_deg + lidar.max_elevation_deg))
                                        : deg2rad(lidar.min_elevation_deg +
                                                  (lidar.max_elevation_deg - lidar.min_elevation_deg) * r /
                                                      (lidar.rings - 1));
    for (int a = 0; a < lidar.azimuth_steps; ++a) {
      const double az = 2.0 * kPi * a / lidar.azimuth_steps;
      rays.emplace_back(std::cos(elev) * std::cos(az), std::cos(elev) * std::sin(az), std::sin(elev));
    }
  }
  return rays;
}

LidarFrame gen_scan(const SceneSpec& scene, const Pose& pose, int frame_index, double timestamp,
                    std::mt19937_64& rng) {
  LidarFrame frame;
  frame.frame_index = frame_index;
  frame.timestamp = timestamp;
  std::normal_distribution<double> noise(0.0, 1.0);
  for (const Vec3& ray : lidar_rays(scene.lidar)) {
    const auto hit = raycast(scene, pose.translation, pose.rotation * ray);
    // Draw even on a miss so the noise sequence does not depend on scene coverage.
    const double n = noise(rng) * scene.lidar.range_noise;
    if (!hit || hit->t > scene.lidar.max_range) continue;
    frame.points.push_back({ray * (hit->t + n), hit->material.intensity});
  }
  if (frame.points.empty()) throw Error(ErrorCode::NoHits, "gen_scan: no ray hit the scene");
  return frame;
}

std::vector<Observation> observe_landmarks(const SceneSpec& scene, std::span<const Vec3> landmarks,
                                           const CameraSpec& camera, const Pose& pose, std::mt19937_64& rng) {
  std::vector<Observation> out;
  std::normal_distribution<double> noise(0.0, 1.0);
  const Mat3 rt = pose.rotation.transpose();
  for (std::size_t id = 0; id < landmarks.size(); ++id) {
    const Vec3 xc = rt * (landmarks[id] - pose.translation);
    if (xc.z() < 0.1) continue;
    const Vec2 px = project_camera(camera.intrinsics, xc);
    if (px.x() < 0.0 || px.y() < 0.0 || px.x() > camera.width - 1 || px.y() > camera.height - 1) continue;
    const Vec3 to = landmarks[id] - pose.translation;
    const double dist = to.norm();
    const auto hit = raycast(scene, pose.translation, to / dist);
    if (!hit || hit->t < dist - 1e-6 * std::max(1.0, dist)) continue;
    const Vec2 n(noise(rng), noise(rng));
    out.push_back({static_cast<int>(id), px + camera.pixel_noise * n});
  }
  return out;
}

RgbImage render_image(const SceneSpec& scene, const CameraSpec& camera, const Pose& pose) {
  RgbImage img(camera.width, camera.height);
  const auto& k = camera.intrinsics;
  for (int v = 0; v < camera.height; ++v) {
    for (int u = 0; u < camera.width; ++u) {
      const Vec3 dir = pose.rotation * Vec3((u - k.cu) / k.fu, (v - k.cv) / k.fv, 1.0).normalized();
      if (const auto hit = raycast(scene, pose.translation, dir)) {
        std::copy(hit->material.color.begin(), hit->material.color.end(), img.at(u, v));
      }
    }
  }
  return img;
}

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

std::vector<Pose> simulate_odometry(std::span<const Pose> gt, double sigma_t, double sigma_r_deg,
                                    std::span<const PoseJump> jumps, std::uint64_t seed) {
  std::vector<Pose> out;
  if (gt.empty()) return out;
  std::mt19937_64 rng = make_rng(seed, 4, 0);
  std::normal_distribution<double> noise(0.0, 1.0);
  out.push_back(gt[0]);
  for (std::size_t k = 1; k < gt.size(); ++k) {
    Twist xi;
    for (int i = 0; i < 3; ++i) xi(i) = deg2rad(sigma_r_deg) * noise(rng);
    for (int i = 3; i < 6; ++i) xi(i) = sigma_t * noise(rng);
    Pose step = gt[k - 1].inverse() * gt[k] * se3_exp(xi);
    Pose next = out.back() * step;
    next.rotation = orthonormalize(next.rotation);
    next.timestamp = gt[k].timestamp;
    out.push_back(next);
  }
  for (const auto& j : jumps) {
    for (std::size_t k = 0; k < out.size(); ++k) {
      if (static_cast<int>(k) >= j.frame) out[k].translation += j.offset;
    }
  }
  return out;
}

SimDataset generate_dataset(const SceneSpec& scene, std::uint64_t seed) {
  scene.validate();
  SimDataset ds;
  ds.gt_lidar = trajectory_poses(scene.trajectory);
  const std::size_t frames = ds.gt_lidar.size();
  const std::size_t ncam = scene.cameras.size();
  for (const auto& c : scene.cameras) ds.extrinsics.lidar_from_camera[c.id] = c.lidar_from_camera;

  // Landmarks: surface points hit by random rays from trajectory positions.
  {
    std::mt19937_64 rng = make_rng(seed, 1, 0);
    std::uniform_int_distribution<std::size_t> pick(0, frames - 1);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const std::size_t wanted = static_cast<std::size_t>(scene.landmarks);
    for (std::size_t attempt = 0; ds.landmarks.size() < wanted && attempt < 100 * wanted + 100; ++attempt) {
      const Vec3 origin = ds.gt_lidar[pick(rng)].translation;
      Vec3 dir(gauss(rng), gauss(rng), gauss(rng));
      if (dir.norm() < 1e-9) continue;
      dir.normalize();
      const auto hit = raycast(scene, origin, dir);
      if (!hit || hit->t > scene.landmark_max_range || hit->t < 0.5) continue;
      ds.landmarks.push_back(origin + hit->t * dir);
    }
  }

  ds.lidar.resize(frames);
  parallel_chunks(frames, 1, [&](std::size_t begin, std::size_t end, std::size_t) {
    for (std::size_t k = begin; k < end; ++k) {
      std::mt19937_64 rng = make_rng(seed, 2, k);
      ds.lidar[k] = gen_scan(scene, ds.gt_lidar[k], static_cast<int>(k), *ds.gt_lidar[k].timestamp, rng);
    }
  });

  ds.visual.resize(frames * ncam);
  ds.gt_camera.resize(frames * ncam);
  if (scene.render_images) ds.images.resize(frames * ncam);
  parallel_chunks(frames * ncam, 1, [&](std::size_t begin, std::size_t end, std::size_t) {
    for (std::size_t f = begin; f < end; ++f) {
      const std::size_t k = f / ncam;
      const CameraSpec& cam = scene.cameras[f % ncam];
      Pose pose = ds.gt_lidar[k] * cam.lidar_from_camera;
      pose.timestamp = ds.gt_lidar[k].timestamp;
      ds.gt_camera[f] = pose;
      std::mt19937_64 rng = make_rng(seed, 3, f);
      VisualFrame& vf = ds.visual[f];
      vf.frame_index = static_cast<int>(f);
      vf.camera_id = cam.id;
      vf.timestamp = *pose.timestamp;
      vf.intrinsics = cam.intrinsics;
      vf.observations = observe_landmarks(scene, ds.landmarks, cam, pose, rng);
      vf.sort_observations();
      if (scene.render_images) ds.images[f] = render_image(scene, cam, pose);
    }
  });

  ds.odometry = simulate_odometry(ds.gt_lidar, scene.drift.odometry_sigma_t, scene.drift.odometry_sigma_r_deg,
                                  scene.drift.jumps, seed);
  return ds;
}

}  // namespace voxsfm
