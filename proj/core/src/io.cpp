#include "voxsfm/io.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "voxsfm/error.hpp"
#include "voxsfm/format.hpp"
#include "voxsfm/sim.hpp"

namespace voxsfm {

namespace fs = std::filesystem;

namespace {

std::ifstream open_in(const fs::path& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream is(path, mode);
  if (!is) throw Error(ErrorCode::MalformedFile, "cannot open " + path.string());
  return is;
}

std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::out) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, mode);
  if (!os) throw Error(ErrorCode::MalformedFile, "cannot open " + path.string() + " for writing");
  return os;
}

bool skip_line(const std::string& line) {
  const auto first = line.find_first_not_of(" \t\r");
  return first == std::string::npos || line[first] == '#';
}

[[noreturn]] void parse_error(const std::string& what, std::size_t line_no) {
  throw Error(ErrorCode::ParseError, what + " at line " + std::to_string(line_no));
}

// Reads exactly n numbers from the line, nothing after them.
std::vector<double> numbers(const std::string& line, std::size_t n, std::size_t line_no) {
  std::istringstream ls(line);
  std::vector<double> out(n);
  for (auto& v : out) {
    if (!(ls >> v)) parse_error("expected " + std::to_string(n) + " numbers", line_no);
  }
  std::string rest;
  if (ls >> rest) parse_error("trailing text '" + rest + "'", line_no);
  return out;
}

std::string quaternion_text(const Mat3& r) {
  Eigen::Quaterniond q(r);
  q.normalize();
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  return format_double(q.x()) + ' ' + format_double(q.y()) + ' ' + format_double(q.z()) + ' ' + format_double(q.w());
}

Mat3 quaternion_rotation(double qx, double qy, double qz, double qw, std::size_t line_no) {
  Eigen::Quaterniond q(qw, qx, qy, qz);
  if (!(q.norm() > 1e-12)) parse_error("zero quaternion", line_no);
  return q.normalized().toRotationMatrix();
}

}  // namespace

LidarFrame read_kitti_bin(const fs::path& path, int frame_index, double timestamp) {
  std::ifstream is = open_in(path, std::ios::binary);
  is.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(is.tellg());
  is.seekg(0);
  if (size % 16 != 0) {
    throw Error(ErrorCode::MalformedFile, path.string() + ": size " + std::to_string(size) + " is not a multiple of 16");
  }
  std::vector<float> raw(size / 4);
  if (size > 0 && !is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(size))) {
    throw Error(ErrorCode::MalformedFile, path.string() + ": short read");
  }
  LidarFrame frame;
  frame.frame_index = frame_index;
  frame.timestamp = timestamp;
  frame.points.reserve(size / 16);
  for (std::size_t i = 0; i < raw.size(); i += 4) {
    frame.points.push_back({Vec3(raw[i], raw[i + 1], raw[i + 2]), static_cast<double>(raw[i + 3]) * 255.0});
  }
  return frame;
}

void write_kitti_bin(const fs::path& path, const LidarFrame& frame) {
  std::ofstream os = open_out(path, std::ios::binary);
  std::vector<float> raw;
  raw.reserve(frame.points.size() * 4);
  for (const auto& p : frame.points) {
    raw.push_back(static_cast<float>(p.position.x()));
    raw.push_back(static_cast<float>(p.position.y()));
    raw.push_back(static_cast<float>(p.position.z()));
    raw.push_back(static_cast<float>(p.intensity / 255.0));
  }
  os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size() * sizeof(float)));
}

std::vector<Pose> parse_trajectory(std::istream& is, TrajectoryFormat format) {
  std::vector<Pose> poses;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (skip_line(line)) continue;
    Pose p;
    if (format == TrajectoryFormat::Kitti) {
      const auto v = numbers(line, 12, line_no);
      for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) p.rotation(r, c) = v[static_cast<std::size_t>(4 * r + c)];
        p.translation(r) = v[static_cast<std::size_t>(4 * r + 3)];
      }
    } else {
      const auto v = numbers(line, 8, line_no);
      p.timestamp = v[0];
      p.translation = Vec3(v[1], v[2], v[3]);
      p.rotation = quaternion_rotation(v[4], v[5], v[6], v[7], line_no);
    }
    if (!p.rotation.allFinite() || !p.translation.allFinite()) parse_error("non-finite pose", line_no);
    poses.push_back(p);
  }
  return poses;
}

std::vector<Pose> read_trajectory(const fs::path& path, TrajectoryFormat format) {
  std::ifstream is = open_in(path);
  return parse_trajectory(is, format);
}

void write_trajectory(std::ostream& os, std::span<const Pose> poses, TrajectoryFormat format) {
  for (std::size_t i = 0; i < poses.size(); ++i) {
    const Pose& p = poses[i];
    if (format == TrajectoryFormat::Kitti) {
      for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) os << (r || c ? " " : "") << format_double(p.rotation(r, c));
        os << ' ' << format_double(p.translation(r));
      }
    } else {
      os << format_double(p.timestamp.value_or(static_cast<double>(i))) << ' ' << format_double(p.translation.x())
         << ' ' << format_double(p.translation.y()) << ' ' << format_double(p.translation.z()) << ' '
         << quaternion_text(p.rotation);
    }
    os << '\n';
  }
}

void write_trajectory(const fs::path& path, std::span<const Pose> poses, TrajectoryFormat format) {
  std::ofstream os = open_out(path);
  write_trajectory(os, poses, format);
}

std::vector<TrackRow> read_tracks(const fs::path& path) {
  std::ifstream is = open_in(path);
  std::vector<TrackRow> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (skip_line(line)) continue;
    const auto v = numbers(line, 5, line_no);
    TrackRow r;
    r.frame_index = static_cast<int>(v[0]);
    r.camera_id = static_cast<int>(v[1]);
    r.feature_id = static_cast<int>(v[2]);
    if (r.frame_index != v[0] || r.camera_id != v[1] || r.feature_id != v[2]) {
      parse_error("frame, camera and feature ids must be integers", line_no);
    }
    r.pixel = Vec2(v[3], v[4]);
    rows.push_back(r);
  }
  return rows;
}

void write_tracks(const fs::path& path, std::span<const VisualFrame> frames) {
  std::ofstream os = open_out(path);
  os << "# frame_index camera_id feature_id u v\n";
  for (const auto& f : frames) {
    for (const auto& o : f.observations) {
      os << f.frame_index << ' ' << f.camera_id << ' ' << o.feature_id << ' ' << format_double(o.pixel.x()) << ' '
         << format_double(o.pixel.y()) << '\n';
    }
  }
}

FramesMeta read_frames_meta(const fs::path& path) {
  std::ifstream is = open_in(path);
  FramesMeta meta;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (skip_line(line)) continue;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    std::string rest;
    std::getline(ls, rest);
    if (tag == "LIDAR") {
      const auto v = numbers(rest, 2, line_no);
      meta.lidar.push_back({static_cast<int>(v[0]), v[1]});
    } else if (tag == "CAMERA") {
      const auto v = numbers(rest, 9, line_no);
      CameraMeta c;
      c.frame_index = static_cast<int>(v[0]);
      c.camera_id = static_cast<int>(v[1]);
      c.timestamp = v[2];
      c.intrinsics = {v[3], v[4], v[5], v[6]};
      c.width = static_cast<int>(v[7]);
      c.height = static_cast<int>(v[8]);
      meta.cameras.push_back(c);
    } else if (tag == "EXTRINSIC") {
      const auto v = numbers(rest, 8, line_no);
      meta.extrinsics.lidar_from_camera[static_cast<int>(v[0])] =
          Pose(quaternion_rotation(v[4], v[5], v[6], v[7], line_no), Vec3(v[1], v[2], v[3]));
    } else {
      parse_error("unknown record '" + tag + "'", line_no);
    }
  }
  return meta;
}

void write_frames_meta(const fs::path& path, const FramesMeta& meta) {
  std::ofstream os = open_out(path);
  for (const auto& [id, p] : meta.extrinsics.lidar_from_camera) {
    os << "EXTRINSIC " << id << ' ' << format_double(p.translation.x()) << ' ' << format_double(p.translation.y())
       << ' ' << format_double(p.translation.z()) << ' ' << quaternion_text(p.rotation) << '\n';
  }
  for (const auto& l : meta.lidar) os << "LIDAR " << l.frame_index << ' ' << format_double(l.timestamp) << '\n';
  for (const auto& c : meta.cameras) {
    os << "CAMERA " << c.frame_index << ' ' << c.camera_id << ' ' << format_double(c.timestamp) << ' '
       << format_double(c.intrinsics.fu) << ' ' << format_double(c.intrinsics.fv) << ' '
       << format_double(c.intrinsics.cu) << ' ' << format_double(c.intrinsics.cv) << ' ' << c.width << ' '
       << c.height << '\n';
  }
}

RgbImage read_ppm(const fs::path& path) {
  std::ifstream is = open_in(path, std::ios::binary);
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  is >> magic >> w >> h >> maxval;
  if (magic != "P6" || w <= 0 || h <= 0 || maxval != 255) {
    throw Error(ErrorCode::MalformedFile, path.string() + ": not an 8-bit P6 image");
  }
  is.get();
  RgbImage img(w, h);
  if (!is.read(reinterpret_cast<char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()))) {
    throw Error(ErrorCode::MalformedFile, path.string() + ": truncated pixel data");
  }
  return img;
}

void write_ppm(const fs::path& path, const RgbImage& image) {
  std::ofstream os = open_out(path, std::ios::binary);
  os << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(image.data.data()), static_cast<std::streamsize>(image.data.size()));
}

void write_map_points(const fs::path& path, const MapPoints& points) {
  std::ofstream os = open_out(path);
  for (const auto& [id, mp] : points) {
    os << "POINT " << id << ' ' << format_double(mp.position.x()) << ' ' << format_double(mp.position.y()) << ' '
       << format_double(mp.position.z()) << ' ' << mp.track.size() << '\n';
  }
}

MapPoints read_map_points(const fs::path& path) {
  std::ifstream is = open_in(path);
  MapPoints out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (skip_line(line)) continue;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag != "POINT") parse_error("expected POINT", line_no);
    std::string rest;
    std::getline(ls, rest);
    const auto v = numbers(rest, 5, line_no);
    out[static_cast<int>(v[0])].position = Vec3(v[1], v[2], v[3]);
  }
  return out;
}

fs::path lidar_file(const fs::path& dir, int frame_index) {
  char name[32];
  std::snprintf(name, sizeof(name), "%06d.bin", frame_index);
  return dir / "lidar" / name;
}

fs::path image_file(const fs::path& dir, int frame_index) {
  char name[32];
  std::snprintf(name, sizeof(name), "%06d.ppm", frame_index);
  return dir / "images" / name;
}

DatasetPaths DatasetPaths::in_directory(const fs::path& dir) {
  DatasetPaths p;
  p.lidar_dir = dir / "lidar";
  p.frames_file = dir / "frames.txt";
  p.tracks_file = dir / "tracks.txt";
  if (fs::is_directory(dir / "images")) p.images_dir = dir / "images";
  if (fs::exists(dir / "gt_lidar.tum")) p.gt_trajectory = dir / "gt_lidar.tum";
  return p;
}

Dataset read_dataset(const fs::path& dir, bool load_images) {
  return read_dataset(DatasetPaths::in_directory(dir), load_images);
}

Dataset read_dataset(const DatasetPaths& paths, bool load_images) {
  for (const fs::path& required : {paths.frames_file, paths.tracks_file}) {
    if (!fs::exists(required)) throw Error(ErrorCode::ConfigError, "missing " + required.string());
  }
  if (!fs::is_directory(paths.lidar_dir)) {
    throw Error(ErrorCode::ConfigError, "missing LiDAR directory " + paths.lidar_dir.string());
  }
  const FramesMeta meta = read_frames_meta(paths.frames_file);
  Dataset ds;
  ds.extrinsics = meta.extrinsics;
  for (const auto& l : meta.lidar) {
    ds.lidar.push_back(read_kitti_bin(paths.lidar_dir / lidar_file({}, l.frame_index).filename(), l.frame_index,
                                      l.timestamp));
  }
  std::sort(ds.lidar.begin(), ds.lidar.end(),
            [](const LidarFrame& a, const LidarFrame& b) { return a.frame_index < b.frame_index; });

  std::map<int, std::size_t> slot;
  for (const auto& c : meta.cameras) {
    VisualFrame vf;
    vf.frame_index = c.frame_index;
    vf.camera_id = c.camera_id;
    vf.timestamp = c.timestamp;
    vf.intrinsics = c.intrinsics;
    if (!slot.emplace(c.frame_index, ds.visual.size()).second) {
      throw Error(ErrorCode::MalformedFile, "duplicate camera frame " + std::to_string(c.frame_index));
    }
    ds.visual.push_back(std::move(vf));
  }
  for (const auto& row : read_tracks(paths.tracks_file)) {
    const auto it = slot.find(row.frame_index);
    if (it == slot.end()) {
      throw Error(ErrorCode::MalformedFile, "track row references unknown frame " + std::to_string(row.frame_index));
    }
    ds.visual[it->second].observations.push_back({row.feature_id, row.pixel});
  }
  for (auto& vf : ds.visual) vf.sort_observations();
  std::sort(ds.visual.begin(), ds.visual.end(),
            [](const VisualFrame& a, const VisualFrame& b) { return a.frame_index < b.frame_index; });

  ds.images.resize(ds.visual.size());
  if (load_images && paths.images_dir) {
    for (std::size_t i = 0; i < ds.visual.size(); ++i) {
      const fs::path p = *paths.images_dir / image_file({}, ds.visual[i].frame_index).filename();
      if (fs::exists(p)) ds.images[i] = read_ppm(p);
    }
  }
  if (paths.gt_trajectory) ds.gt_lidar = read_trajectory(*paths.gt_trajectory, TrajectoryFormat::Tum);
  return ds;
}

void write_dataset(const fs::path& dir, const SimDataset& ds, const SceneSpec& scene) {
  fs::create_directories(dir / "lidar");
  FramesMeta meta;
  meta.extrinsics = ds.extrinsics;
  for (const auto& f : ds.lidar) {
    write_kitti_bin(lidar_file(dir, f.frame_index), f);
    meta.lidar.push_back({f.frame_index, f.timestamp});
  }
  std::map<int, const CameraSpec*> spec_of;
  for (const auto& c : scene.cameras) spec_of[c.id] = &c;
  for (const auto& vf : ds.visual) {
    const CameraSpec& c = *spec_of.at(vf.camera_id);
    meta.cameras.push_back({vf.frame_index, vf.camera_id, vf.timestamp, vf.intrinsics, c.width, c.height});
  }
  write_frames_meta(dir / "frames.txt", meta);
  write_tracks(dir / "tracks.txt", ds.visual);
  for (std::size_t i = 0; i < ds.images.size(); ++i) write_ppm(image_file(dir, ds.visual[i].frame_index), ds.images[i]);
  write_trajectory(dir / "gt_lidar.tum", ds.gt_lidar, TrajectoryFormat::Tum);
  write_trajectory(dir / "gt_lidar.txt", ds.gt_lidar, TrajectoryFormat::Kitti);
  write_trajectory(dir / "gt_camera.tum", ds.gt_camera, TrajectoryFormat::Tum);
  write_trajectory(dir / "odometry.tum", ds.odometry, TrajectoryFormat::Tum);
  std::ofstream os = open_out(dir / "scene.json");
  os << scene_to_json(scene);
}

}  // namespace voxsfm
