#include "voxsfm/fusion.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <tuple>

#include "voxsfm/error.hpp"
#include "voxsfm/format.hpp"
#include "voxsfm/parallel.hpp"

namespace voxsfm {

static_assert(std::endian::native == std::endian::little, "PLY and KITTI I/O assume a little-endian host");

std::optional<Vec3> RgbImage::sample_bilinear(const Vec2& px) const {
  if (width <= 0 || height <= 0) return std::nullopt;
  if (!(px.x() >= 0.0 && px.y() >= 0.0 && px.x() <= width - 1 && px.y() <= height - 1)) return std::nullopt;
  const int x0 = std::min(static_cast<int>(px.x()), std::max(0, width - 2));
  const int y0 = std::min(static_cast<int>(px.y()), std::max(0, height - 2));
  const int x1 = std::min(x0 + 1, width - 1);
  const int y1 = std::min(y0 + 1, height - 1);
  const double fx = px.x() - x0;
  const double fy = px.y() - y0;
  Vec3 out;
  for (int c = 0; c < 3; ++c) {
    const double top = (1.0 - fx) * at(x0, y0)[c] + fx * at(x1, y0)[c];
    const double bottom = (1.0 - fx) * at(x0, y1)[c] + fx * at(x1, y1)[c];
    out(c) = (1.0 - fy) * top + fy * bottom;
  }
  return out;
}

namespace {

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

const CameraView* time_closest(std::span<const CameraView> cameras, double t) {
  const CameraView* best = nullptr;
  for (const auto& c : cameras) {
    if (best == nullptr) {
      best = &c;
      continue;
    }
    const double d = std::abs(c.timestamp - t);
    const double bd = std::abs(best->timestamp - t);
    if (d < bd || (d == bd && std::tie(c.timestamp, c.frame_index) < std::tie(best->timestamp, best->frame_index))) {
      best = &c;
    }
  }
  return best;
}

}  // namespace

FusedCloud colorize_and_fuse(std::span<const LidarFrame> frames, std::span<const std::optional<Pose>> poses,
                             std::span<const CameraView> cameras, const FusionOptions& opts) {
  if (frames.size() != poses.size()) {
    throw Error(ErrorCode::LengthMismatch, "colorize_and_fuse: one pose per frame required");
  }
  std::vector<std::vector<FusedPoint>> per_frame(frames.size());
  std::vector<std::size_t> colored(frames.size(), 0);
  parallel_chunks(frames.size(), 1, [&](std::size_t begin, std::size_t end, std::size_t) {
    for (std::size_t f = begin; f < end; ++f) {
      if (!poses[f]) continue;
      const LidarFrame& frame = frames[f];
      const CameraView* cam = time_closest(cameras, frame.timestamp);
      const Mat3 rt = cam != nullptr ? Mat3(cam->pose.rotation.transpose()) : Mat3::Identity();
      auto& out = per_frame[f];
      out.reserve(frame.points.size());
      for (const auto& p : frame.points) {
        FusedPoint fp;
        fp.position = *poses[f] * p.position;
        fp.intensity = static_cast<float>(p.intensity);
        fp.frame_index = frame.frame_index;
        const std::uint8_t gray = to_byte(p.intensity);
        fp.rgb = {gray, gray, gray};
        if (cam != nullptr && cam->image != nullptr) {
          const Vec3 xc = rt * (fp.position - cam->pose.translation);
          if (xc.z() > kDepthFloor) {
            if (const auto c = cam->image->sample_bilinear(project_camera(cam->intrinsics, xc))) {
              fp.rgb = {to_byte((*c)(0)), to_byte((*c)(1)), to_byte((*c)(2))};
              ++colored[f];
            }
          }
        }
        out.push_back(fp);
      }
    }
  });

  FusedCloud cloud;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    if (!poses[f]) {
      cloud.skipped_frames.push_back(frames[f].frame_index);
      continue;
    }
    cloud.colored += colored[f];
    cloud.points.insert(cloud.points.end(), per_frame[f].begin(), per_frame[f].end());
  }

  if (opts.downsample_voxel > 0.0) {
    // Keeps the first point falling into each grid cell.
    std::set<std::tuple<long, long, long>> seen;
    std::vector<FusedPoint> kept;
    std::size_t kept_colored = 0;
    for (const auto& p : cloud.points) {
      const auto key = std::make_tuple(static_cast<long>(std::floor(p.position.x() / opts.downsample_voxel)),
                                       static_cast<long>(std::floor(p.position.y() / opts.downsample_voxel)),
                                       static_cast<long>(std::floor(p.position.z() / opts.downsample_voxel)));
      if (seen.insert(key).second) {
        kept.push_back(p);
        const std::uint8_t g = to_byte(p.intensity);
        if (p.rgb != std::array<std::uint8_t, 3>{g, g, g}) ++kept_colored;
      }
    }
    cloud.points = std::move(kept);
    cloud.colored = kept_colored;
  }
  return cloud;
}

void write_ply(const std::filesystem::path& path, const FusedCloud& cloud, bool binary) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::MalformedFile, "cannot open " + path.string() + " for writing");
  os << "ply\nformat " << (binary ? "binary_little_endian" : "ascii") << " 1.0\n"
     << "element vertex " << cloud.points.size() << '\n'
     << "property float x\nproperty float y\nproperty float z\n"
     << "property uchar red\nproperty uchar green\nproperty uchar blue\n"
     << "property float intensity\nend_header\n";
  for (const auto& p : cloud.points) {
    const float xyz[3] = {static_cast<float>(p.position.x()), static_cast<float>(p.position.y()),
                          static_cast<float>(p.position.z())};
    if (binary) {
      char buf[19];
      std::memcpy(buf, xyz, 12);
      std::memcpy(buf + 12, p.rgb.data(), 3);
      std::memcpy(buf + 15, &p.intensity, 4);
      os.write(buf, sizeof(buf));
    } else {
      os << format_double(xyz[0]) << ' ' << format_double(xyz[1]) << ' ' << format_double(xyz[2]) << ' '
         << static_cast<int>(p.rgb[0]) << ' ' << static_cast<int>(p.rgb[1]) << ' ' << static_cast<int>(p.rgb[2])
         << ' ' << format_double(p.intensity) << '\n';
    }
  }
  if (!os) throw Error(ErrorCode::MalformedFile, "write failed for " + path.string());
}

FusedCloud read_ply(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::MalformedFile, "cannot open " + path.string());
  std::string line;
  bool binary = false;
  std::size_t count = 0;
  std::size_t properties = 0;
  bool header_done = false;
  while (std::getline(is, line)) {
    if (line == "end_header") {
      header_done = true;
      break;
    }
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "format") {
      std::string fmt;
      ls >> fmt;
      binary = fmt == "binary_little_endian";
      if (!binary && fmt != "ascii") throw Error(ErrorCode::MalformedFile, "unsupported PLY format " + fmt);
    } else if (word == "element") {
      std::string name;
      ls >> name >> count;
    } else if (word == "property") {
      ++properties;
    }
  }
  if (!header_done || properties != 7) throw Error(ErrorCode::MalformedFile, "unexpected PLY header");
  FusedCloud cloud;
  cloud.points.resize(count);
  for (auto& p : cloud.points) {
    float xyz[3];
    if (binary) {
      char buf[19];
      if (!is.read(buf, sizeof(buf))) throw Error(ErrorCode::MalformedFile, "truncated PLY body");
      std::memcpy(xyz, buf, 12);
      std::memcpy(p.rgb.data(), buf + 12, 3);
      std::memcpy(&p.intensity, buf + 15, 4);
    } else {
      int r, g, b;
      if (!(is >> xyz[0] >> xyz[1] >> xyz[2] >> r >> g >> b >> p.intensity)) {
        throw Error(ErrorCode::MalformedFile, "truncated PLY body");
      }
      p.rgb = {static_cast<std::uint8_t>(r), static_cast<std::uint8_t>(g), static_cast<std::uint8_t>(b)};
    }
    p.position = Vec3(xyz[0], xyz[1], xyz[2]);
  }
  return cloud;
}

}  // namespace voxsfm
