#pragma once

// Dense colored point cloud from posed LiDAR frames and camera images.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "voxsfm/geom.hpp"
#include "voxsfm/lidar_frame.hpp"

namespace voxsfm {

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;  // row-major RGB

  RgbImage() = default;
  RgbImage(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, 0) {}

  std::uint8_t* at(int x, int y) { return &data[(static_cast<std::size_t>(y) * width + x) * 3]; }
  const std::uint8_t* at(int x, int y) const { return &data[(static_cast<std::size_t>(y) * width + x) * 3]; }

  // Pixel centers sit on integer coordinates. Empty outside [0, w-1] x [0, h-1].
  std::optional<Vec3> sample_bilinear(const Vec2& px) const;
};

struct CameraView {
  int frame_index = 0;
  double timestamp = 0.0;
  PinholeIntrinsics intrinsics;
  Pose pose;  // world_from_camera
  const RgbImage* image = nullptr;
};

struct FusedPoint {
  Vec3 position = Vec3::Zero();
  std::array<std::uint8_t, 3> rgb{0, 0, 0};
  float intensity = 0.0f;
  int frame_index = 0;
};

struct FusedCloud {
  std::vector<FusedPoint> points;
  std::vector<int> skipped_frames;  // frames without a pose
  std::size_t colored = 0;          // points that took a camera color
};

struct FusionOptions {
  double downsample_voxel = 0.0;  // 0 keeps every point
};

// poses[i] belongs to frames[i]. Each point takes the bilinear color of the
// time-closest camera (ties to the earlier frame) when it projects inside the
// image in front of the camera, else a gray level equal to its intensity.
FusedCloud colorize_and_fuse(std::span<const LidarFrame> frames, std::span<const std::optional<Pose>> poses,
                             std::span<const CameraView> cameras, const FusionOptions& opts = {});

// Little-endian binary PLY (float32 xyz, uint8 rgb, float32 intensity) or ASCII.
void write_ply(const std::filesystem::path& path, const FusedCloud& cloud, bool binary = true);
FusedCloud read_ply(const std::filesystem::path& path);

}  // namespace voxsfm
