#pragma once

// File formats: KITTI velodyne scans, KITTI/TUM trajectories, feature tracks,
// frame metadata, PPM images and the dataset directory layout.
//
// Dataset directory:
//   frames.txt      LIDAR idx t | CAMERA idx camera_id t fu fv cu cv width height |
//                   EXTRINSIC camera_id tx ty tz qx qy qz qw
//   tracks.txt      frame_index camera_id feature_id u v
//   lidar/NNNNNN.bin
//   images/NNNNNN.ppm   optional, by visual frame index
//   gt_lidar.tum        optional

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "voxsfm/fusion.hpp"
#include "voxsfm/geom.hpp"
#include "voxsfm/lidar_frame.hpp"
#include "voxsfm/visual.hpp"

namespace voxsfm {

// float32 (x, y, z, reflectance) records; reflectance in [0, 1] maps to
// intensity * 255. Throws MalformedFile when the size is not a multiple of 16.
LidarFrame read_kitti_bin(const std::filesystem::path& path, int frame_index = 0, double timestamp = 0.0);
void write_kitti_bin(const std::filesystem::path& path, const LidarFrame& frame);

enum class TrajectoryFormat { Kitti, Tum };

// KITTI: 12 row-major values of [R|t] per line. TUM: t tx ty tz qx qy qz qw.
// Blank lines and lines starting with '#' are skipped. Throws ParseError
// naming the line.
std::vector<Pose> read_trajectory(const std::filesystem::path& path, TrajectoryFormat format);
std::vector<Pose> parse_trajectory(std::istream& is, TrajectoryFormat format);
// TUM lines use the pose timestamp, else the index.
void write_trajectory(std::ostream& os, std::span<const Pose> poses, TrajectoryFormat format);
void write_trajectory(const std::filesystem::path& path, std::span<const Pose> poses, TrajectoryFormat format);

struct TrackRow {
  int frame_index = 0;
  int camera_id = 1;
  int feature_id = 0;
  Vec2 pixel = Vec2::Zero();
};

std::vector<TrackRow> read_tracks(const std::filesystem::path& path);
void write_tracks(const std::filesystem::path& path, std::span<const VisualFrame> frames);

struct LidarMeta {
  int frame_index = 0;
  double timestamp = 0.0;
};

struct CameraMeta {
  int frame_index = 0;
  int camera_id = 1;
  double timestamp = 0.0;
  PinholeIntrinsics intrinsics;
  int width = 0;
  int height = 0;
};

struct FramesMeta {
  std::vector<LidarMeta> lidar;
  std::vector<CameraMeta> cameras;
  Extrinsics extrinsics;
};

FramesMeta read_frames_meta(const std::filesystem::path& path);
void write_frames_meta(const std::filesystem::path& path, const FramesMeta& meta);

// Binary P6 with maxval 255.
RgbImage read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const RgbImage& image);

// POINT feature_id x y z track_length
void write_map_points(const std::filesystem::path& path, const MapPoints& points);
MapPoints read_map_points(const std::filesystem::path& path);

struct Dataset {
  std::vector<LidarFrame> lidar;    // ordered by frame index
  std::vector<VisualFrame> visual;  // ordered by frame index, unposed
  std::vector<std::optional<RgbImage>> images;  // per visual frame
  Extrinsics extrinsics;
  std::vector<Pose> gt_lidar;       // empty when absent
};

std::filesystem::path lidar_file(const std::filesystem::path& dir, int frame_index);
std::filesystem::path image_file(const std::filesystem::path& dir, int frame_index);

struct DatasetPaths {
  std::filesystem::path lidar_dir;    // holds NNNNNN.bin
  std::filesystem::path frames_file;
  std::filesystem::path tracks_file;
  std::optional<std::filesystem::path> images_dir;  // holds NNNNNN.ppm
  std::optional<std::filesystem::path> gt_trajectory;  // TUM

  // Standard layout under dir; images and ground truth only when present.
  static DatasetPaths in_directory(const std::filesystem::path& dir);
};

// Throws MalformedFile / ParseError for unreadable parts, ConfigError when a
// required file is missing.
Dataset read_dataset(const DatasetPaths& paths, bool load_images = true);
Dataset read_dataset(const std::filesystem::path& dir, bool load_images = true);

struct SimDataset;
struct SceneSpec;

// Writes the layout above plus gt_lidar.txt (KITTI), gt_camera.tum,
// odometry.tum and scene.json.
void write_dataset(const std::filesystem::path& dir, const SimDataset& ds, const SceneSpec& scene);

}  // namespace voxsfm
