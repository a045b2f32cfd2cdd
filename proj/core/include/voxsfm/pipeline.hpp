#pragma once

// End-to-end driver: visual and LiDAR map initialization, alternating frame
// registration with periodic bundle adjustment, drift-triggered pose-graph
// correction, a final bundle adjustment and colored fusion.
//
// Output directory:
//   lidar_poses.tum / lidar_poses.txt   registered LiDAR frames (TUM, KITTI)
//   camera_poses.tum                    registered visual frames
//   map_points.txt  cloud.ply  ba.log  metrics.txt  pipeline.log
//   graph.txt                           only after a pose-graph correction

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "voxsfm/config.hpp"
#include "voxsfm/loopclosure.hpp"
#include "voxsfm/metrics.hpp"

namespace voxsfm {

struct StageTiming {
  std::string name;
  double seconds = 0.0;
};

struct PipelineResult {
  std::vector<TimedPose> lidar;   // registered frames by index
  std::vector<TimedPose> camera;  // registered visual frames by index
  std::size_t lidar_frames = 0;
  std::size_t visual_frames = 0;
  std::size_t map_points = 0;
  std::vector<DriftEvent> drift_events;
  std::size_t loop_edges = 0;
  std::optional<TrajectoryMetrics> metrics;
  std::vector<StageTiming> stages;
};

// Throws ConfigError before touching the output directory when the config is
// invalid, and StageFailure naming the stage otherwise; artifacts produced up
// to the failure are still written.
PipelineResult run_pipeline(const PipelineConfig& config, std::ostream* log = nullptr);

// Pairs each estimated pose with the ground-truth pose of equal timestamp
// (within 1e-6 s); unmatched estimates are dropped.
std::optional<TrajectoryMetrics> evaluate_against(std::span<const TimedPose> est, std::span<const Pose> gt,
                                                  bool align, int rpe_delta);

}  // namespace voxsfm
