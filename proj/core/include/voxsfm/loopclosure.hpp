#pragma once

// Drift detection over consecutive frames, pose-graph construction with loop
// edges and pose-graph optimization.

#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

#include "voxsfm/geom.hpp"
#include "voxsfm/lidar_frame.hpp"
#include "voxsfm/registration.hpp"
#include "voxsfm/visual.hpp"
#include "voxsfm/voxelmap.hpp"

namespace voxsfm {

enum class DriftProfile { Kitti, Handheld };

struct DriftThresholds {
  double visual_consensus_ratio = 0.1;
  double delta_alpha_deg = 3.0;
  double delta_s = 2.0;  // speed ratio, >= 1

  static DriftThresholds for_profile(DriftProfile profile);
  void validate() const;
};

// Visual drift from raw counts: consensus / matches < ratio. Throws NoMatches
// when matches is 0.
bool detect_visual_drift(std::size_t matches, std::size_t consensus, const DriftThresholds& thresholds);

struct VisualDriftResult {
  std::size_t matches = 0;    // feature ids observed in both frames
  std::size_t consensus = 0;  // shared map points reprojecting within tolerance in both
  bool drift = false;         // also set when there are no matches
};

VisualDriftResult detect_visual_drift(const VisualFrame& a, const VisualFrame& b, const MapPoints& points,
                                      const DriftThresholds& thresholds, double pixel_tolerance = 2.0);

struct TimedPose {
  int frame_index = 0;
  double timestamp = 0.0;
  Pose pose;
};

struct LidarDriftResult {
  double expected_speed = 0.0;
  double actual_speed = 0.0;
  double speed_ratio = 1.0;
  double angle_deg = 0.0;
  bool drift = false;
};

// Uses the last five poses: three prior consecutive pairs predict the speed of
// the current pair. Throws InsufficientHistory with fewer than five.
LidarDriftResult detect_lidar_drift(std::span<const TimedPose> window, const DriftThresholds& thresholds);

enum class DriftSource { Visual, Lidar };

struct DriftEvent {
  DriftSource source = DriftSource::Lidar;
  int frame_a = 0;  // frame indices, chronological
  int frame_b = 0;
};

// Slides the detector over a chronological LiDAR trajectory. Flagged pairs are
// left out of the speed history of later pairs.
std::vector<DriftEvent> scan_lidar_drift(std::span<const TimedPose> trajectory, const DriftThresholds& thresholds);

// Consecutive registered frames of the same camera, in time order.
std::vector<DriftEvent> scan_visual_drift(std::span<const VisualFrame* const> frames, const MapPoints& points,
                                          const DriftThresholds& thresholds, double pixel_tolerance = 2.0);

// ---------------------------------------------------------------------------
// Pose graph

enum class NodeKind { Lidar, Visual };
enum class EdgeKind { VisualTop5, LidarTop5, Loop, Rig };

std::string_view to_string(EdgeKind kind);

struct GraphNode {
  NodeKind kind = NodeKind::Lidar;
  int frame_index = 0;
  double timestamp = 0.0;
  Pose pose;
};

struct GraphEdge {
  EdgeKind kind = EdgeKind::VisualTop5;
  std::size_t a = 0;
  std::size_t b = 0;
  Pose relative;        // measured X_a^-1 X_b
  double weight = 1.0;  // information = weight * I_6
};

struct PoseGraph {
  std::vector<GraphNode> nodes;
  std::vector<GraphEdge> edges;

  // Node id for a frame, or -1.
  long find(NodeKind kind, int frame_index) const;
  // Rejects self-loops and duplicates (same unordered pair and kind).
  bool add_edge(const GraphEdge& edge);
  bool connected() const;
  std::size_t count(EdgeKind kind) const;
  // EDGE kind a b tx ty tz qx qy qz qw w
  void dump(std::ostream& os) const;
};

struct LidarNodeInput {
  const LidarFrame* frame = nullptr;
  Pose pose;
};

struct PoseGraphInput {
  std::vector<const VisualFrame*> visual;  // registered frames
  std::vector<LidarNodeInput> lidar;
  const MapPoints* points = nullptr;
  const Extrinsics* extrinsics = nullptr;
  const VoxelMap* map = nullptr;
};

struct PoseGraphOptions {
  int top_k = 5;
  double loop_weight = 10.0;
  // Links each visual frame to its time-closest LiDAR frame so that the two
  // subgraphs form one connected graph.
  bool rig_edges = true;
  double rig_max_time_offset = 0.5;
  PnpOptions pnp;
  RegistrationOptions registration;
};

struct LoopEdgeAttempt {
  DriftEvent event;
  bool added = false;
  std::string reason;  // failure reason when not added
};

struct PoseGraphBuild {
  PoseGraph graph;
  std::vector<LoopEdgeAttempt> loops;
};

// Top-k matched visual pairs, top-k nearest LiDAR pairs, optional rig edges
// and one verified loop edge per drift event. Throws DegenerateInput with
// fewer than two frames and DisconnectedGraph.
PoseGraphBuild build_pose_graph(const PoseGraphInput& input, std::span<const DriftEvent> drifts,
                                const PoseGraphOptions& opts = {});

struct PoseGraphReport {
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations = 0;
};

struct PoseGraphSolverOptions {
  int max_iterations = 100;
  double relative_decrease_tol = 1e-12;
  double damping_init = 1e-4;
  double damping_scale = 10.0;
  int max_damping_retries = 12;
};

// Sum over edges of weight * |log(Z^-1 X_a^-1 X_b)|^2.
double pose_graph_cost(const PoseGraph& graph);

// Damped Gauss-Newton on SE(3) with the anchored nodes held fixed. Throws Gauge
// without anchors and SolverFailed when no step lowers a non-stationary cost.
PoseGraphReport optimize_pose_graph(PoseGraph& graph, std::span<const std::size_t> anchors,
                                    const PoseGraphSolverOptions& opts = {});

}  // namespace voxsfm
