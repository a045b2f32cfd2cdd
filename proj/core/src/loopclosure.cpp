#include "voxsfm/loopclosure.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <unordered_map>

#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include "voxsfm/error.hpp"
#include "voxsfm/format.hpp"

namespace voxsfm {

DriftThresholds DriftThresholds::for_profile(DriftProfile profile) {
  DriftThresholds t;
  if (profile == DriftProfile::Handheld) {
    t.delta_alpha_deg = 10.0;
    t.delta_s = 3.0;
  }
  return t;
}

void DriftThresholds::validate() const {
  if (!(delta_s >= 1.0)) throw Error(ErrorCode::ConfigError, "drift speed ratio threshold must be >= 1");
  if (!(delta_alpha_deg > 0.0)) throw Error(ErrorCode::ConfigError, "drift angle threshold must be positive");
  if (!(visual_consensus_ratio >= 0.0 && visual_consensus_ratio <= 1.0)) {
    throw Error(ErrorCode::ConfigError, "visual consensus ratio must lie in [0, 1]");
  }
}

bool detect_visual_drift(std::size_t matches, std::size_t consensus, const DriftThresholds& thresholds) {
  if (matches == 0) throw Error(ErrorCode::NoMatches, "detect_visual_drift: frames share no features");
  return static_cast<double>(consensus) / static_cast<double>(matches) < thresholds.visual_consensus_ratio;
}

namespace {

bool reprojects(const VisualFrame& f, const Vec3& x, const Vec2& pixel, double tol) {
  const Vec3 xc = f.pose->rotation.transpose() * (x - f.pose->translation);
  if (xc.z() <= kDepthFloor) return false;
  return (project_camera(f.intrinsics, xc) - pixel).norm() <= tol;
}

}  // namespace

VisualDriftResult detect_visual_drift(const VisualFrame& a, const VisualFrame& b, const MapPoints& points,
                                      const DriftThresholds& thresholds, double pixel_tolerance) {
  VisualDriftResult out;
  for (const auto& oa : a.observations) {
    const Observation* ob = b.find(oa.feature_id);
    if (ob == nullptr) continue;
    ++out.matches;
    if (!a.pose || !b.pose) continue;
    const auto it = points.find(oa.feature_id);
    if (it == points.end()) continue;
    if (reprojects(a, it->second.position, oa.pixel, pixel_tolerance) &&
        reprojects(b, it->second.position, ob->pixel, pixel_tolerance)) {
      ++out.consensus;
    }
  }
  try {
    out.drift = detect_visual_drift(out.matches, out.consensus, thresholds);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::NoMatches) throw;
    out.drift = true;
  }
  return out;
}

namespace {

struct SpeedSample {
  double time = 0.0;
  double speed = 0.0;
};

SpeedSample pair_speed(const TimedPose& a, const TimedPose& b) {
  const double dt = b.timestamp - a.timestamp;
  if (!(dt > 0.0)) throw Error(ErrorCode::DegenerateInput, "LiDAR drift: timestamps must increase");
  return {0.5 * (a.timestamp + b.timestamp), (b.pose.translation - a.pose.translation).norm() / dt};
}

LidarDriftResult evaluate_drift(std::span<const SpeedSample> prior, const TimedPose& a, const TimedPose& b,
                                const DriftThresholds& thresholds) {
  // Least-squares line through the prior speeds, evaluated at the current midpoint.
  double mt = 0.0, ms = 0.0;
  for (const auto& s : prior) {
    mt += s.time;
    ms += s.speed;
  }
  mt /= static_cast<double>(prior.size());
  ms /= static_cast<double>(prior.size());
  double stt = 0.0, sts = 0.0;
  for (const auto& s : prior) {
    stt += (s.time - mt) * (s.time - mt);
    sts += (s.time - mt) * (s.speed - ms);
  }
  const SpeedSample current = pair_speed(a, b);
  const double slope = stt > 0.0 ? sts / stt : 0.0;

  LidarDriftResult out;
  out.expected_speed = std::max(0.0, ms + slope * (current.time - mt));
  out.actual_speed = current.speed;
  const double hi = std::max(out.expected_speed, out.actual_speed);
  const double lo = std::min(out.expected_speed, out.actual_speed);
  if (hi < 1e-9) {
    out.speed_ratio = 1.0;
  } else if (lo <= 0.0) {
    out.speed_ratio = std::numeric_limits<double>::infinity();
  } else {
    out.speed_ratio = hi / lo;
  }
  out.angle_deg = rad2deg(rotation_angle(a.pose.rotation.transpose() * b.pose.rotation));
  out.drift = out.angle_deg > thresholds.delta_alpha_deg || out.speed_ratio > thresholds.delta_s;
  return out;
}

}  // namespace

LidarDriftResult detect_lidar_drift(std::span<const TimedPose> window, const DriftThresholds& thresholds) {
  if (window.size() < 5) {
    throw Error(ErrorCode::InsufficientHistory,
                "detect_lidar_drift: " + std::to_string(window.size()) + " poses, need 5");
  }
  const auto w = window.last(5);
  const SpeedSample prior[3] = {pair_speed(w[0], w[1]), pair_speed(w[1], w[2]), pair_speed(w[2], w[3])};
  return evaluate_drift(prior, w[3], w[4], thresholds);
}

std::vector<DriftEvent> scan_lidar_drift(std::span<const TimedPose> trajectory, const DriftThresholds& thresholds) {
  std::vector<DriftEvent> events;
  std::vector<SpeedSample> history;
  for (std::size_t i = 0; i + 1 < trajectory.size(); ++i) {
    const TimedPose& a = trajectory[i];
    const TimedPose& b = trajectory[i + 1];
    if (history.size() >= 3) {
      const std::span<const SpeedSample> prior(history.data() + history.size() - 3, 3);
      if (evaluate_drift(prior, a, b, thresholds).drift) {
        events.push_back({DriftSource::Lidar, a.frame_index, b.frame_index});
        continue;
      }
    }
    history.push_back(pair_speed(a, b));
  }
  return events;
}

std::vector<DriftEvent> scan_visual_drift(std::span<const VisualFrame* const> frames, const MapPoints& points,
                                          const DriftThresholds& thresholds, double pixel_tolerance) {
  std::vector<const VisualFrame*> ordered(frames.begin(), frames.end());
  std::stable_sort(ordered.begin(), ordered.end(), [](const VisualFrame* x, const VisualFrame* y) {
    if (x->camera_id != y->camera_id) return x->camera_id < y->camera_id;
    return x->timestamp < y->timestamp;
  });
  std::vector<DriftEvent> events;
  for (std::size_t i = 0; i + 1 < ordered.size(); ++i) {
    const VisualFrame& a = *ordered[i];
    const VisualFrame& b = *ordered[i + 1];
    if (a.camera_id != b.camera_id) continue;
    if (detect_visual_drift(a, b, points, thresholds, pixel_tolerance).drift) {
      events.push_back({DriftSource::Visual, a.frame_index, b.frame_index});
    }
  }
  return events;
}

// ---------------------------------------------------------------------------

std::string_view to_string(EdgeKind kind) {
  switch (kind) {
    case EdgeKind::VisualTop5: return "visual-top5";
    case EdgeKind::LidarTop5: return "lidar-top5";
    case EdgeKind::Loop: return "loop";
    case EdgeKind::Rig: return "rig";
  }
  return "unknown";
}

long PoseGraph::find(NodeKind kind, int frame_index) const {
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].kind == kind && nodes[i].frame_index == frame_index) return static_cast<long>(i);
  }
  return -1;
}

bool PoseGraph::add_edge(const GraphEdge& edge) {
  if (edge.a == edge.b || edge.a >= nodes.size() || edge.b >= nodes.size()) return false;
  const auto lo = std::min(edge.a, edge.b);
  const auto hi = std::max(edge.a, edge.b);
  for (const auto& e : edges) {
    if (e.kind == edge.kind && std::min(e.a, e.b) == lo && std::max(e.a, e.b) == hi) return false;
  }
  edges.push_back(edge);
  return true;
}

bool PoseGraph::connected() const {
  if (nodes.empty()) return true;
  std::vector<std::size_t> parent(nodes.size());
  std::iota(parent.begin(), parent.end(), 0);
  auto root = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (const auto& e : edges) parent[root(e.a)] = root(e.b);
  const std::size_t r = root(0);
  for (std::size_t i = 1; i < nodes.size(); ++i) {
    if (root(i) != r) return false;
  }
  return true;
}

std::size_t PoseGraph::count(EdgeKind kind) const {
  return static_cast<std::size_t>(
      std::count_if(edges.begin(), edges.end(), [&](const GraphEdge& e) { return e.kind == kind; }));
}

void PoseGraph::dump(std::ostream& os) const {
  for (const auto& e : edges) {
    Eigen::Quaterniond q(e.relative.rotation);
    if (q.w() < 0.0) q.coeffs() = -q.coeffs();
    os << "EDGE " << to_string(e.kind) << ' ' << e.a << ' ' << e.b;
    for (int i = 0; i < 3; ++i) os << ' ' << format_double(e.relative.translation(i));
    os << ' ' << format_double(q.x()) << ' ' << format_double(q.y()) << ' ' << format_double(q.z()) << ' '
       << format_double(q.w()) << ' ' << format_double(e.weight) << '\n';
  }
}

namespace {

Pose relative_pose(const Pose& a, const Pose& b) {
  Pose r = a.inverse() * b;
  r.timestamp.reset();
  return r;
}

// Ids of the k best candidates, best first; ties go to the smaller id.
template <typename Score>
std::vector<std::size_t> top_k(std::size_t n, std::size_t self, int k, Score score, bool larger_is_better) {
  std::vector<std::pair<double, std::size_t>> cand;
  for (std::size_t j = 0; j < n; ++j) {
    if (j == self) continue;
    const double s = score(j);
    if (std::isnan(s)) continue;
    cand.emplace_back(larger_is_better ? -s : s, j);
  }
  std::sort(cand.begin(), cand.end());
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < cand.size() && static_cast<int>(i) < k; ++i) out.push_back(cand[i].second);
  return out;
}

const VisualFrame* time_closest(const std::vector<const VisualFrame*>& frames, double t) {
  const VisualFrame* best = nullptr;
  for (const VisualFrame* f : frames) {
    if (best == nullptr || std::abs(f->timestamp - t) < std::abs(best->timestamp - t)) best = f;
  }
  return best;
}

}  // namespace

PoseGraphBuild build_pose_graph(const PoseGraphInput& input, std::span<const DriftEvent> drifts,
                                const PoseGraphOptions& opts) {
  PoseGraphBuild out;
  PoseGraph& graph = out.graph;
  std::vector<const VisualFrame*> visual;
  for (const VisualFrame* f : input.visual) {
    if (f != nullptr && f->pose) visual.push_back(f);
  }
  for (const VisualFrame* f : visual) graph.nodes.push_back({NodeKind::Visual, f->frame_index, f->timestamp, *f->pose});
  const std::size_t lidar_base = graph.nodes.size();
  for (const auto& l : input.lidar) {
    if (l.frame == nullptr) throw Error(ErrorCode::DegenerateInput, "build_pose_graph: LiDAR node without frame");
    graph.nodes.push_back({NodeKind::Lidar, l.frame->frame_index, l.frame->timestamp, l.pose});
  }
  if (graph.nodes.size() < 2) {
    throw Error(ErrorCode::DegenerateInput, "build_pose_graph: need at least two registered frames");
  }

  // Visual pairs ranked by shared features.
  std::unordered_map<int, std::vector<std::size_t>> seen_by;
  for (std::size_t i = 0; i < visual.size(); ++i) {
    for (const auto& o : visual[i]->observations) seen_by[o.feature_id].push_back(i);
  }
  std::vector<std::unordered_map<std::size_t, int>> shared(visual.size());
  for (const auto& [id, list] : seen_by) {
    for (std::size_t x = 0; x < list.size(); ++x) {
      for (std::size_t y = 0; y < list.size(); ++y) {
        if (list[x] != list[y]) ++shared[list[x]][list[y]];
      }
    }
  }
  for (std::size_t i = 0; i < visual.size(); ++i) {
    const auto best = top_k(visual.size(), i, opts.top_k, [&](std::size_t j) {
      const auto it = shared[i].find(j);
      return it == shared[i].end() ? std::nan("") : static_cast<double>(it->second);
    }, true);
    for (std::size_t j : best) {
      graph.add_edge({EdgeKind::VisualTop5, i, j, relative_pose(graph.nodes[i].pose, graph.nodes[j].pose), 1.0});
    }
  }

  // LiDAR pairs ranked by distance between positions.
  const std::size_t nl = input.lidar.size();
  for (std::size_t i = 0; i < nl; ++i) {
    const auto best = top_k(nl, i, opts.top_k, [&](std::size_t j) {
      return (input.lidar[i].pose.translation - input.lidar[j].pose.translation).norm();
    }, false);
    for (std::size_t j : best) {
      const std::size_t a = lidar_base + i, b = lidar_base + j;
      graph.add_edge({EdgeKind::LidarTop5, a, b, relative_pose(graph.nodes[a].pose, graph.nodes[b].pose), 1.0});
    }
  }

  if (opts.rig_edges && nl > 0) {
    for (std::size_t i = 0; i < visual.size(); ++i) {
      std::size_t best = lidar_base;
      for (std::size_t j = lidar_base; j < graph.nodes.size(); ++j) {
        if (std::abs(graph.nodes[j].timestamp - visual[i]->timestamp) <
            std::abs(graph.nodes[best].timestamp - visual[i]->timestamp)) {
          best = j;
        }
      }
      if (std::abs(graph.nodes[best].timestamp - visual[i]->timestamp) > opts.rig_max_time_offset) continue;
      graph.add_edge({EdgeKind::Rig, i, best, relative_pose(graph.nodes[i].pose, graph.nodes[best].pose), 1.0});
    }
  }

  for (const DriftEvent& ev : drifts) {
    LoopEdgeAttempt attempt{ev, false, {}};
    const NodeKind kind = ev.source == DriftSource::Visual ? NodeKind::Visual : NodeKind::Lidar;
    const long na = graph.find(kind, ev.frame_a);
    const long nb = graph.find(kind, ev.frame_b);
    if (na < 0 || nb < 0 || na == nb) {
      attempt.reason = "frames not in graph";
      out.loops.push_back(std::move(attempt));
      continue;
    }
    const Pose& xa = graph.nodes[static_cast<std::size_t>(na)].pose;
    try {
      Pose xb;
      if (ev.source == DriftSource::Visual) {
        if (input.points == nullptr) throw Error(ErrorCode::DegenerateInput, "no map points");
        const VisualFrame* fa = visual[static_cast<std::size_t>(na)];
        const VisualFrame* fb = visual[static_cast<std::size_t>(nb)];
        MapPoints seen_in_a;
        for (const auto& o : fa->observations) {
          const auto it = input.points->find(o.feature_id);
          if (it != input.points->end()) seen_in_a.emplace(it->first, it->second);
        }
        xb = pnp_register(*fb, seen_in_a, opts.pnp).world_from_camera;
      } else {
        if (input.map == nullptr) throw Error(ErrorCode::DegenerateInput, "no voxel map");
        const LidarFrame& fb = *input.lidar[static_cast<std::size_t>(nb) - lidar_base].frame;
        const GraphNode& node_a = graph.nodes[static_cast<std::size_t>(na)];
        Pose seed = relative_pose(xa, graph.nodes[static_cast<std::size_t>(nb)].pose);
        const VisualFrame* ca = time_closest(visual, node_a.timestamp);
        const VisualFrame* cb = time_closest(visual, fb.timestamp);
        if (ca != nullptr && cb != nullptr && ca != cb && input.extrinsics != nullptr &&
            ca->camera_id == cb->camera_id) {
          const Pose& tlc = input.extrinsics->get(ca->camera_id);
          seed = tlc * relative_pose(*ca->pose, *cb->pose) * tlc.inverse();
        }
        xb = register_lidar_frame(fb, xa * seed, *input.map, opts.registration).pose;
      }
      attempt.added = graph.add_edge({EdgeKind::Loop, static_cast<std::size_t>(na), static_cast<std::size_t>(nb),
                                      relative_pose(xa, xb), opts.loop_weight});
      if (!attempt.added) attempt.reason = "duplicate edge";
    } catch (const Error& e) {
      attempt.reason = e.what();
    }
    out.loops.push_back(std::move(attempt));
  }

  if (!graph.connected()) throw Error(ErrorCode::DisconnectedGraph, "build_pose_graph: graph is not connected");
  return out;
}

namespace {

Vec6 edge_error(const GraphEdge& e, const Pose& xa, const Pose& xb) {
  return se3_log(e.relative.inverse() * xa.inverse() * xb);
}

double graph_cost(const PoseGraph& graph, const std::vector<Pose>& poses) {
  double c = 0.0;
  for (const auto& e : graph.edges) c += e.weight * edge_error(e, poses[e.a], poses[e.b]).squaredNorm();
  return c;
}

}  // namespace

double pose_graph_cost(const PoseGraph& graph) {
  std::vector<Pose> poses;
  for (const auto& n : graph.nodes) poses.push_back(n.pose);
  return graph_cost(graph, poses);
}

PoseGraphReport optimize_pose_graph(PoseGraph& graph, std::span<const std::size_t> anchors,
                                    const PoseGraphSolverOptions& opts) {
  if (anchors.empty()) throw Error(ErrorCode::Gauge, "optimize_pose_graph: no anchored node");
  const std::size_t n = graph.nodes.size();
  std::vector<long> col(n, 0);
  for (std::size_t a : anchors) {
    if (a >= n) throw Error(ErrorCode::DegenerateInput, "optimize_pose_graph: anchor out of range");
    col[a] = -1;
  }
  long dim = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (col[i] == 0) {
      col[i] = dim;
      dim += 6;
    }
  }

  std::vector<Pose> poses;
  for (const auto& node : graph.nodes) poses.push_back(node.pose);
  PoseGraphReport report;
  report.initial_cost = graph_cost(graph, poses);
  double cost = report.initial_cost;
  if (dim == 0 || graph.edges.empty()) {
    report.final_cost = cost;
    return report;
  }

  constexpr double kStep = 1e-6;
  double lambda = opts.damping_init;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt;
  bool ever_accepted = false;
  for (int it = 0; it < opts.max_iterations; ++it) {
    std::vector<Eigen::Triplet<double>> trip;
    Eigen::VectorXd g = Eigen::VectorXd::Zero(dim);
    for (const auto& e : graph.edges) {
      const Vec6 r = edge_error(e, poses[e.a], poses[e.b]);
      // Central differences under left perturbations of each endpoint.
      Mat6 ja, jb;
      for (int k = 0; k < 6; ++k) {
        Vec6 d = Vec6::Zero();
        d(k) = kStep;
        ja.col(k) = (edge_error(e, perturb_left(poses[e.a], d), poses[e.b]) -
                     edge_error(e, perturb_left(poses[e.a], -d), poses[e.b])) / (2.0 * kStep);
        jb.col(k) = (edge_error(e, poses[e.a], perturb_left(poses[e.b], d)) -
                     edge_error(e, poses[e.a], perturb_left(poses[e.b], -d))) / (2.0 * kStep);
      }
      const long ca = col[e.a], cb = col[e.b];
      const Mat6* jac[2] = {&ja, &jb};
      const long cols[2] = {ca, cb};
      for (int x = 0; x < 2; ++x) {
        if (cols[x] < 0) continue;
        g.segment<6>(cols[x]) += e.weight * jac[x]->transpose() * r;
        for (int y = 0; y < 2; ++y) {
          if (cols[y] < 0) continue;
          const Mat6 block = e.weight * jac[x]->transpose() * *jac[y];
          for (int p = 0; p < 6; ++p) {
            for (int q = 0; q < 6; ++q) trip.emplace_back(cols[x] + p, cols[y] + q, block(p, q));
          }
        }
      }
    }
    Eigen::SparseMatrix<double> h(dim, dim);
    h.setFromTriplets(trip.begin(), trip.end());
    for (long d = 0; d < dim; ++d) h.coeffRef(d, d) += 0.0;
    h.makeCompressed();
    ldlt.analyzePattern(h);

    bool accepted = false;
    bool converged = false;
    for (int retry = 0; retry <= opts.max_damping_retries; ++retry) {
      Eigen::SparseMatrix<double> a = h;
      for (long d = 0; d < dim; ++d) a.coeffRef(d, d) += lambda * std::max(h.coeff(d, d), 1e-9);
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
      std::vector<Pose> trial = poses;
      for (std::size_t i = 0; i < n; ++i) {
        if (col[i] >= 0) trial[i] = perturb_left(poses[i], delta.segment<6>(col[i]));
      }
      const double trial_cost = graph_cost(graph, trial);
      if (trial_cost < cost) {
        const double rel = (cost - trial_cost) / std::max(cost, 1e-300);
        poses = std::move(trial);
        cost = trial_cost;
        lambda = std::max(lambda / opts.damping_scale, 1e-12);
        accepted = true;
        ever_accepted = true;
        ++report.iterations;
        converged = rel < opts.relative_decrease_tol;
        break;
      }
      lambda *= opts.damping_scale;
    }
    if (!accepted) {
      if (!ever_accepted && g.norm() > 1e-8 * std::max(1.0, cost)) {
        throw Error(ErrorCode::SolverFailed, "optimize_pose_graph: no damping level lowers the cost");
      }
      break;
    }
    if (converged) break;
  }

  for (std::size_t i = 0; i < n; ++i) {
    const auto stamp = graph.nodes[i].pose.timestamp;
    graph.nodes[i].pose = poses[i];
    graph.nodes[i].pose.timestamp = stamp;
  }
  report.final_cost = cost;
  return report;
}

}  // namespace voxsfm
