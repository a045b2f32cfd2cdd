#include "voxsfm/voxelmap.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "voxsfm/error.hpp"
#include "voxsfm/format.hpp"

namespace voxsfm {

VoxelKey voxel_key(const Vec3& x, double root_size) {
  if (!x.allFinite()) {
    throw Error(ErrorCode::NonFinite, "voxel_key: non-finite coordinate");
  }
  return VoxelKey{static_cast<std::int64_t>(std::floor(x.x() / root_size)),
                  static_cast<std::int64_t>(std::floor(x.y() / root_size)),
                  static_cast<std::int64_t>(std::floor(x.z() / root_size))};
}

GaussianStats stats_add(const GaussianStats& s, const Vec3& x) {
  GaussianStats out;
  const double n = static_cast<double>(s.count);
  out.count = s.count + 1;
  out.mean = (n * s.mean + x) / (n + 1.0);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      out.covariance(i, j) =
          (n * (s.covariance(i, j) + s.mean(i) * s.mean(j)) + x(i) * x(j)) / (n + 1.0) -
          out.mean(i) * out.mean(j);
    }
  }
  return out;
}

GaussianStats stats_remove(const GaussianStats& s, const Vec3& x) {
  if (s.count == 0) {
    throw Error(ErrorCode::EmptyVoxel, "stats_remove on empty statistics");
  }
  if (s.count == 1) {
    return GaussianStats{};
  }
  GaussianStats out;
  const double n = static_cast<double>(s.count);
  out.count = s.count - 1;
  out.mean = (n * s.mean - x) / (n - 1.0);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      out.covariance(i, j) =
          (n * (s.covariance(i, j) + s.mean(i) * s.mean(j)) - x(i) * x(j)) / (n - 1.0) -
          out.mean(i) * out.mean(j);
    }
  }
  return out;
}

GaussianStats batch_stats(std::span<const Vec3> points) {
  GaussianStats out;
  out.count = points.size();
  if (points.empty()) return out;
  for (const auto& p : points) out.mean += p;
  out.mean /= static_cast<double>(points.size());
  for (const auto& p : points) {
    const Vec3 d = p - out.mean;
    out.covariance += d * d.transpose();
  }
  out.covariance /= static_cast<double>(points.size());
  return out;
}

void VoxelMapConfig::validate() const {
  if (!(root_size > 0.0)) throw Error(ErrorCode::ConfigError, "voxel root_size must be positive");
  if (max_depth < 0) throw Error(ErrorCode::ConfigError, "voxel max_depth must be >= 0");
  if (min_points_for_fit < 3) throw Error(ErrorCode::ConfigError, "min_points_for_fit must be >= 3");
  if (!(sigma_d > 0.0 && sigma_d < sigma_s && sigma_s < 1.0)) {
    throw Error(ErrorCode::ConfigError, "planarity thresholds need 0 < sigma_d < sigma_s < 1");
  }
  if (!(eig_floor > 0.0)) throw Error(ErrorCode::ConfigError, "eig_floor must be positive");
}

bool is_planar(const EigenSystem3& es, double sigma_d, double sigma_s) {
  const double e1 = es.values(0);
  if (!(e1 > 0.0)) return false;
  return es.values(2) / e1 < sigma_d && es.values(1) / e1 > sigma_s;
}

EigenSystem3 VoxelNode::eigensystem() const {
  if (!eig_dirty_) return eig_;
  return eig3_sym(stats_.covariance);
}

int VoxelNode::octant_of(const Vec3& x) const {
  const double half = 0.5 * size_;
  int idx = 0;
  if (x.x() >= origin_.x() + half) idx |= 1;
  if (x.y() >= origin_.y() + half) idx |= 2;
  if (x.z() >= origin_.z() + half) idx |= 4;
  return idx;
}

VoxelMap::VoxelMap(VoxelMapConfig config) : config_(config) { config_.validate(); }

VoxelNode* VoxelMap::make_child(VoxelNode& parent, int octant, int creation_time) {
  const double half = 0.5 * parent.size_;
  const Vec3 origin = parent.origin_ + Vec3((octant & 1) ? half : 0.0, (octant & 2) ? half : 0.0,
                                            (octant & 4) ? half : 0.0);
  auto& slot = parent.children_[static_cast<std::size_t>(octant)];
  slot.reset(new VoxelNode(origin, half, parent.depth_ + 1, creation_time));
  return slot.get();
}

InsertOutcome VoxelMap::insert_point(const Vec3& x_world, double intensity, int frame_index) {
  const VoxelKey key = voxel_key(x_world, config_.root_size);
  auto it = roots_.find(key);
  if (it == roots_.end()) {
    const Vec3 origin(static_cast<double>(key.ix) * config_.root_size,
                      static_cast<double>(key.iy) * config_.root_size,
                      static_cast<double>(key.iz) * config_.root_size);
    it = roots_.emplace(key, std::unique_ptr<VoxelNode>(
                                 new VoxelNode(origin, config_.root_size, 0, frame_index)))
             .first;
  }

  // Locate the leaf first: a plane leaf rejects the point before any stats change.
  VoxelNode* node = it->second.get();
  std::vector<VoxelNode*> path{node};
  while (node->subdivided_) {
    const int octant = node->octant_of(x_world);
    VoxelNode* next = node->children_[static_cast<std::size_t>(octant)].get();
    if (next == nullptr) {
      next = make_child(*node, octant, frame_index);
    }
    node = next;
    path.push_back(node);
  }
  if (node->is_plane_) {
    return InsertOutcome::Discarded;
  }

  for (VoxelNode* n : path) {
    n->stats_ = stats_add(n->stats_, x_world);
    n->eig_dirty_ = true;
    ++n->ops_since_recompute_;
  }
  node->retained_.push_back(RetainedPoint{x_world, intensity, frame_index});
  maybe_recompute(*node);
  evaluate_leaf(*node);
  return InsertOutcome::Absorbed;
}

void VoxelMap::maybe_recompute(VoxelNode& node) {
  if (node.ops_since_recompute_ < config_.recompute_period) return;
  node.ops_since_recompute_ = 0;
  if (node.subdivided_ || node.is_plane_ || !node.retains_all()) return;
  std::vector<Vec3> pts;
  pts.reserve(node.retained_.size());
  for (const auto& p : node.retained_) pts.push_back(p.position);
  node.stats_ = batch_stats(pts);
  node.eig_dirty_ = true;
}

void VoxelMap::evaluate_leaf(VoxelNode& leaf) {
  if (leaf.stats_.count < config_.min_points_for_fit) return;
  leaf.eig_ = eig3_sym(leaf.stats_.covariance);
  leaf.eig_dirty_ = false;
  if (is_planar(leaf.eig_, config_.sigma_d, config_.sigma_s)) {
    leaf.is_plane_ = true;
    leaf.retained_.clear();
    leaf.retained_.shrink_to_fit();
    return;
  }
  if (leaf.depth_ < config_.max_depth && leaf.retains_all()) {
    subdivide(leaf);
  }
}

void VoxelMap::subdivide(VoxelNode& leaf) {
  std::array<std::vector<RetainedPoint>, 8> buckets;
  for (const auto& p : leaf.retained_) {
    buckets[static_cast<std::size_t>(leaf.octant_of(p.position))].push_back(p);
  }
  leaf.retained_.clear();
  leaf.retained_.shrink_to_fit();
  leaf.subdivided_ = true;

  for (int octant = 0; octant < 8; ++octant) {
    auto& bucket = buckets[static_cast<std::size_t>(octant)];
    if (bucket.empty()) continue;
    int created = bucket.front().frame_index;
    std::vector<Vec3> pts;
    pts.reserve(bucket.size());
    for (const auto& p : bucket) {
      created = std::min(created, p.frame_index);
      pts.push_back(p.position);
    }
    VoxelNode* child = make_child(leaf, octant, created);
    child->stats_ = batch_stats(pts);
    child->retained_ = std::move(bucket);
    evaluate_leaf(*child);
  }
}

void VoxelMap::remove_point(const Vec3& x_world) {
  const VoxelKey key = voxel_key(x_world, config_.root_size);
  auto it = roots_.find(key);
  if (it == roots_.end()) {
    throw Error(ErrorCode::MissingVoxel, "remove_point: no root cell holds the position");
  }
  std::vector<VoxelNode*> path{it->second.get()};
  while (path.back()->subdivided_) {
    VoxelNode* parent = path.back();
    VoxelNode* next = parent->children_[static_cast<std::size_t>(parent->octant_of(x_world))].get();
    if (next == nullptr) {
      throw Error(ErrorCode::MissingVoxel, "remove_point: octree path ends before a leaf");
    }
    path.push_back(next);
  }
  for (VoxelNode* n : path) {
    if (n->stats_.count == 0) {
      throw Error(ErrorCode::MissingVoxel, "remove_point: empty node on path");
    }
  }

  for (VoxelNode* n : path) {
    n->stats_ = stats_remove(n->stats_, x_world);
    n->eig_dirty_ = true;
    ++n->ops_since_recompute_;
  }

  VoxelNode& leaf = *path.back();
  if (!leaf.retained_.empty()) {
    auto match = std::find_if(leaf.retained_.begin(), leaf.retained_.end(),
                              [&](const RetainedPoint& p) { return p.position == x_world; });
    if (match == leaf.retained_.end()) {
      match = std::min_element(leaf.retained_.begin(), leaf.retained_.end(),
                               [&](const RetainedPoint& a, const RetainedPoint& b) {
                                 return (a.position - x_world).squaredNorm() <
                                        (b.position - x_world).squaredNorm();
                               });
      if ((match->position - x_world).norm() > 1e-9 * std::max(1.0, x_world.norm())) {
        match = leaf.retained_.end();
      }
    }
    if (match != leaf.retained_.end()) leaf.retained_.erase(match);
  }

  if (leaf.is_plane_ && leaf.stats_.count > 0) {
    bool keep = false;
    if (leaf.stats_.count >= config_.min_points_for_fit) {
      leaf.eig_ = eig3_sym(leaf.stats_.covariance);
      leaf.eig_dirty_ = false;
      keep = is_planar(leaf.eig_, config_.sigma_d, config_.sigma_s);
    }
    if (!keep) leaf.is_plane_ = false;
  }
  for (VoxelNode* n : path) maybe_recompute(*n);

  // Prune bottom-up.
  for (std::size_t i = path.size(); i-- > 1;) {
    if (path[i]->stats_.count != 0) break;
    VoxelNode* parent = path[i - 1];
    parent->children_[static_cast<std::size_t>(parent->octant_of(x_world))].reset();
  }
  if (path.front()->stats_.count == 0) {
    roots_.erase(it);
  }
}

VoxelQuery VoxelMap::query_voxel(const Vec3& x_world) const {
  if (!x_world.allFinite()) return {};
  const auto it = roots_.find(voxel_key(x_world, config_.root_size));
  if (it == roots_.end()) return {};
  const VoxelNode* node = it->second.get();
  const VoxelNode* mature = nullptr;
  const VoxelNode* deepest = node;
  while (node != nullptr) {
    deepest = node;
    if (node->stats_.count >= config_.min_points_for_fit) mature = node;
    if (!node->subdivided_) break;
    node = node->child(node->octant_of(x_world));
  }
  if (mature != nullptr) return {mature, true};
  return {deepest, false};
}

void VoxelMap::refresh_eigensystems() {
  std::vector<VoxelNode*> stack;
  for (auto& [key, root] : roots_) stack.push_back(root.get());
  while (!stack.empty()) {
    VoxelNode* n = stack.back();
    stack.pop_back();
    if (n->eig_dirty_) {
      n->eig_ = eig3_sym(n->stats_.covariance);
      n->eig_dirty_ = false;
    }
    for (auto& c : n->children_) {
      if (c) stack.push_back(c.get());
    }
  }
}

VoxelMapCounts VoxelMap::counts() const {
  VoxelMapCounts c;
  c.roots = roots_.size();
  visit_nodes([&](const VoxelKey&, const std::string&, const VoxelNode& n) {
    ++c.nodes;
    if (n.is_leaf()) {
      ++c.leaves;
      if (n.is_plane()) ++c.plane_leaves;
    }
  });
  return c;
}

void VoxelMap::visit_nodes(const NodeVisitor& visitor) const {
  std::vector<const std::pair<const VoxelKey, std::unique_ptr<VoxelNode>>*> ordered;
  ordered.reserve(roots_.size());
  for (const auto& entry : roots_) ordered.push_back(&entry);
  std::sort(ordered.begin(), ordered.end(), [](auto* a, auto* b) { return a->first < b->first; });

  struct Frame {
    const VoxelNode* node;
    std::string path;
  };
  for (const auto* entry : ordered) {
    std::vector<Frame> stack{{entry->second.get(), "-"}};
    while (!stack.empty()) {
      Frame f = std::move(stack.back());
      stack.pop_back();
      visitor(entry->first, f.path, *f.node);
      for (int octant = 7; octant >= 0; --octant) {
        if (const VoxelNode* c = f.node->child(octant)) {
          const std::string digit(1, static_cast<char>('0' + octant));
          stack.push_back({c, f.path == "-" ? digit : f.path + "/" + digit});
        }
      }
    }
  }
}

void VoxelMap::visit_leaves(const NodeVisitor& visitor) const {
  visit_nodes([&](const VoxelKey& key, const std::string& path, const VoxelNode& n) {
    if (n.is_leaf()) visitor(key, path, n);
  });
}

void VoxelMap::dump(std::ostream& os) const {
  visit_leaves([&](const VoxelKey& key, const std::string& path, const VoxelNode& n) {
    const auto& s = n.stats();
    os << "LEAF " << key.ix << ' ' << key.iy << ' ' << key.iz << ' ' << path << ' ' << s.count;
    for (int i = 0; i < 3; ++i) os << ' ' << format_double(s.mean(i));
    for (int i = 0; i < 3; ++i) {
      for (int j = i; j < 3; ++j) os << ' ' << format_double(s.covariance(i, j));
    }
    os << ' ' << (n.is_plane() ? 1 : 0) << ' ' << n.creation_time() << '\n';
  });
}

}  // namespace voxsfm
