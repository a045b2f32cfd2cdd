#pragma once

// Global LiDAR map: a hash grid of cubic root cells, each the root of an
// octree whose nodes carry Gaussian statistics of the points they contain.
// Leaves freeze into plane voxels once their covariance is planar.

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "voxsfm/geom.hpp"

namespace voxsfm {

struct VoxelKey {
  std::int64_t ix = 0;
  std::int64_t iy = 0;
  std::int64_t iz = 0;

  friend bool operator==(const VoxelKey&, const VoxelKey&) = default;
  friend auto operator<=>(const VoxelKey&, const VoxelKey&) = default;
};

struct VoxelKeyHash {
  std::size_t operator()(const VoxelKey& k) const noexcept {
    // Teschner et al. spatial hash primes.
    return static_cast<std::size_t>((k.ix * 73856093) ^ (k.iy * 19349669) ^ (k.iz * 83492791));
  }
};

// floor(x / root_size) per axis. Throws NonFinite.
VoxelKey voxel_key(const Vec3& x, double root_size);

// Population mean and covariance of a point multiset.
struct GaussianStats {
  std::size_t count = 0;
  Vec3 mean = Vec3::Zero();
  Mat3 covariance = Mat3::Zero();
};

// Closed-form single-point update of mean and covariance.
GaussianStats stats_add(const GaussianStats& s, const Vec3& x);
// Inverse of stats_add; count 1 -> empty stats. Throws EmptyVoxel on count 0.
GaussianStats stats_remove(const GaussianStats& s, const Vec3& x);
// Direct two-pass evaluation over a point set.
GaussianStats batch_stats(std::span<const Vec3> points);

struct VoxelMapConfig {
  double root_size = 3.0;
  int max_depth = 3;
  std::size_t min_points_for_fit = 10;
  double sigma_d = 0.03;
  double sigma_s = 0.5;
  double eig_floor = 1e-6;
  // Batch recomputation period for leaves that still retain all of their points.
  std::size_t recompute_period = 10000;

  void validate() const;
};

// e3/e1 < sigma_d and e2/e1 > sigma_s.
bool is_planar(const EigenSystem3& es, double sigma_d, double sigma_s);

struct RetainedPoint {
  Vec3 position = Vec3::Zero();
  double intensity = 0.0;
  int frame_index = 0;
};

class VoxelNode {
 public:
  const GaussianStats& stats() const { return stats_; }
  // Cached when fresh, otherwise computed on the fly without touching the cache.
  EigenSystem3 eigensystem() const;
  bool eigensystem_fresh() const { return !eig_dirty_; }
  bool is_plane() const { return is_plane_; }
  bool is_leaf() const { return !subdivided_; }
  int creation_time() const { return creation_time_; }
  int depth() const { return depth_; }
  const Vec3& origin() const { return origin_; }
  double size() const { return size_; }
  const VoxelNode* child(int octant) const { return children_[static_cast<std::size_t>(octant)].get(); }
  const std::vector<RetainedPoint>& retained_points() const { return retained_; }
  // Retained points cover every counted point (false after a plane leaf is declassified).
  bool retains_all() const { return retained_.size() == stats_.count; }

  int octant_of(const Vec3& x) const;

 private:
  friend class VoxelMap;

  VoxelNode(const Vec3& origin, double size, int depth, int creation_time)
      : origin_(origin), size_(size), depth_(depth), creation_time_(creation_time) {}

  GaussianStats stats_;
  mutable EigenSystem3 eig_;
  bool eig_dirty_ = true;
  bool is_plane_ = false;
  bool subdivided_ = false;
  Vec3 origin_;
  double size_;
  int depth_;
  int creation_time_;
  std::size_t ops_since_recompute_ = 0;
  std::vector<RetainedPoint> retained_;
  std::array<std::unique_ptr<VoxelNode>, 8> children_;
};

struct VoxelQuery {
  const VoxelNode* node = nullptr;
  bool mature = false;

  explicit operator bool() const { return node != nullptr; }
};

enum class InsertOutcome { Absorbed, Discarded };

struct VoxelMapCounts {
  std::size_t roots = 0;
  std::size_t nodes = 0;
  std::size_t leaves = 0;
  std::size_t plane_leaves = 0;
};

class VoxelMap {
 public:
  explicit VoxelMap(VoxelMapConfig config = {});

  VoxelMap(VoxelMap&&) noexcept = default;
  VoxelMap& operator=(VoxelMap&&) noexcept = default;
  VoxelMap(const VoxelMap&) = delete;
  VoxelMap& operator=(const VoxelMap&) = delete;

  const VoxelMapConfig& config() const { return config_; }

  // Points reaching a plane leaf are discarded and leave every node untouched.
  InsertOutcome insert_point(const Vec3& x_world, double intensity, int frame_index);
  // Removes a previously absorbed point along its octree path and prunes empty
  // nodes. Throws MissingVoxel when no node holds the position.
  void remove_point(const Vec3& x_world);

  // Deepest node with count >= min_points_for_fit, else the deepest existing
  // node flagged immature, else empty.
  VoxelQuery query_voxel(const Vec3& x_world) const;

  // Recomputes every stale eigensystem cache. Call before parallel read phases.
  void refresh_eigensystems();

  bool empty() const { return roots_.empty(); }
  void clear() { roots_.clear(); }
  VoxelMapCounts counts() const;

  using NodeVisitor = std::function<void(const VoxelKey&, const std::string& path, const VoxelNode&)>;
  // Depth-first over all nodes, roots ordered by key and children by octant.
  void visit_nodes(const NodeVisitor& visitor) const;
  void visit_leaves(const NodeVisitor& visitor) const;

  // One line per leaf:
  // LEAF ix iy iz path count mx my mz cxx cxy cxz cyy cyz czz is_plane creation_time
  void dump(std::ostream& os) const;

 private:
  void evaluate_leaf(VoxelNode& leaf);
  void subdivide(VoxelNode& leaf);
  VoxelNode* make_child(VoxelNode& parent, int octant, int creation_time);
  void maybe_recompute(VoxelNode& node);

  VoxelMapConfig config_;
  std::unordered_map<VoxelKey, std::unique_ptr<VoxelNode>, VoxelKeyHash> roots_;
};

}  // namespace voxsfm
