#pragma once

#include <vector>

#include "voxsfm/geom.hpp"

namespace voxsfm {

struct LidarPoint {
  Vec3 position = Vec3::Zero();  // sensor frame, meters
  double intensity = 0.0;        // [0, 255]
};

struct LidarFrame {
  int frame_index = 0;
  double timestamp = 0.0;
  std::vector<LidarPoint> points;

  // Throws DegenerateInput on an empty frame or out-of-range intensities.
  void validate() const;
};

}  // namespace voxsfm
