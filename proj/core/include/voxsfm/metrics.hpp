#pragma once

// Trajectory accuracy: absolute and relative pose errors in MAE and RMSE.

#include <iosfwd>
#include <span>

#include "voxsfm/geom.hpp"

namespace voxsfm {

struct TrajectoryMetrics {
  double ape_mae = 0.0;
  double ape_rmse = 0.0;
  double rpe_mae = 0.0;
  double rpe_rmse = 0.0;
  std::size_t frames = 0;
  Similarity alignment;  // applied to the estimate before APE; scale stays 1
};

// est[i] pairs with gt[i]. With align, est is first moved by the rigid
// least-squares fit of its positions onto gt's. RPE compares the translation
// of relative motions rpe_delta frames apart. Throws LengthMismatch on
// differing lengths or timestamps and DegenerateInput on an empty input.
TrajectoryMetrics ape_rpe(std::span<const Pose> est, std::span<const Pose> gt, bool align = true,
                          int rpe_delta = 1);

// key=value lines.
void write_metrics(std::ostream& os, const TrajectoryMetrics& m);

}  // namespace voxsfm
