#pragma once

#include "paramflow/core.hpp"
#include "paramflow/domain.hpp"

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

namespace paramflow {

/// Theta = [-half_width, half_width]^m.
struct ThetaBox {
  Index dim = 0;
  double half_width = 1.0;
};

/// Theta = union of closed L2 balls of `radius` around each anchor.
struct AnchorBalls {
  std::vector<DenseVector> anchors;
  double radius = 3.0;
};

using ThetaSpace = std::variant<ThetaBox, AnchorBalls>;

Index theta_dim(const ThetaSpace& space);
void validate(const ThetaSpace& space);
/// Diameter of the space (box diagonal, or anchor spread plus two radii).
double diameter(const ThetaSpace& space);

/// Points are stored column-wise (dim x n).
struct SampleBatch {
  DenseMatrix points;
  std::uint64_t seed = 0;
  std::string generator_tag;

  Index size() const { return points.cols(); }
  Index dim() const { return points.rows(); }
  DenseVector point(Index j) const { return points.col(j); }
};

/// i.i.d. uniform points strictly inside the box.
SampleBatch sample_omega(const Box& domain, Index n, std::uint64_t seed);

/// Box: uniform per coordinate. AnchorBalls: uniform anchor, then a point
/// uniform in the L2 ball (Gaussian direction, radius r U^{1/m}).
SampleBatch sample_theta(const ThetaSpace& space, Index n, std::uint64_t seed);

}  // namespace paramflow
