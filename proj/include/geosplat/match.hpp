#pragma once

#include "geosplat/geometry.hpp"

namespace geosplat {

/// Cross-view pixel correspondence. Views are indices into the camera list.
struct MatchPair {
  int view_i = 0;
  int view_j = 1;
  Vec2 p_i = Vec2::Zero();
  Vec2 p_j = Vec2::Zero();
  double weight = 1.0;
};

struct PointCloud {
  std::vector<Vec3> positions;
  std::vector<Vec3> colors;

  std::size_t size() const { return positions.size(); }
};

}  // namespace geosplat
