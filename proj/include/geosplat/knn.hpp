#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "geosplat/geometry.hpp"

namespace geosplat {

struct Neighbor {
  std::uint32_t index;
  double distance2;

  // Ordering used everywhere neighbors are ranked: by distance, then by index.
  friend bool operator<(const Neighbor& a, const Neighbor& b) {
    return a.distance2 < b.distance2 || (a.distance2 == b.distance2 && a.index < b.index);
  }
};

/// Static k-d tree over 3-D points for exact k-nearest-neighbor queries.
class KdTree {
 public:
  explicit KdTree(std::span<const Vec3> points);

  /// The k nearest points to points[query] excluding the query itself,
  /// sorted by (distance, index).
  std::vector<Neighbor> nearest(std::uint32_t query, std::size_t k) const;

 private:
  struct Node {
    std::uint32_t begin, end;  // range in order_ for leaves
    int axis = -1;             // -1 for leaves
    double split = 0.0;
    std::int32_t left = -1, right = -1;
  };

  std::int32_t build(std::uint32_t begin, std::uint32_t end);
  void search(std::int32_t node, const Vec3& q, std::uint32_t self, std::size_t k,
              std::vector<Neighbor>& heap) const;

  std::vector<Vec3> points_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
};

}  // namespace geosplat
