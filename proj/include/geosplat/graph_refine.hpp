#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "geosplat/gaussians.hpp"
#include "geosplat/geometry.hpp"

namespace geosplat {

struct GaussianGraph {
  std::vector<Vec3> positions;                      // snapshot used to build the edges
  std::vector<std::vector<std::uint32_t>> neighbors;  // out-edges i -> j, nearest first

  std::size_t size() const { return positions.size(); }
  std::size_t edge_count() const;
};

/// Edges to the K nearest neighbors of each point kept when closer than `radius`.
/// Ties go to the smaller index. Throws TooFewPoints with fewer than two points.
GaussianGraph build_knn_graph(std::span<const Vec3> positions, std::size_t k, double radius);

/// Median distance from each point to its nearest neighbor.
double median_nearest_distance(std::span<const Vec3> positions);

// Per-Gaussian vertex feature and offset layout: z, log-scale(3), rotation(4), color(3), opacity.
inline constexpr int kAttributeDims = 12;
using AttributeVector = Eigen::Matrix<double, kAttributeDims, 1>;

/// Features in flat order. Ray-based Gaussians contribute z; ordinary ones the
/// distance from their mean to `reference` (typically the mean camera center).
/// Quaternions are flipped to w >= 0.
std::vector<AttributeVector> vertex_features(const HybridGaussianSet& set, const Vec3& reference);

struct OffsetBundle {
  std::vector<AttributeVector> delta;  // flat order, each component in [-1, 1]
};

struct OffsetScales {
  double z = 0.1;
  double scale = 0.1;
  double rotation = 0.05;
  double color = 0.01;
  double opacity = 1.0;

  AttributeVector expand() const;
};

/// x' = x + lambda * delta per attribute group, then the usual clamps. Ordinary
/// Gaussians ignore the z component. Gaussians with an all-zero offset are left untouched.
HybridGaussianSet apply_offsets(const HybridGaussianSet& set, const OffsetBundle& offsets,
                                const OffsetScales& scales = {});

/// One round of mean-aggregated message passing followed by a tanh head.
/// The head starts at zero so a fresh network emits zero offsets.
class RefinerNetwork {
 public:
  static constexpr int kHidden = 64;
  static constexpr int kMessageIn = 2 * kAttributeDims + 3;
  static constexpr int kUpdateIn = kAttributeDims + kHidden;

  explicit RefinerNetwork(std::uint64_t seed = 0);

  std::size_t parameter_count() const { return params_.size(); }
  std::vector<double>& parameters() { return params_; }
  const std::vector<double>& parameters() const { return params_; }

  struct Cache {
    std::vector<Eigen::VectorXd> edge_input, edge_hidden;              // per edge in adjacency order
    std::vector<Eigen::VectorXd> update_input, update_hidden, update_out;
    std::vector<AttributeVector> output;
  };

  OffsetBundle forward(const GaussianGraph& graph, const std::vector<AttributeVector>& features,
                       Cache* cache = nullptr) const;

  /// Accumulates d(loss)/d(params) given d(loss)/d(offsets) and a cache from forward.
  void backward(const GaussianGraph& graph, const Cache& cache, const std::vector<AttributeVector>& d_offsets,
                std::vector<double>& d_params) const;

 private:
  struct Layer {
    std::size_t weight, bias;  // offsets into params_
    int out, in;
  };
  Eigen::Map<const Eigen::MatrixXd> weight(const Layer& l) const;
  Eigen::Map<const Eigen::VectorXd> bias(const Layer& l) const;
  Eigen::VectorXd apply(const Layer& l, const Eigen::VectorXd& x) const;

  Layer msg1_, msg2_, upd1_, upd2_, head_;
  std::vector<double> params_;
};

}  // namespace geosplat
