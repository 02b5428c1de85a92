#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "geosplat/gaussians.hpp"
#include "geosplat/geometry.hpp"
#include "geosplat/image.hpp"
#include "geosplat/match.hpp"
#include "geosplat/renderer.hpp"

namespace geosplat {

/// Projection of a world point from a source view into a target view.
Vec2 cross_projection(const Vec3& X, const Camera& source, const Camera& target);

/// P = R (depth K^-1 p~) + t with depth the camera-frame z. Throws NonPositiveDepth.
Vec3 backproject_depth(const Vec2& p, double depth, const Camera& camera);

struct MatchLoss {
  double value = 0.0;
  std::size_t terms = 0;    // directed terms averaged
  std::size_t skipped = 0;  // directed terms dropped
};

/// Mean over both directions of every ray-based pair of the pixel distance
/// between a Gaussian's projection and its partner's anchor pixel. Terms that
/// land behind the target camera contribute the target image diagonal and no
/// gradient. When `grad` is given, d(value)/d(params) * weight is accumulated.
/// Residuals at or below `residual_floor` pixels get the zero subgradient.
MatchLoss gaussian_position_loss(const HybridGaussianSet& set, const RayTable& rays,
                                 const std::vector<Camera>& cameras, SceneGradient* grad = nullptr,
                                 double weight = 1.0, double residual_floor = 0.0);

/// A rendered depth map available to the geometry loss.
struct DepthMap {
  int view = 0;
  const Image* depth = nullptr;
  const Image* alpha = nullptr;  // required when normalizing
};

struct GeometryLossOptions {
  bool normalize_by_alpha = false;  // sample D / alpha_acc instead of D
  double min_alpha = 1e-6;
  double residual_floor = 0.0;  // residuals at or below this get the zero subgradient
};

struct GeometryLossGradient {
  std::vector<ViewGradient> maps;   // aligned with the DepthMap list; depth / alpha channels
  std::vector<PoseGradient>* poses = nullptr;
};

/// Mean over directed terms (i -> j) whose source view i has a depth map of
/// |p_j - project(backproject(p_i, D_i(p_i)), j)|, D_i sampled bilinearly.
/// Terms with non-positive sampled depth are skipped; throws SkippedAllTerms
/// when nothing remains.
MatchLoss rendering_geometry_loss(std::span<const DepthMap> maps, const std::vector<MatchPair>& matches,
                                  const std::vector<Camera>& cameras, const GeometryLossOptions& options = {},
                                  GeometryLossGradient* grad = nullptr, double weight = 1.0);

}  // namespace geosplat
