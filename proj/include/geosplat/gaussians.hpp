#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "geosplat/geometry.hpp"
#include "geosplat/image.hpp"
#include "geosplat/match.hpp"

namespace geosplat {

inline constexpr double kMaxOpacity = 1.0 - 1e-6;
inline constexpr double kMinScale = 1e-8;
inline constexpr double kMaxScale = 1e4;

/// Attributes shared by both Gaussian kinds. Scale is stored as log(scale).
struct GaussianCommon {
  Vec3 log_scale = Vec3::Zero();
  Vec4 rotation = Vec4(1.0, 0.0, 0.0, 0.0);
  Vec3 color = Vec3::Constant(0.5);
  double opacity = 0.1;
};

/// Renormalizes the quaternion and clamps opacity, scale and color into range.
void enforce_invariants(GaussianCommon& g);

/// Sigma = R S S^T R^T.
Mat3 covariance(const GaussianCommon& g);

struct OrdinaryGaussian {
  GaussianCommon common;
  Vec3 position = Vec3::Zero();
};

/// Ray-table entry: the pixel of a camera a ray-based Gaussian is bound to.
/// The ray itself follows the camera's current pose.
struct RayAnchor {
  int view = 0;
  Vec2 pixel = Vec2::Zero();
};

/// Gaussian constrained to position o + z d along its anchor ray.
struct RayGaussian {
  GaussianCommon common;
  std::uint32_t ray_ref = 0;
  double z = 1.0;
};

struct HybridGaussianSet {
  std::vector<OrdinaryGaussian> ordinary;
  std::vector<RayGaussian> ray_based;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
  std::vector<RayAnchor> anchors;
  double z_near = 1e-3;
  double z_far = 1e3;

  std::size_t size() const { return ordinary.size() + ray_based.size(); }

  // Flat indexing used by the renderer and the refiner: ordinary first.
  GaussianCommon& common(std::size_t flat) {
    return flat < ordinary.size() ? ordinary[flat].common : ray_based[flat - ordinary.size()].common;
  }
  const GaussianCommon& common(std::size_t flat) const {
    return flat < ordinary.size() ? ordinary[flat].common : ray_based[flat - ordinary.size()].common;
  }

  /// Throws InvalidArgument on broken pair or anchor references.
  void validate(std::size_t camera_count) const;

  /// Quaternion, opacity, scale and z-range invariants after a parameter step.
  void enforce_invariants();
};

using RayTable = std::vector<Ray>;

RayTable build_ray_table(const HybridGaussianSet& set, const std::vector<Camera>& cameras);

/// mu' = o + z d.
Vec3 ray_gaussian_position(const RayGaussian& g, const RayTable& rays);

/// World positions of every Gaussian in flat order.
std::vector<Vec3> gaussian_positions(const HybridGaussianSet& set, const RayTable& rays);

struct InitOptions {
  std::uint64_t seed = 42;
  double initial_opacity = 0.1;
  // An imported point within this many pixels of a match anchor is represented
  // by the match's ray-based pair instead of an ordinary Gaussian.
  double absorb_radius_px = 1.5;
  // Views whose centers define the z range; empty means every camera.
  std::vector<int> depth_views;
  double near_percentile = 0.01;
  double far_percentile = 0.99;
  double near_margin = 0.8;
  double far_margin = 1.25;
};

/// Builds the hybrid set: one ray-based pair per match with z drawn uniformly
/// in [z_near, z_far], ordinary Gaussians at the unabsorbed points.
/// `images` may be empty, in which case ray Gaussians take the nearest point's color.
HybridGaussianSet init_hybrid(const PointCloud& points, const std::vector<MatchPair>& matches,
                              const std::vector<Camera>& cameras, const std::vector<Image>& images,
                              const InitOptions& options = {});

/// Bilinear sample of channel c at a subpixel location, clamped at the border.
double sample_bilinear(const Image& image, const Vec2& p, int c = 0);

}  // namespace geosplat
