#pragma once

#include <optional>
#include <span>
#include <vector>

#include "geosplat/geometry.hpp"
#include "geosplat/image.hpp"

namespace geosplat {

/// Dense displacement from view_i to view_j: an H x W x 2 raster of (du, dv) in pixels.
struct FlowField {
  int view_i = 0;
  int view_j = 1;
  Image data;
};

/// p_i + flow(p_i), the flow sampled bilinearly. Throws OutOfBounds outside the raster.
Vec2 flow_warp(const Vec2& p_i, const FlowField& flow);

/// Orthogonal projection of a point onto an epipolar line. Throws DegenerateLine.
Vec2 perpendicular_foot(const Vec2& p_hat, const EpipolarLine& line);

/// Camera-frame depth in view i of the point seen at p_i in view i and at p_bar_j in
/// view j, from the cross-product form of the two-ray intersection.
/// Throws ParallelRays or NegativeDepth.
double flow_depth(const Vec2& p_i, const Vec2& p_bar_j, const Camera& cam_i, const Camera& cam_j);

/// Derivative of the distance |O_i P| with respect to the distance of p_bar_j
/// from the epipole, image points taken on camera j's z = 1 plane. Uses the
/// closed form when the epipole is finite and in front of camera j, otherwise
/// a central difference over `fd_step_px` pixels along the epipolar line.
/// Throws DegenerateGeometry.
double depth_sensitivity(const Vec2& p_i, const Vec2& p_bar_j, const Camera& cam_i, const Camera& cam_j,
                         double fd_step_px = 0.25);

/// Central-difference version of depth_sensitivity.
double depth_sensitivity_numeric(const Vec2& p_i, const Vec2& p_bar_j, const Camera& cam_i, const Camera& cam_j,
                                 double step_px = 0.25);

struct DepthCandidate {
  int view = 0;
  double depth = 0.0;
  double sensitivity = 0.0;
};

/// Candidate with the smallest sensitivity; ties go to the smaller view id.
std::optional<DepthCandidate> blend_depth(std::span<const DepthCandidate> candidates);

inline constexpr double kInvalidDepth = -1.0;

struct DepthEstimate {
  Image depth;                   // kInvalidDepth where no candidate survived
  std::vector<int> source_view;  // -1 where invalid
  Image sensitivity;
};

/// Flow-derived depth for every pixel of view i from the flows i -> j it is given.
DepthEstimate estimate_depth(int view_i, const std::vector<Camera>& cameras, std::span<const FlowField> flows,
                             int workers = 1);

struct DepthLoss {
  double value = 0.0;
  std::size_t pixels = 0;
};

/// Mean |target - rendered| over pixels with a valid target and alpha > min_alpha.
/// When `grad` is given, d(value)/d(rendered) * weight is added into it.
/// Throws NoValidPixels.
DepthLoss depth_loss(const Image& target, const Image& rendered, const Image& alpha, Image* grad = nullptr,
                     double weight = 1.0, double min_alpha = 0.5);

}  // namespace geosplat
