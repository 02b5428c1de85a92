#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "geosplat/gaussians.hpp"
#include "geosplat/geometry.hpp"
#include "geosplat/image.hpp"

namespace geosplat {

struct RenderOptions {
  double low_pass = 0.3;            // px^2 added to the 2-D covariance diagonal
  double cutoff_sigma = 3.0;        // bounding-box half extent in standard deviations
  double min_transmittance = 1e-4;  // blending stops once T drops below this
  double near = 1e-6;               // Gaussians at or behind this camera depth are culled
  int workers = 1;
};

struct RenderedView {
  Image color;  // H x W x 3
  Image depth;  // H x W, alpha-blended camera depth (not normalized by alpha)
  Image alpha;  // H x W accumulated opacity
};

/// Per-Gaussian projection state kept for the backward pass.
struct SplatIntermediate {
  std::uint32_t gaussian = 0;
  Vec3 world;
  Vec3 cam;
  Vec2 mean;
  Mat2 cov2d;  // J W Sigma W^T J^T plus the low-pass floor
  Mat2 conic;
  Mat3 cov3d;
  Mat3 cov_cam;
  Mat23 J;
  int x0 = 0, x1 = -1, y0 = 0, y1 = -1;  // inclusive pixel box, empty when x1 < x0

  double depth() const { return cam.z(); }
};

/// Projects one Gaussian; nullopt when it lies at or behind the near plane.
std::optional<SplatIntermediate> project_gaussian(const Mat3& cov3d, const Vec3& mu, const Camera& camera,
                                                  const RenderOptions& options = {});

struct Contribution {
  std::uint32_t splat;
  double alpha;          // alpha' at the pixel
  double transmittance;  // T before this splat
  double falloff;        // exp(-d^T conic d / 2), alpha' = opacity * falloff
};

struct RenderCache {
  int view = 0;
  int width = 0, height = 0;
  std::vector<SplatIntermediate> splats;
  std::vector<std::uint32_t> pixel_offsets;  // CSR into contributions, size W*H + 1
  std::vector<Contribution> contributions;
};

struct RenderOutput {
  RenderedView view;
  RenderCache cache;
};

RenderOutput rasterize(const HybridGaussianSet& set, const RayTable& rays, const std::vector<Camera>& cameras,
                       int view, const RenderOptions& options = {});

/// Upstream gradient of a scalar loss with respect to a rendered view.
/// Empty images are treated as zero.
struct ViewGradient {
  Image color;
  Image depth;
  Image alpha;
};

struct PoseGradient {
  Mat3 R = Mat3::Zero();
  Vec3 t = Vec3::Zero();
};

struct CommonGradient {
  Vec3 log_scale = Vec3::Zero();
  Vec4 rotation = Vec4::Zero();
  Vec3 color = Vec3::Zero();
  double opacity = 0.0;
};

struct SceneGradient {
  std::vector<Vec3> position;           // ordinary Gaussians
  std::vector<double> z;                // ray-based Gaussians
  std::vector<CommonGradient> common;   // flat order
  std::vector<PoseGradient> poses;      // per camera, w.r.t. (R, t)

  void reset(const HybridGaussianSet& set, std::size_t camera_count);
  void scale(double s);
};

/// d/dX of a camera-frame point x_c = R^T (X - t): adds the pose terms and returns dL/dX.
Vec3 backprop_camera_point(const CameraPose& pose, const Vec3& X, const Vec3& d_xc, PoseGradient& pose_grad);

/// Routes dL/d(world position) of a flat Gaussian to mu, or to z and the anchor camera.
void backprop_position(const HybridGaussianSet& set, const RayTable& rays, const std::vector<Camera>& cameras,
                       std::size_t flat, const Vec3& d_mu, SceneGradient& grad);

/// Accumulates exact reverse-mode gradients of the forward pass into `grad`.
void backward(const HybridGaussianSet& set, const RayTable& rays, const std::vector<Camera>& cameras,
              const RenderCache& cache, const ViewGradient& upstream, SceneGradient& grad,
              const RenderOptions& options = {});

}  // namespace geosplat
