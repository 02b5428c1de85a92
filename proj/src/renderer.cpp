#include "geosplat/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

#include "geosplat/error.hpp"

namespace geosplat {

namespace {

constexpr int kFeatures = 5;  // r, g, b, depth, 1

template <typename Fn>
void for_row_chunks(int workers, int height, Fn&& fn) {
  workers = std::clamp(workers, 1, std::max(height, 1));
  if (workers == 1) {
    fn(0, 0, height);
    return;
  }
  std::vector<std::thread> threads;
  threads.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    const int y0 = height * w / workers;
    const int y1 = height * (w + 1) / workers;
    threads.emplace_back([&fn, w, y0, y1] { fn(w, y0, y1); });
  }
  for (auto& t : threads) t.join();
}

// The fields the per-pixel loops touch, packed per sorted splat.
struct HotSplat {
  double mx, my;
  double ca, cb, cc;  // conic
  double opacity;
  double f[kFeatures];
};

std::vector<HotSplat> pack_splats(const HybridGaussianSet& set, const std::vector<SplatIntermediate>& splats) {
  std::vector<HotSplat> hot(splats.size());
  for (std::size_t i = 0; i < splats.size(); ++i) {
    const SplatIntermediate& s = splats[i];
    const GaussianCommon& g = set.common(s.gaussian);
    hot[i] = HotSplat{s.mean.x(), s.mean.y(), s.conic(0, 0), s.conic(0, 1), s.conic(1, 1), g.opacity,
                      {g.color[0], g.color[1], g.color[2], s.depth(), 1.0}};
  }
  return hot;
}

inline double falloff(const HotSplat& h, double dx, double dy) {
  return std::exp(-0.5 * (h.ca * dx * dx + 2.0 * h.cb * dx * dy + h.cc * dy * dy));
}

}  // namespace

std::optional<SplatIntermediate> project_gaussian(const Mat3& cov3d, const Vec3& mu, const Camera& camera,
                                                  const RenderOptions& options) {
  const CameraIntrinsics& K = camera.intrinsics;
  SplatIntermediate s;
  s.world = mu;
  s.cam = camera.pose.to_camera(mu);
  if (!(s.cam.z() > options.near)) return std::nullopt;

  const Mat3 W = camera.pose.R.transpose();
  s.cov3d = cov3d;
  s.cov_cam = W * cov3d * W.transpose();
  s.J = projection_jacobian(s.cam, K);
  s.cov2d = s.J * s.cov_cam * s.J.transpose();
  s.cov2d(0, 0) += options.low_pass;
  s.cov2d(1, 1) += options.low_pass;
  s.cov2d(0, 1) = s.cov2d(1, 0) = 0.5 * (s.cov2d(0, 1) + s.cov2d(1, 0));
  s.conic = s.cov2d.inverse();
  s.mean = project_camera_point(s.cam, K);

  const double half_trace = 0.5 * (s.cov2d(0, 0) + s.cov2d(1, 1));
  const double det = s.cov2d.determinant();
  const double lambda_max = half_trace + std::sqrt(std::max(half_trace * half_trace - det, 0.0));
  const double radius = options.cutoff_sigma * std::sqrt(lambda_max);
  if (!std::isfinite(radius) || !s.mean.allFinite()) return s;  // empty box

  const double fx0 = std::ceil(s.mean.x() - radius), fx1 = std::floor(s.mean.x() + radius);
  const double fy0 = std::ceil(s.mean.y() - radius), fy1 = std::floor(s.mean.y() + radius);
  if (fx1 < 0.0 || fy1 < 0.0 || fx0 > K.width - 1 || fy0 > K.height - 1) return s;
  s.x0 = static_cast<int>(std::max(fx0, 0.0));
  s.x1 = static_cast<int>(std::min(fx1, static_cast<double>(K.width - 1)));
  s.y0 = static_cast<int>(std::max(fy0, 0.0));
  s.y1 = static_cast<int>(std::min(fy1, static_cast<double>(K.height - 1)));
  return s;
}

RenderOutput rasterize(const HybridGaussianSet& set, const RayTable& rays, const std::vector<Camera>& cameras,
                       int view, const RenderOptions& options) {
  const Camera& camera = cameras.at(static_cast<std::size_t>(view));
  const int W = camera.intrinsics.width, H = camera.intrinsics.height;

  RenderOutput out;
  RenderCache& cache = out.cache;
  cache.view = view;
  cache.width = W;
  cache.height = H;

  const std::vector<Vec3> positions = gaussian_positions(set, rays);
  for (std::size_t g = 0; g < set.size(); ++g) {
    auto s = project_gaussian(covariance(set.common(g)), positions[g], camera, options);
    if (!s) continue;
    s->gaussian = static_cast<std::uint32_t>(g);
    cache.splats.push_back(*s);
  }
  // front to back, flat index breaks ties
  std::sort(cache.splats.begin(), cache.splats.end(), [](const auto& a, const auto& b) {
    return a.depth() < b.depth() || (a.depth() == b.depth() && a.gaussian < b.gaussian);
  });

  const std::size_t npix = static_cast<std::size_t>(W) * H;
  std::vector<std::uint32_t> list_offsets(npix + 1, 0);
  for (const auto& s : cache.splats) {
    for (int y = s.y0; y <= s.y1; ++y)
      for (int x = s.x0; x <= s.x1; ++x) ++list_offsets[static_cast<std::size_t>(y) * W + x + 1];
  }
  std::partial_sum(list_offsets.begin(), list_offsets.end(), list_offsets.begin());
  std::vector<std::uint32_t> lists(list_offsets.back());
  {
    std::vector<std::uint32_t> cursor(list_offsets.begin(), list_offsets.end() - 1);
    for (std::uint32_t si = 0; si < cache.splats.size(); ++si) {
      const auto& s = cache.splats[si];
      for (int y = s.y0; y <= s.y1; ++y)
        for (int x = s.x0; x <= s.x1; ++x) lists[cursor[static_cast<std::size_t>(y) * W + x]++] = si;
    }
  }

  out.view.color = Image(W, H, 3);
  out.view.depth = Image(W, H, 1);
  out.view.alpha = Image(W, H, 1);

  const int workers = std::clamp(options.workers, 1, std::max(H, 1));
  std::vector<std::vector<Contribution>> chunk_contribs(static_cast<std::size_t>(workers));
  std::vector<std::uint32_t> counts(npix, 0);
  const std::vector<HotSplat> hot = pack_splats(set, cache.splats);

  for_row_chunks(workers, H, [&](int w, int y0, int y1) {
    auto& contribs = chunk_contribs[static_cast<std::size_t>(w)];
    contribs.reserve(list_offsets[static_cast<std::size_t>(y1) * W] - list_offsets[static_cast<std::size_t>(y0) * W]);
    for (int y = y0; y < y1; ++y) {
      for (int x = 0; x < W; ++x) {
        const std::size_t pix = static_cast<std::size_t>(y) * W + x;
        double T = 1.0;
        double acc[kFeatures] = {0, 0, 0, 0, 0};
        std::uint32_t n = 0;
        for (std::uint32_t li = list_offsets[pix]; li < list_offsets[pix + 1]; ++li) {
          const HotSplat& h = hot[lists[li]];
          const double G = falloff(h, x - h.mx, y - h.my);
          const double a = h.opacity * G;
          const double wgt = a * T;
          acc[0] += h.f[0] * wgt;
          acc[1] += h.f[1] * wgt;
          acc[2] += h.f[2] * wgt;
          acc[3] += h.f[3] * wgt;
          contribs.push_back(Contribution{lists[li], a, T, G});
          ++n;
          T *= 1.0 - a;
          if (T < options.min_transmittance) break;
        }
        counts[pix] = n;
        out.view.color(x, y, 0) = acc[0];
        out.view.color(x, y, 1) = acc[1];
        out.view.color(x, y, 2) = acc[2];
        out.view.depth(x, y) = acc[3];
        out.view.alpha(x, y) = 1.0 - T;
      }
    }
  });

  cache.pixel_offsets.assign(npix + 1, 0);
  for (std::size_t pix = 0; pix < npix; ++pix) cache.pixel_offsets[pix + 1] = cache.pixel_offsets[pix] + counts[pix];
  cache.contributions.reserve(cache.pixel_offsets.back());
  for (auto& c : chunk_contribs) cache.contributions.insert(cache.contributions.end(), c.begin(), c.end());
  return out;
}

void SceneGradient::reset(const HybridGaussianSet& set, std::size_t camera_count) {
  position.assign(set.ordinary.size(), Vec3::Zero());
  z.assign(set.ray_based.size(), 0.0);
  common.assign(set.size(), CommonGradient{});
  poses.assign(camera_count, PoseGradient{});
}

void SceneGradient::scale(double s) {
  for (auto& v : position) v *= s;
  for (auto& v : z) v *= s;
  for (auto& c : common) {
    c.log_scale *= s;
    c.rotation *= s;
    c.color *= s;
    c.opacity *= s;
  }
  for (auto& p : poses) {
    p.R *= s;
    p.t *= s;
  }
}

Vec3 backprop_camera_point(const CameraPose& pose, const Vec3& X, const Vec3& d_xc, PoseGradient& pose_grad) {
  pose_grad.R += (X - pose.t) * d_xc.transpose();
  const Vec3 d_X = pose.R * d_xc;
  pose_grad.t -= d_X;
  return d_X;
}

void backprop_position(const HybridGaussianSet& set, const RayTable& rays, const std::vector<Camera>& cameras,
                       std::size_t flat, const Vec3& d_mu, SceneGradient& grad) {
  if (flat < set.ordinary.size()) {
    grad.position[flat] += d_mu;
    return;
  }
  const std::size_t r = flat - set.ordinary.size();
  const RayGaussian& g = set.ray_based[r];
  const RayAnchor& anchor = set.anchors[g.ray_ref];
  const Ray& ray = rays[g.ray_ref];
  grad.z[r] += ray.direction.dot(d_mu);
  // mu = t_s + z R_s v, v the unit camera-frame pixel direction
  const Camera& src = cameras[static_cast<std::size_t>(anchor.view)];
  const Vec3 v = pixel_direction(anchor.pixel, src.intrinsics);
  PoseGradient& pg = grad.poses[static_cast<std::size_t>(anchor.view)];
  pg.R += g.z * d_mu * v.transpose();
  pg.t += d_mu;
}

void backward(const HybridGaussianSet& set, const RayTable& rays, const std::vector<Camera>& cameras,
              const RenderCache& cache, const ViewGradient& upstream, SceneGradient& grad,
              const RenderOptions& options) {
  const Camera& camera = cameras.at(static_cast<std::size_t>(cache.view));
  const int W = cache.width, H = cache.height;
  const std::size_t nsplat = cache.splats.size();

  struct SplatAccum {
    Vec2 mean = Vec2::Zero();
    Mat2 conic = Mat2::Zero();
    Vec3 color = Vec3::Zero();
    double depth = 0.0;
    double opacity = 0.0;
  };

  const int workers = std::clamp(options.workers, 1, std::max(H, 1));
  std::vector<std::vector<SplatAccum>> partial(static_cast<std::size_t>(workers), std::vector<SplatAccum>(nsplat));

  auto up = [](const Image& img, int x, int y, int c) { return img.empty() ? 0.0 : img(x, y, c); };
  const std::vector<HotSplat> hot = pack_splats(set, cache.splats);

  for_row_chunks(workers, H, [&](int w, int y0, int y1) {
    auto& acc = partial[static_cast<std::size_t>(w)];
    for (int y = y0; y < y1; ++y) {
      for (int x = 0; x < W; ++x) {
        const std::size_t pix = static_cast<std::size_t>(y) * W + x;
        const std::uint32_t begin = cache.pixel_offsets[pix], end = cache.pixel_offsets[pix + 1];
        if (begin == end) continue;
        const double g[kFeatures] = {up(upstream.color, x, y, 0), up(upstream.color, x, y, 1),
                                     up(upstream.color, x, y, 2), up(upstream.depth, x, y, 0),
                                     up(upstream.alpha, x, y, 0)};
        if (g[0] == 0.0 && g[1] == 0.0 && g[2] == 0.0 && g[3] == 0.0 && g[4] == 0.0) continue;
        double behind[kFeatures] = {0, 0, 0, 0, 0};
        for (std::uint32_t ci = end; ci-- > begin;) {
          const Contribution& c = cache.contributions[ci];
          const HotSplat& h = hot[c.splat];
          const double* f = h.f;
          const double wgt = c.alpha * c.transmittance;
          SplatAccum& a = acc[c.splat];
          a.color += Vec3(g[0], g[1], g[2]) * wgt;
          a.depth += g[3] * wgt;
          double d_alpha = 0.0;
          for (int k = 0; k < kFeatures; ++k) {
            d_alpha += g[k] * (f[k] - behind[k]);
            behind[k] = c.alpha * f[k] + (1.0 - c.alpha) * behind[k];
          }
          d_alpha *= c.transmittance;
          const double dx = x - h.mx, dy = y - h.my;
          a.opacity += d_alpha * c.falloff;
          const double d_power = d_alpha * c.alpha;
          a.mean.x() += d_power * (h.ca * dx + h.cb * dy);
          a.mean.y() += d_power * (h.cb * dx + h.cc * dy);
          const double k = -0.5 * d_power;
          a.conic(0, 0) += k * dx * dx;
          a.conic(0, 1) += k * dx * dy;
          a.conic(1, 0) += k * dx * dy;
          a.conic(1, 1) += k * dy * dy;
        }
      }
    }
  });

  std::vector<SplatAccum>& total = partial[0];
  for (std::size_t w = 1; w < partial.size(); ++w) {
    for (std::size_t i = 0; i < nsplat; ++i) {
      total[i].mean += partial[w][i].mean;
      total[i].conic += partial[w][i].conic;
      total[i].color += partial[w][i].color;
      total[i].depth += partial[w][i].depth;
      total[i].opacity += partial[w][i].opacity;
    }
  }

  const Mat3 Wrot = camera.pose.R.transpose();
  const CameraIntrinsics& K = camera.intrinsics;
  PoseGradient& cam_grad = grad.poses[static_cast<std::size_t>(cache.view)];

  for (std::size_t i = 0; i < nsplat; ++i) {
    const SplatIntermediate& s = cache.splats[i];
    const SplatAccum& a = total[i];
    const GaussianCommon& gc = set.common(s.gaussian);
    CommonGradient& cg = grad.common[s.gaussian];
    cg.color += a.color;
    cg.opacity += a.opacity;

    // conic = cov2d^-1
    const Mat2 d_cov2d = -s.conic * a.conic * s.conic;
    const Mat23 d_J = (d_cov2d + d_cov2d.transpose()) * s.J * s.cov_cam;
    const Mat3 d_cov_cam = s.J.transpose() * d_cov2d * s.J;
    const Mat3 d_cov3d = Wrot.transpose() * d_cov_cam * Wrot;
    Mat3 d_Wrot = (d_cov_cam + d_cov_cam.transpose()) * Wrot * s.cov3d;

    // camera-frame point: mean, Jacobian and depth all depend on it
    const double x = s.cam.x(), y = s.cam.y(), z = s.cam.z();
    const double iz2 = 1.0 / (z * z), iz3 = iz2 / z;
    Vec3 d_cam = s.J.transpose() * a.mean;
    d_cam.x() += -K.fx * iz2 * d_J(0, 2);
    d_cam.y() += -K.fy * iz2 * d_J(1, 2);
    d_cam.z() += -K.fx * iz2 * d_J(0, 0) + 2.0 * K.fx * x * iz3 * d_J(0, 2) - K.fy * iz2 * d_J(1, 1) +
                 2.0 * K.fy * y * iz3 * d_J(1, 2);
    d_cam.z() += a.depth;

    cam_grad.R += d_Wrot.transpose();
    const Vec3 d_mu = backprop_camera_point(camera.pose, s.world, d_cam, cam_grad);
    backprop_position(set, rays, cameras, s.gaussian, d_mu, grad);

    // Sigma = M M^T, M = R_g diag(scale)
    const Mat3 Rg = quaternion_to_rotation(gc.rotation);
    const Vec3 scale = gc.log_scale.array().exp().matrix();
    const Mat3 M = Rg * scale.asDiagonal();
    const Mat3 d_M = (d_cov3d + d_cov3d.transpose()) * M;
    const Mat3 d_Rg = d_M * scale.asDiagonal();
    for (int k = 0; k < 3; ++k) cg.log_scale[k] += d_M.col(k).dot(Rg.col(k)) * scale[k];
    cg.rotation += quaternion_gradient(gc.rotation, d_Rg);
  }
}

}  // namespace geosplat
