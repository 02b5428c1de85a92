#include "geosplat/flow_depth.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "geosplat/error.hpp"

namespace geosplat {

namespace {

double angle_between(const Vec3& a, const Vec3& b) { return std::atan2(a.cross(b).norm(), a.dot(b)); }

Vec3 normalized_plane(const Vec2& p, const CameraIntrinsics& K) {
  return Vec3((p.x() - K.cx) / K.fx, (p.y() - K.cy) / K.fy, 1.0);
}

// |O_i P| for the point triangulated from p_i and p_bar_j.
double reference_distance(const Vec2& p_i, const Vec2& p_bar_j, const Camera& cam_i, const Camera& cam_j) {
  const double d = flow_depth(p_i, p_bar_j, cam_i, cam_j);
  return d * normalized_plane(p_i, cam_i.intrinsics).norm();
}

}  // namespace

Vec2 flow_warp(const Vec2& p_i, const FlowField& flow) {
  const Image& f = flow.data;
  if (!(p_i.x() >= 0.0 && p_i.y() >= 0.0 && p_i.x() <= f.width - 1 && p_i.y() <= f.height - 1)) {
    throw Error(ErrorCode::OutOfBounds, "pixel outside the flow raster");
  }
  const BilinearTaps t = bilinear_taps(f.width, f.height, p_i.x(), p_i.y());
  return p_i + Vec2(t.sample(f, 0), t.sample(f, 1));
}

Vec2 perpendicular_foot(const Vec2& p, const EpipolarLine& l) {
  const double n2 = l.a * l.a + l.b * l.b;
  if (n2 <= 1e-18) throw Error(ErrorCode::DegenerateLine, "degenerate epipolar line");
  return {(l.b * l.b * p.x() - l.a * l.b * p.y() - l.a * l.c) / n2,
          (l.a * l.a * p.y() - l.a * l.b * p.x() - l.b * l.c) / n2};
}

double flow_depth(const Vec2& p_i, const Vec2& p_bar_j, const Camera& cam_i, const Camera& cam_j) {
  // Everything in camera i's frame: D a = e + s h.
  const Vec3 a = normalized_plane(p_i, cam_i.intrinsics);
  const Vec3 h = cam_i.pose.R.transpose() * cam_j.pose.R * normalized_plane(p_bar_j, cam_j.intrinsics);
  const Vec3 e = cam_i.pose.R.transpose() * (cam_j.pose.t - cam_i.pose.t);
  const Vec3 ah = a.cross(h);
  const double den = ah.squaredNorm();
  if (den <= 1e-24 || ah.norm() <= 1e-12 * a.norm() * h.norm()) {
    throw Error(ErrorCode::ParallelRays, "viewing rays are parallel");
  }
  const double depth = e.cross(h).dot(ah) / den;
  const double s = -e.cross(a).dot(h.cross(a)) / den;
  if (!(depth > 0.0) || !(s > 0.0)) throw Error(ErrorCode::NegativeDepth, "correspondence behind a camera");
  return depth;
}

double depth_sensitivity_numeric(const Vec2& p_i, const Vec2& p_bar_j, const Camera& cam_i, const Camera& cam_j,
                                 double step_px) {
  const Mat3 F = fundamental_matrix(cam_i.intrinsics, cam_i.pose, cam_j.intrinsics, cam_j.pose);
  const EpipolarLine l = epipolar_line(p_i, F);
  const Vec2 dir = Vec2(l.b, -l.a).normalized();
  const Vec2 plus = p_bar_j + step_px * dir, minus = p_bar_j - step_px * dir;
  const double d_ref = reference_distance(p_i, plus, cam_i, cam_j) - reference_distance(p_i, minus, cam_i, cam_j);
  const double d_pro =
      (normalized_plane(plus, cam_j.intrinsics) - normalized_plane(minus, cam_j.intrinsics)).norm();
  const double s = std::abs(d_ref / d_pro);
  if (!std::isfinite(s)) throw Error(ErrorCode::DegenerateGeometry, "non-finite sensitivity");
  return s;
}

double depth_sensitivity(const Vec2& p_i, const Vec2& p_bar_j, const Camera& cam_i, const Camera& cam_j,
                         double fd_step_px) {
  const Vec3 oi = cam_j.pose.to_camera(cam_i.pose.t);  // O_i in camera j
  if (!(oi.z() > kMinProjectDepth)) return depth_sensitivity_numeric(p_i, p_bar_j, cam_i, cam_j, fd_step_px);

  const EpipoleGeometry eg = epipole_and_baseline(cam_i.pose, cam_j.pose, cam_j.intrinsics);
  const double depth = flow_depth(p_i, p_bar_j, cam_i, cam_j);
  const Vec3 P = cam_j.pose.to_camera(cam_i.pose.to_world(depth * normalized_plane(p_i, cam_i.intrinsics)));

  const Vec3 o = oi / oi.z();
  const Vec3 q = normalized_plane(p_bar_j, cam_j.intrinsics);
  const double alpha = angle_between(oi, P);
  const double beta = angle_between(-oi, P - oi);
  const double theta = angle_between(-o, q - o);
  const double s_theta = std::sin(theta), s_ab = std::sin(alpha + beta);
  if (s_theta <= 1e-9 || s_ab <= 1e-9) throw Error(ErrorCode::DegenerateGeometry, "degenerate triangle");
  const double s_at = std::sin(alpha + theta);
  return eg.baseline * std::sin(beta) * s_at * s_at / (eg.m * s_theta * s_ab * s_ab);
}

std::optional<DepthCandidate> blend_depth(std::span<const DepthCandidate> candidates) {
  std::optional<DepthCandidate> best;
  for (const DepthCandidate& c : candidates) {
    if (!best || c.sensitivity < best->sensitivity ||
        (c.sensitivity == best->sensitivity && c.view < best->view)) {
      best = c;
    }
  }
  return best;
}

DepthEstimate estimate_depth(int view_i, const std::vector<Camera>& cameras, std::span<const FlowField> flows,
                             int workers) {
  const Camera& cam_i = cameras.at(static_cast<std::size_t>(view_i));
  const int W = cam_i.intrinsics.width, H = cam_i.intrinsics.height;
  DepthEstimate out;
  out.depth = Image(W, H, 1, kInvalidDepth);
  out.sensitivity = Image(W, H, 1, 0.0);
  out.source_view.assign(static_cast<std::size_t>(W) * H, -1);

  std::vector<Mat3> F;
  for (const FlowField& f : flows) {
    if (f.view_i != view_i) throw Error(ErrorCode::InvalidArgument, "flow does not start at the requested view");
    if (f.data.width != W || f.data.height != H || f.data.channels != 2) {
      throw Error(ErrorCode::ShapeMismatch, "flow raster does not match the view");
    }
    const Camera& cam_j = cameras.at(static_cast<std::size_t>(f.view_j));
    F.push_back(fundamental_matrix(cam_i.intrinsics, cam_i.pose, cam_j.intrinsics, cam_j.pose));
  }

  auto rows = [&](int y0, int y1) {
    std::vector<DepthCandidate> cands;
    for (int y = y0; y < y1; ++y) {
      for (int x = 0; x < W; ++x) {
        cands.clear();
        const Vec2 p(x, y);
        for (std::size_t k = 0; k < flows.size(); ++k) {
          const Camera& cam_j = cameras[static_cast<std::size_t>(flows[k].view_j)];
          try {
            const Vec2 p_hat = p + Vec2(flows[k].data(x, y, 0), flows[k].data(x, y, 1));
            const Vec2 p_bar = perpendicular_foot(p_hat, epipolar_line(p, F[k]));
            const double d = flow_depth(p, p_bar, cam_i, cam_j);
            cands.push_back({flows[k].view_j, d, depth_sensitivity(p, p_bar, cam_i, cam_j)});
          } catch (const Error&) {
            // this view gives no usable estimate at p
          }
        }
        if (auto best = blend_depth(cands)) {
          const std::size_t idx = static_cast<std::size_t>(y) * W + x;
          out.depth.data[idx] = best->depth;
          out.sensitivity.data[idx] = best->sensitivity;
          out.source_view[idx] = best->view;
        }
      }
    }
  };

  workers = std::clamp(workers, 1, std::max(H, 1));
  if (workers == 1) {
    rows(0, H);
  } else {
    std::vector<std::thread> threads;
    for (int w = 0; w < workers; ++w) threads.emplace_back(rows, H * w / workers, H * (w + 1) / workers);
    for (auto& t : threads) t.join();
  }
  return out;
}

DepthLoss depth_loss(const Image& target, const Image& rendered, const Image& alpha, Image* grad, double weight,
                     double min_alpha) {
  if (!target.same_shape(rendered) || !target.same_shape(alpha) || target.channels != 1) {
    throw Error(ErrorCode::ShapeMismatch, "depth maps differ in shape");
  }
  DepthLoss out;
  double sum = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (target.data[i] > 0.0 && alpha.data[i] > min_alpha) {
      sum += std::abs(target.data[i] - rendered.data[i]);
      ++out.pixels;
    }
  }
  if (out.pixels == 0) throw Error(ErrorCode::NoValidPixels, "no pixel has both a valid target and coverage");
  out.value = sum / static_cast<double>(out.pixels);
  if (grad) {
    if (!grad->same_shape(target)) *grad = Image(target.width, target.height, 1);
    const double g = weight / static_cast<double>(out.pixels);
    for (std::size_t i = 0; i < target.size(); ++i) {
      if (target.data[i] > 0.0 && alpha.data[i] > min_alpha) {
        const double d = rendered.data[i] - target.data[i];
        grad->data[i] += g * ((d > 0.0) - (d < 0.0));
      }
    }
  }
  return out;
}

}  // namespace geosplat
