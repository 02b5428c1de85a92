#include "geosplat/matching.hpp"

#include <cmath>

#include "geosplat/error.hpp"

namespace geosplat {

namespace {

double image_diagonal(const CameraIntrinsics& K) { return std::hypot(K.width, K.height); }

// |target - pi(x_c)| and its gradient w.r.t. x_c (zero at or below the floor).
double pixel_residual(const Vec2& target, const Vec3& xc, const CameraIntrinsics& K, double floor, Vec3* d_xc) {
  const Vec2 e = target - project_camera_point(xc, K);
  const double n = e.norm();
  if (d_xc) *d_xc = n > floor && n > 0.0 ? Vec3(-(projection_jacobian(xc, K).transpose() * e) / n) : Vec3::Zero();
  return n;
}

}  // namespace

Vec2 cross_projection(const Vec3& X, const Camera& /*source*/, const Camera& target) { return project(X, target); }

Vec3 backproject_depth(const Vec2& p, double depth, const Camera& camera) {
  if (!(depth > 0.0)) throw Error(ErrorCode::NonPositiveDepth, "back-projection depth must be positive");
  return camera.pose.to_world(depth * (camera.intrinsics.inverse() * Vec3(p.x(), p.y(), 1.0)));
}

MatchLoss gaussian_position_loss(const HybridGaussianSet& set, const RayTable& rays,
                                 const std::vector<Camera>& cameras, SceneGradient* grad, double weight,
                                 double residual_floor) {
  MatchLoss out;
  if (set.pairs.empty()) return out;
  const double inv_terms = 1.0 / (2.0 * static_cast<double>(set.pairs.size()));
  const std::size_t nord = set.ordinary.size();

  auto directed = [&](std::uint32_t from, std::uint32_t to) {
    const RayGaussian& g = set.ray_based[from];
    const RayAnchor& target_anchor = set.anchors[set.ray_based[to].ray_ref];
    const Camera& cam = cameras[static_cast<std::size_t>(target_anchor.view)];
    const Vec3 mu = ray_gaussian_position(g, rays);
    const Vec3 xc = cam.pose.to_camera(mu);
    ++out.terms;
    if (!(xc.z() > kMinProjectDepth)) return image_diagonal(cam.intrinsics);
    Vec3 d_xc;
    const double r = pixel_residual(target_anchor.pixel, xc, cam.intrinsics, residual_floor, grad ? &d_xc : nullptr);
    if (grad) {
      const Vec3 d_mu = backprop_camera_point(cam.pose, mu, d_xc * (weight * inv_terms),
                                              grad->poses[static_cast<std::size_t>(target_anchor.view)]);
      backprop_position(set, rays, cameras, nord + from, d_mu, *grad);
    }
    return r;
  };

  double sum = 0.0;
  for (const auto& [a, b] : set.pairs) {
    sum += directed(a, b);
    sum += directed(b, a);
  }
  out.value = sum * inv_terms;
  return out;
}

MatchLoss rendering_geometry_loss(std::span<const DepthMap> maps, const std::vector<MatchPair>& matches,
                                  const std::vector<Camera>& cameras, const GeometryLossOptions& options,
                                  GeometryLossGradient* grad, double weight) {
  std::vector<int> map_of_view(cameras.size(), -1);
  for (std::size_t k = 0; k < maps.size(); ++k) {
    if (!maps[k].depth) throw Error(ErrorCode::InvalidArgument, "depth map missing");
    if (options.normalize_by_alpha && !maps[k].alpha) throw Error(ErrorCode::InvalidArgument, "alpha map missing");
    map_of_view.at(static_cast<std::size_t>(maps[k].view)) = static_cast<int>(k);
  }

  struct Term {
    int map;
    int target;
    Vec2 p_src, p_dst;
    BilinearTaps taps;
    double depth, alpha;
    Vec3 xc_src;  // camera-frame point in the source view
    Vec3 world;
  };
  std::vector<Term> terms;
  MatchLoss out;

  auto add = [&](int src, int dst, const Vec2& ps, const Vec2& pd) {
    const int k = map_of_view.at(static_cast<std::size_t>(src));
    if (k < 0) return;
    const DepthMap& m = maps[static_cast<std::size_t>(k)];
    Term t{k, dst, ps, pd, bilinear_taps(m.depth->width, m.depth->height, ps.x(), ps.y()), 0.0, 1.0, {}, {}};
    t.depth = t.taps.sample(*m.depth);
    if (options.normalize_by_alpha) {
      t.alpha = t.taps.sample(*m.alpha);
      if (!(t.alpha > options.min_alpha)) {
        ++out.skipped;
        return;
      }
    }
    const double d = t.depth / t.alpha;
    if (!(d > 0.0)) {
      ++out.skipped;
      return;
    }
    const Camera& cam = cameras[static_cast<std::size_t>(src)];
    t.xc_src = d * (cam.intrinsics.inverse() * Vec3(ps.x(), ps.y(), 1.0));
    t.world = cam.pose.to_world(t.xc_src);
    terms.push_back(t);
  };
  for (const MatchPair& m : matches) {
    add(m.view_i, m.view_j, m.p_i, m.p_j);
    add(m.view_j, m.view_i, m.p_j, m.p_i);
  }
  if (terms.empty()) throw Error(ErrorCode::SkippedAllTerms, "no geometry-loss term has a valid depth");
  out.terms = terms.size();
  const double inv = 1.0 / static_cast<double>(terms.size());

  if (grad) {
    grad->maps.resize(maps.size());
    for (std::size_t k = 0; k < maps.size(); ++k) {
      const Image& D = *maps[k].depth;
      if (grad->maps[k].depth.empty()) grad->maps[k].depth = Image(D.width, D.height, 1);
      if (options.normalize_by_alpha && grad->maps[k].alpha.empty()) grad->maps[k].alpha = Image(D.width, D.height, 1);
    }
  }

  double sum = 0.0;
  for (const Term& t : terms) {
    const Camera& dst = cameras[static_cast<std::size_t>(t.target)];
    const Vec3 xc = dst.pose.to_camera(t.world);
    if (!(xc.z() > kMinProjectDepth)) {
      sum += image_diagonal(dst.intrinsics);
      continue;
    }
    Vec3 d_xc;
    sum += pixel_residual(t.p_dst, xc, dst.intrinsics, options.residual_floor, grad ? &d_xc : nullptr);
    if (!grad) continue;
    d_xc *= weight * inv;
    const auto src_view = static_cast<std::size_t>(maps[static_cast<std::size_t>(t.map)].view);
    const Camera& src = cameras[src_view];
    PoseGradient scratch_dst, scratch_src;
    PoseGradient& dst_pose = grad->poses ? (*grad->poses)[static_cast<std::size_t>(t.target)] : scratch_dst;
    PoseGradient& src_pose = grad->poses ? (*grad->poses)[src_view] : scratch_src;
    const Vec3 d_world = backprop_camera_point(dst.pose, t.world, d_xc, dst_pose);
    // world = R xc_src + t, xc_src = d * ray, d = depth / alpha
    src_pose.R += d_world * t.xc_src.transpose();
    src_pose.t += d_world;
    const Vec3 d_xsrc = src.pose.R.transpose() * d_world;
    const double d_d = d_xsrc.dot(t.xc_src) / (t.depth / t.alpha);
    ViewGradient& vg = grad->maps[static_cast<std::size_t>(t.map)];
    const double d_depth = d_d / t.alpha;
    for (int q = 0; q < 4; ++q) vg.depth.data[t.taps.index[q]] += t.taps.weight[q] * d_depth;
    if (options.normalize_by_alpha) {
      const double d_alpha = -d_d * t.depth / (t.alpha * t.alpha);
      for (int q = 0; q < 4; ++q) vg.alpha.data[t.taps.index[q]] += t.taps.weight[q] * d_alpha;
    }
  }
  out.value = sum * inv;
  return out;
}

}  // namespace geosplat
