#include "geosplat/gaussians.hpp"

#include <algorithm>
#include <array>
#include <limits>
#include <cmath>
#include <random>

#include "geosplat/error.hpp"
#include "geosplat/knn.hpp"

namespace geosplat {

void enforce_invariants(GaussianCommon& g) {
  g.rotation = normalize_quaternion(g.rotation);
  g.opacity = std::clamp(g.opacity, 0.0, kMaxOpacity);
  const double lo = std::log(kMinScale), hi = std::log(kMaxScale);
  for (int k = 0; k < 3; ++k) g.log_scale[k] = std::clamp(g.log_scale[k], lo, hi);
  g.color = g.color.cwiseMax(0.0).cwiseMin(1.0);
}

Mat3 covariance(const GaussianCommon& g) {
  const Mat3 R = quaternion_to_rotation(g.rotation);
  const Mat3 M = R * g.log_scale.array().exp().matrix().asDiagonal();
  return M * M.transpose();
}

void HybridGaussianSet::validate(std::size_t camera_count) const {
  std::vector<int> seen(ray_based.size(), 0);
  for (const auto& [a, b] : pairs) {
    if (a >= ray_based.size() || b >= ray_based.size() || a == b) {
      throw Error(ErrorCode::InvalidArgument, "pair table index out of range");
    }
    ++seen[a];
    ++seen[b];
  }
  for (int s : seen) {
    if (s != 1) throw Error(ErrorCode::InvalidArgument, "ray-based Gaussian must belong to exactly one pair");
  }
  for (const auto& g : ray_based) {
    if (g.ray_ref >= anchors.size()) throw Error(ErrorCode::InvalidArgument, "ray_ref out of range");
  }
  for (const auto& a : anchors) {
    if (a.view < 0 || static_cast<std::size_t>(a.view) >= camera_count) {
      throw Error(ErrorCode::InvalidArgument, "anchor view out of range");
    }
  }
}

void HybridGaussianSet::enforce_invariants() {
  for (auto& g : ordinary) geosplat::enforce_invariants(g.common);
  for (auto& g : ray_based) {
    geosplat::enforce_invariants(g.common);
    // open interval (z_near, z_far)
    g.z = std::clamp(g.z, std::nextafter(z_near, z_far), std::nextafter(z_far, z_near));
  }
}

RayTable build_ray_table(const HybridGaussianSet& set, const std::vector<Camera>& cameras) {
  RayTable rays;
  rays.reserve(set.anchors.size());
  for (const auto& a : set.anchors) {
    const Camera& cam = cameras.at(static_cast<std::size_t>(a.view));
    rays.push_back(pixel_to_ray(a.pixel, cam.intrinsics, cam.pose));
  }
  return rays;
}

Vec3 ray_gaussian_position(const RayGaussian& g, const RayTable& rays) {
  return rays.at(g.ray_ref).at(g.z);
}

std::vector<Vec3> gaussian_positions(const HybridGaussianSet& set, const RayTable& rays) {
  std::vector<Vec3> out;
  out.reserve(set.size());
  for (const auto& g : set.ordinary) out.push_back(g.position);
  for (const auto& g : set.ray_based) out.push_back(ray_gaussian_position(g, rays));
  return out;
}

double sample_bilinear(const Image& image, const Vec2& p, int c) {
  return bilinear_taps(image.width, image.height, p.x(), p.y()).sample(image, c);
}

namespace {

double percentile(std::vector<double> values, double p) {
  std::sort(values.begin(), values.end());
  const double pos = p * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

bool near_anchor(const Vec3& X, const Camera& cam, const Vec2& pixel, double radius) {
  const Vec3 xc = cam.pose.to_camera(X);
  if (!(xc.z() > kMinProjectDepth)) return false;
  return (project_camera_point(xc, cam.intrinsics) - pixel).norm() <= radius;
}

}  // namespace

HybridGaussianSet init_hybrid(const PointCloud& points, const std::vector<MatchPair>& matches,
                              const std::vector<Camera>& cameras, const std::vector<Image>& images,
                              const InitOptions& options) {
  if (points.size() == 0) throw Error(ErrorCode::EmptyInput, "initial point cloud is empty");
  if (cameras.empty()) throw Error(ErrorCode::EmptyInput, "no cameras");
  for (const auto& cam : cameras) {
    cam.intrinsics.validate();
    cam.pose.validate();
  }

  // isotropic scale from the mean distance to the 3 nearest points
  std::vector<double> log_scale(points.size(), std::log(0.01));
  if (points.size() >= 2) {
    KdTree tree(points.positions);
    for (std::uint32_t i = 0; i < points.size(); ++i) {
      const auto nn = tree.nearest(i, 3);
      double mean = 0.0;
      for (const auto& n : nn) mean += std::sqrt(n.distance2);
      mean /= static_cast<double>(nn.size());
      log_scale[i] = std::log(std::clamp(mean, kMinScale * 10.0, kMaxScale));
    }
  }

  std::vector<int> depth_views = options.depth_views;
  if (depth_views.empty()) {
    for (std::size_t v = 0; v < cameras.size(); ++v) depth_views.push_back(static_cast<int>(v));
  }
  std::vector<double> distances;
  distances.reserve(points.size() * depth_views.size());
  for (int v : depth_views) {
    for (const auto& X : points.positions) distances.push_back((X - cameras.at(v).pose.t).norm());
  }

  HybridGaussianSet set;
  set.z_near = options.near_margin * percentile(distances, options.near_percentile);
  set.z_far = options.far_margin * percentile(distances, options.far_percentile);
  if (!(set.z_near > 0.0) || !(set.z_far > set.z_near)) {
    throw Error(ErrorCode::InvalidArgument, "degenerate depth range of the imported points");
  }

  std::vector<bool> absorbed(points.size(), false);
  std::vector<int> owner(matches.size(), -1);
  for (std::size_t k = 0; k < matches.size(); ++k) {
    const MatchPair& m = matches[k];
    const Camera& ci = cameras.at(m.view_i);
    const Camera& cj = cameras.at(m.view_j);
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t p = 0; p < points.size(); ++p) {
      const Vec3& X = points.positions[p];
      if (near_anchor(X, ci, m.p_i, options.absorb_radius_px) ||
          near_anchor(X, cj, m.p_j, options.absorb_radius_px)) {
        absorbed[p] = true;
        const Vec3 xc = ci.pose.to_camera(X);
        const double d = xc.z() > kMinProjectDepth
                             ? (project_camera_point(xc, ci.intrinsics) - m.p_i).norm()
                             : std::numeric_limits<double>::infinity();
        if (owner[k] < 0 || d < best) {
          owner[k] = static_cast<int>(p);
          best = d;
        }
      }
    }
  }

  std::vector<double> sorted_scale = log_scale;
  std::nth_element(sorted_scale.begin(), sorted_scale.begin() + sorted_scale.size() / 2, sorted_scale.end());
  const double median_log_scale = sorted_scale[sorted_scale.size() / 2];

  for (std::size_t p = 0; p < points.size(); ++p) {
    if (absorbed[p]) continue;
    OrdinaryGaussian g;
    g.position = points.positions[p];
    g.common.log_scale = Vec3::Constant(log_scale[p]);
    g.common.color = p < points.colors.size() ? points.colors[p] : Vec3::Constant(0.5);
    g.common.opacity = options.initial_opacity;
    enforce_invariants(g.common);
    set.ordinary.push_back(g);
  }

  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<double> uniform_z(set.z_near, set.z_far);
  for (std::size_t k = 0; k < matches.size(); ++k) {
    const MatchPair& m = matches[k];
    if (m.view_i == m.view_j) throw Error(ErrorCode::InvalidArgument, "match views must differ");
    const double ls = owner[k] >= 0 ? log_scale[owner[k]] : median_log_scale;
    const std::array<std::pair<int, Vec2>, 2> ends{{{m.view_i, m.p_i}, {m.view_j, m.p_j}}};
    const auto first = static_cast<std::uint32_t>(set.ray_based.size());
    for (const auto& [view, pixel] : ends) {
      RayGaussian g;
      g.ray_ref = static_cast<std::uint32_t>(set.anchors.size());
      set.anchors.push_back(RayAnchor{view, pixel});
      g.z = uniform_z(rng);
      g.common.log_scale = Vec3::Constant(ls);
      if (static_cast<std::size_t>(view) < images.size() && !images[view].empty()) {
        for (int c = 0; c < 3; ++c) g.common.color[c] = sample_bilinear(images[view], pixel, c);
      } else if (owner[k] >= 0 && static_cast<std::size_t>(owner[k]) < points.colors.size()) {
        g.common.color = points.colors[owner[k]];
      }
      g.common.opacity = options.initial_opacity;
      enforce_invariants(g.common);
      set.ray_based.push_back(g);
    }
    set.pairs.emplace_back(first, first + 1);
  }
  return set;
}

}  // namespace geosplat
