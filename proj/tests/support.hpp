#pragma once

// Shared fixtures and independent oracles for the test binaries.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "geosplat/gaussians.hpp"
#include "geosplat/geometry.hpp"
#include "geosplat/renderer.hpp"

namespace geosplat::testing {

inline Camera make_camera(int id, double f, int w, int h, const Mat3& R, const Vec3& t) {
  Camera c;
  c.id = id;
  c.intrinsics = CameraIntrinsics{f, f, 0.5 * (w - 1), 0.5 * (h - 1), w, h};
  c.pose = CameraPose{R, t};
  return c;
}

inline Mat3 random_rotation(std::mt19937_64& rng, double max_angle) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(-max_angle, max_angle);
  const Vec3 axis = Vec3(n(rng), n(rng), n(rng)).normalized();
  return Eigen::AngleAxisd(u(rng), axis).toRotationMatrix();
}

inline Vec4 random_quaternion(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec4 q(n(rng), n(rng), n(rng), n(rng));
  q.normalize();
  if (q[0] < 0) q = -q;
  return q;
}

/// Midpoint of the shortest segment between two rays (independent triangulation).
inline Vec3 midpoint_triangulate(const Vec3& o1, const Vec3& d1, const Vec3& o2, const Vec3& d2,
                                 double* s1_out = nullptr) {
  const Vec3 w = o1 - o2;
  const double a = d1.dot(d1), b = d1.dot(d2), c = d2.dot(d2), d = d1.dot(w), e = d2.dot(w);
  const double den = a * c - b * b;
  const double s1 = (b * e - c * d) / den;
  const double s2 = (a * e - b * d) / den;
  if (s1_out) *s1_out = s1;
  return 0.5 * ((o1 + s1 * d1) + (o2 + s2 * d2));
}

/// Random tiny scene: two 8x8 cameras, one ordinary Gaussian and one ray-based
/// pair (anchored in views 0 and 1), all visible from view 0.
struct TinyScene {
  HybridGaussianSet set;
  std::vector<Camera> cameras;
};

inline TinyScene make_tiny_scene(std::uint64_t seed, int size = 8) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double f = size;
  TinyScene s;
  s.cameras.push_back(make_camera(0, f, size, size, random_rotation(rng, 0.05), Vec3(0, 0, 0)));
  s.cameras.push_back(
      make_camera(1, f, size, size, random_rotation(rng, 0.08), Vec3(0.3 + 0.1 * u(rng), 0.05, 0.02)));
  const Camera& c0 = s.cameras[0];

  auto visible_point = [&](double margin) {
    const double z = 2.5 + 1.5 * u(rng);
    const Vec2 p(margin + (size - 1 - 2 * margin) * u(rng), margin + (size - 1 - 2 * margin) * u(rng));
    return c0.pose.to_world(z * (c0.intrinsics.inverse() * Vec3(p.x(), p.y(), 1.0)));
  };
  auto random_common = [&](double depth) {
    GaussianCommon g;
    const double sigma_px = 0.8 + 1.2 * u(rng);
    for (int k = 0; k < 3; ++k) g.log_scale[k] = std::log(sigma_px * depth / f * (0.7 + 0.6 * u(rng)));
    g.rotation = random_quaternion(rng);
    g.color = Vec3(0.1 + 0.8 * u(rng), 0.1 + 0.8 * u(rng), 0.1 + 0.8 * u(rng));
    g.opacity = 0.3 + 0.6 * u(rng);
    return g;
  };

  OrdinaryGaussian o;
  o.position = visible_point(1.5);
  o.common = random_common(c0.pose.to_camera(o.position).z());
  s.set.ordinary.push_back(o);

  // pair member a: ray from view 0, member b: ray from view 1
  for (int k = 0; k < 2; ++k) {
    const Camera& cam = s.cameras[static_cast<std::size_t>(k)];
    const Vec3 X = visible_point(1.5);
    RayAnchor a;
    a.view = k;
    a.pixel = project(X, cam);
    RayGaussian g;
    g.ray_ref = static_cast<std::uint32_t>(s.set.anchors.size());
    g.z = (X - cam.pose.t).norm();
    g.common = random_common(c0.pose.to_camera(X).z());
    s.set.anchors.push_back(a);
    s.set.ray_based.push_back(g);
  }
  s.set.pairs.emplace_back(0, 1);
  s.set.z_near = 0.1;
  s.set.z_far = 100.0;
  return s;
}

struct GradCheckReport {
  int checked = 0;
  int failed = 0;
  double worst = 0.0;  // min(relative, absolute / 1e-6 * 1e-3) style score, lower is better
  std::string worst_name;
  std::vector<std::string> failures;

  void record(const std::string& name, double analytic, double numeric, double rel_tol = 1e-3,
              double abs_tol = 1e-6) {
    ++checked;
    const double err = std::abs(analytic - numeric);
    const double scale = std::max(std::abs(analytic), std::abs(numeric));
    const double rel = scale > 0 ? err / scale : 0.0;
    const bool ok = err <= abs_tol || rel <= rel_tol;
    const double score = std::min(rel / rel_tol, err / abs_tol);
    if (score > worst) {
      worst = score;
      worst_name = name;
    }
    if (!ok) {
      ++failed;
      failures.push_back(name + ": analytic " + std::to_string(analytic) + " numeric " + std::to_string(numeric));
    }
  }
};

/// Central-difference check of every renderer gradient on a tiny scene with a
/// random linear functional of color, depth and alpha as the loss.
inline GradCheckReport check_render_gradients(std::uint64_t seed, double h = 1e-6) {
  TinyScene scene = make_tiny_scene(seed);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const Camera& cam = scene.cameras[0];
  const int W = cam.intrinsics.width, H = cam.intrinsics.height;
  ViewGradient up{Image(W, H, 3), Image(W, H, 1), Image(W, H, 1)};
  for (auto* img : {&up.color, &up.depth, &up.alpha})
    for (double& v : img->data) v = u(rng);

  auto loss = [&](const HybridGaussianSet& set, const std::vector<Camera>& cams) {
    const RayTable rays = build_ray_table(set, cams);
    const RenderOutput out = rasterize(set, rays, cams, 0);
    double l = 0.0;
    for (std::size_t i = 0; i < out.view.color.size(); ++i) l += up.color.data[i] * out.view.color.data[i];
    for (std::size_t i = 0; i < out.view.depth.size(); ++i) {
      l += up.depth.data[i] * out.view.depth.data[i];
      l += up.alpha.data[i] * out.view.alpha.data[i];
    }
    return l;
  };

  const RayTable rays = build_ray_table(scene.set, scene.cameras);
  const RenderOutput out = rasterize(scene.set, rays, scene.cameras, 0);
  SceneGradient grad;
  grad.reset(scene.set, scene.cameras.size());
  backward(scene.set, rays, scene.cameras, out.cache, up, grad);

  GradCheckReport report;
  auto fd = [&](const std::string& name, double analytic, const std::function<void(HybridGaussianSet&,
                                                                                 std::vector<Camera>&, double)>& nudge) {
    HybridGaussianSet sp = scene.set, sm = scene.set;
    std::vector<Camera> cp = scene.cameras, cm = scene.cameras;
    nudge(sp, cp, h);
    nudge(sm, cm, -h);
    report.record(name, analytic, (loss(sp, cp) - loss(sm, cm)) / (2 * h));
  };

  for (std::size_t g = 0; g < scene.set.size(); ++g) {
    const std::string tag = "g" + std::to_string(g) + ".";
    for (int k = 0; k < 3; ++k) {
      fd(tag + "log_scale" + std::to_string(k), grad.common[g].log_scale[k],
         [&](auto& s, auto&, double e) { s.common(g).log_scale[k] += e; });
      fd(tag + "color" + std::to_string(k), grad.common[g].color[k],
         [&](auto& s, auto&, double e) { s.common(g).color[k] += e; });
    }
    for (int k = 0; k < 4; ++k)
      fd(tag + "rotation" + std::to_string(k), grad.common[g].rotation[k],
         [&](auto& s, auto&, double e) { s.common(g).rotation[k] += e; });
    fd(tag + "opacity", grad.common[g].opacity, [&](auto& s, auto&, double e) { s.common(g).opacity += e; });
  }
  for (std::size_t i = 0; i < scene.set.ordinary.size(); ++i)
    for (int k = 0; k < 3; ++k)
      fd("mu" + std::to_string(i) + "." + std::to_string(k), grad.position[i][k],
         [&](auto& s, auto&, double e) { s.ordinary[i].position[k] += e; });
  for (std::size_t i = 0; i < scene.set.ray_based.size(); ++i)
    fd("z" + std::to_string(i), grad.z[i], [&](auto& s, auto&, double e) { s.ray_based[i].z += e; });
  for (std::size_t c = 0; c < scene.cameras.size(); ++c) {
    const std::string tag = "pose" + std::to_string(c) + ".";
    for (int k = 0; k < 3; ++k) {
      fd(tag + "t" + std::to_string(k), grad.poses[c].t[k],
         [&](auto&, auto& cams, double e) { cams[c].pose.t[k] += e; });
      const Mat3 gen = skew(Vec3::Unit(k));
      const double analytic = (grad.poses[c].R.array() * (scene.cameras[c].pose.R * gen).array()).sum();
      fd(tag + "w" + std::to_string(k), analytic, [&](auto&, auto& cams, double e) {
        cams[c].pose.R = cams[c].pose.R * rotation_from_rotvec(e * Vec3::Unit(k));
      });
    }
  }
  return report;
}

/// Camera at `center` looking at `target` with a roll about the viewing axis.
inline Camera look_at_camera(int id, double f, int w, int h, const Vec3& center, const Vec3& target, double roll) {
  const Vec3 z = (target - center).normalized();
  Vec3 up = std::abs(z.y()) < 0.9 ? Vec3::UnitY() : Vec3::UnitX();
  const Vec3 x = up.cross(z).normalized();
  Mat3 R;
  R.col(0) = x;
  R.col(1) = z.cross(x);
  R.col(2) = z;
  return make_camera(id, f, w, h, R * Eigen::AngleAxisd(roll, Vec3::UnitZ()).toRotationMatrix(), center);
}

/// Two views of one point with an exact correspondence.
struct TwoViewConfig {
  Camera cam_i, cam_j;
  Vec3 X;
  Vec2 p_i, p_j;
};

/// Random non-degenerate two-view configuration: cameras 3 to 6 units from the
/// origin, 5 to 60 degrees apart, the point near the origin and inside both images.
inline TwoViewConfig random_two_view(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> n(0.0, 1.0);
  for (;;) {
    TwoViewConfig c;
    const Vec3 a = Vec3(n(rng), n(rng), n(rng)).normalized();
    Vec3 b = Vec3(n(rng), n(rng), n(rng)).normalized();
    const double sep = std::acos(std::clamp(a.dot(b), -1.0, 1.0));
    if (sep < 5.0 * std::numbers::pi / 180.0 || sep > 60.0 * std::numbers::pi / 180.0) continue;
    const Vec3 look(0.2 * n(rng), 0.2 * n(rng), 0.2 * n(rng));
    c.cam_i = look_at_camera(0, 200 + 400 * u(rng), 640, 480, (3 + 3 * u(rng)) * a, look, 0.3 * n(rng));
    c.cam_j = look_at_camera(1, 200 + 400 * u(rng), 640, 480, (3 + 3 * u(rng)) * b, look, 0.3 * n(rng));
    c.X = Vec3(0.5 * (2 * u(rng) - 1), 0.5 * (2 * u(rng) - 1), 0.5 * (2 * u(rng) - 1));
    auto inside = [](const Camera& cam, const Vec3& X, Vec2& p) {
      const Vec3 xc = cam.pose.to_camera(X);
      if (xc.z() < 0.5) return false;
      p = project(X, cam);
      return p.x() > 5 && p.y() > 5 && p.x() < cam.intrinsics.width - 6 && p.y() < cam.intrinsics.height - 6;
    };
    if (!inside(c.cam_i, c.X, c.p_i) || !inside(c.cam_j, c.X, c.p_j)) continue;
    // keep the viewing rays well away from parallel
    const Vec3 ri = (c.X - c.cam_i.pose.t).normalized(), rj = (c.X - c.cam_j.pose.t).normalized();
    if (std::acos(std::clamp(ri.dot(rj), -1.0, 1.0)) < 2.0 * std::numbers::pi / 180.0) continue;
    return c;
  }
}

/// Depth in view i of the midpoint triangulation of the rays through p_i and p_j.
inline double oracle_depth(const Vec2& p_i, const Vec2& p_j, const Camera& ci, const Camera& cj) {
  const Vec3 di = ci.pose.R * (ci.intrinsics.inverse() * Vec3(p_i.x(), p_i.y(), 1.0));
  const Vec3 dj = cj.pose.R * (cj.intrinsics.inverse() * Vec3(p_j.x(), p_j.y(), 1.0));
  return ci.pose.to_camera(midpoint_triangulate(ci.pose.t, di, cj.pose.t, dj)).z();
}

/// Central difference of |O_i P| against the distance of p_j from the epipole on
/// camera j's z = 1 plane, moving p_j by `step` pixels along its epipolar line.
inline double oracle_sensitivity(const Vec2& p_i, const Vec2& p_j, const Camera& ci, const Camera& cj,
                                 double step = 0.25) {
  const Vec3 e = cj.pose.to_camera(ci.pose.t);
  const Vec2 epipole = project_camera_point(e, cj.intrinsics);
  const Vec2 dir = (p_j - epipole).normalized();
  auto dis_ref = [&](const Vec2& q) {
    const Vec3 di = ci.pose.R * (ci.intrinsics.inverse() * Vec3(p_i.x(), p_i.y(), 1.0));
    const Vec3 dj = cj.pose.R * (cj.intrinsics.inverse() * Vec3(q.x(), q.y(), 1.0));
    return (midpoint_triangulate(ci.pose.t, di, cj.pose.t, dj) - ci.pose.t).norm();
  };
  auto dis_pro = [&](const Vec2& q) {
    const Vec3 a = cj.intrinsics.inverse() * Vec3(q.x(), q.y(), 1.0);
    const Vec3 b = cj.intrinsics.inverse() * Vec3(epipole.x(), epipole.y(), 1.0);
    return (a - b).norm();
  };
  const Vec2 plus = p_j + step * dir, minus = p_j - step * dir;
  return std::abs((dis_ref(plus) - dis_ref(minus)) / (dis_pro(plus) - dis_pro(minus)));
}

}  // namespace geosplat::testing
