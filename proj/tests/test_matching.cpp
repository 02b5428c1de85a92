#include <gtest/gtest.h>

#include <random>

#include "geosplat/error.hpp"
#include "geosplat/matching.hpp"
#include "geosplat/renderer.hpp"
#include "support.hpp"

using namespace geosplat;
using geosplat::testing::make_camera;
using geosplat::testing::midpoint_triangulate;
using geosplat::testing::random_rotation;

namespace {

// Cameras on an arc around the origin, all looking at it.
std::vector<Camera> ring_cameras(std::mt19937_64& rng, int n, int w = 160, int h = 120) {
  std::vector<Camera> cams;
  for (int v = 0; v < n; ++v) {
    const double phi = 0.25 * (v - 0.5 * (n - 1));
    const Vec3 center(4.0 * std::sin(phi), 0.1 * std::cos(3 * phi), -4.0 * std::cos(phi));
    const Vec3 z = (-center).normalized();
    const Vec3 x = Vec3::UnitY().cross(z).normalized();
    Mat3 R;
    R.col(0) = x;
    R.col(1) = z.cross(x);
    R.col(2) = z;
    cams.push_back(make_camera(v, 150.0, w, h, R * random_rotation(rng, 0.01), center));
  }
  return cams;
}

struct PairScene {
  std::vector<Camera> cameras;
  HybridGaussianSet set;
  std::vector<MatchPair> matches;
  std::vector<Vec3> points;
};

// Exact matches of random points with both ray Gaussians placed on the point.
PairScene make_pair_scene(std::uint64_t seed, int n_matches) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  PairScene s;
  s.cameras = ring_cameras(rng, 4);
  for (int k = 0; k < n_matches; ++k) {
    const Vec3 X(0.8 * u(rng), 0.6 * u(rng), 0.5 * u(rng));
    MatchPair m;
    m.view_i = k % 4;
    m.view_j = (k + 1 + k / 4 % 2) % 4;
    m.p_i = project(X, s.cameras[m.view_i]);
    m.p_j = project(X, s.cameras[m.view_j]);
    s.matches.push_back(m);
    s.points.push_back(X);
    const auto first = static_cast<std::uint32_t>(s.set.ray_based.size());
    for (const auto& [view, pixel] : {std::pair{m.view_i, m.p_i}, std::pair{m.view_j, m.p_j}}) {
      RayGaussian g;
      g.ray_ref = static_cast<std::uint32_t>(s.set.anchors.size());
      s.set.anchors.push_back(RayAnchor{view, pixel});
      // independent triangulation of the point from the two match rays
      const Camera& a = s.cameras[static_cast<std::size_t>(view)];
      const Camera& b = s.cameras[static_cast<std::size_t>(view == m.view_i ? m.view_j : m.view_i)];
      const Vec2 pb = view == m.view_i ? m.p_j : m.p_i;
      const Vec3 da = (a.pose.R * (a.intrinsics.inverse() * Vec3(pixel.x(), pixel.y(), 1.0))).normalized();
      const Vec3 db = (b.pose.R * (b.intrinsics.inverse() * Vec3(pb.x(), pb.y(), 1.0))).normalized();
      double s1 = 0.0;
      midpoint_triangulate(a.pose.t, da, b.pose.t, db, &s1);
      g.z = s1;
      s.set.ray_based.push_back(g);
    }
    s.set.pairs.emplace_back(first, first + 1);
  }
  s.set.z_near = 0.1;
  s.set.z_far = 100.0;
  return s;
}

void rigid_transform(std::vector<Camera>& cams, const Mat3& Q, const Vec3& c) {
  for (auto& cam : cams) {
    cam.pose.R = Q * cam.pose.R;
    cam.pose.t = Q * cam.pose.t + c;
  }
}

}  // namespace

TEST(CrossProjection, TriangulatedPointLandsOnMatch) {
  std::mt19937_64 rng(41);
  const auto cams = ring_cameras(rng, 2);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int k = 0; k < 100; ++k) {
    const Vec3 X(u(rng), 0.5 * u(rng), 0.5 * u(rng));
    const Vec2 p0 = project(X, cams[0]), p1 = project(X, cams[1]);
    const Ray r0 = pixel_to_ray(p0, cams[0].intrinsics, cams[0].pose);
    const Ray r1 = pixel_to_ray(p1, cams[1].intrinsics, cams[1].pose);
    const Vec3 T = midpoint_triangulate(r0.origin, r0.direction, r1.origin, r1.direction);
    EXPECT_LT((cross_projection(T, cams[0], cams[1]) - p1).norm(), 1e-7);
    EXPECT_LT((cross_projection(T, cams[1], cams[0]) - p0).norm(), 1e-7);
    EXPECT_LT((cross_projection(X, cams[0], cams[0]) - project(X, cams[0])).norm(), 1e-15);
  }
}

TEST(GaussianPositionLoss, MeanOfDirectedErrors) {
  // rectified pair, f = 100: the point (0, 0, 10) sits 10 px apart in the two views
  const Camera ci = make_camera(0, 100.0, 101, 101, Mat3::Identity(), Vec3::Zero());
  const Camera cj = make_camera(1, 100.0, 101, 101, Mat3::Identity(), Vec3(1, 0, 0));
  const std::vector<Camera> cams{ci, cj};
  const Vec2 p_i(50, 50);
  const Vec2 p_j = project(Vec3(0, 0, 10), cj) + Vec2(0, 1);  // 1 px off the epipolar line

  // mu_j at camera depth w reprojects into view i at (f / w - 10, 1) from p_i
  const double w = 100.0 / (10.0 + std::sqrt(8.0));
  HybridGaussianSet set;
  set.anchors = {RayAnchor{0, p_i}, RayAnchor{1, p_j}};
  RayGaussian a, b;
  a.ray_ref = 0;
  a.z = 10.0;
  b.ray_ref = 1;
  b.z = w * Vec3(-10.0 / 100.0, 1.0 / 100.0, 1.0).norm();
  set.ray_based = {a, b};
  set.pairs.emplace_back(0, 1);
  const RayTable rays = build_ray_table(set, cams);

  const MatchLoss l = gaussian_position_loss(set, rays, cams);
  EXPECT_NEAR(l.value, 2.0, 1e-9);  // (1 + 3) / 2
  EXPECT_EQ(l.terms, 2u);
}

TEST(GaussianPositionLoss, VanishesAtTriangulatedDepths) {
  const PairScene s = make_pair_scene(42, 40);
  const RayTable rays = build_ray_table(s.set, s.cameras);
  const MatchLoss l = gaussian_position_loss(s.set, rays, s.cameras);
  EXPECT_LT(l.value, 1e-7);
  EXPECT_EQ(l.terms, 80u);
}

TEST(GaussianPositionLoss, ZeroIffConsistent) {
  PairScene s = make_pair_scene(43, 10);
  s.set.ray_based[4].z *= 1.05;
  const RayTable rays = build_ray_table(s.set, s.cameras);
  EXPECT_GT(gaussian_position_loss(s.set, rays, s.cameras).value, 1e-3);
}

TEST(GaussianPositionLoss, BehindTargetContributesDiagonal) {
  // both cameras look down +z; the Gaussian of view 0 sits behind camera 1
  const Camera c0 = make_camera(0, 100.0, 30, 40, Mat3::Identity(), Vec3::Zero());
  const Camera c1 = make_camera(1, 100.0, 30, 40, Mat3::Identity(), Vec3(0, 0, 5));
  const std::vector<Camera> cams{c0, c1};
  HybridGaussianSet set;
  set.anchors = {RayAnchor{0, Vec2(14.5, 19.5)}, RayAnchor{1, Vec2(14.5, 19.5)}};
  RayGaussian a, b;
  a.z = 2.0;
  b.ray_ref = 1;
  b.z = 3.0;
  set.ray_based = {a, b};
  set.pairs.emplace_back(0, 1);
  const RayTable rays = build_ray_table(set, cams);
  SceneGradient grad;
  grad.reset(set, cams.size());
  const MatchLoss l = gaussian_position_loss(set, rays, cams, &grad);
  // the other direction lands on p_0 exactly (both on the shared optical axis)
  EXPECT_NEAR(l.value, 0.5 * 50.0, 1e-12);
  EXPECT_EQ(grad.z[0], 0.0);
}

TEST(GaussianPositionLoss, GradientsMatchFiniteDifferences) {
  PairScene s = make_pair_scene(44, 12);
  std::mt19937_64 rng(45);
  std::uniform_real_distribution<double> u(0.9, 1.1);
  for (auto& g : s.set.ray_based) g.z *= u(rng);

  auto loss = [&](const HybridGaussianSet& set, const std::vector<Camera>& cams) {
    return gaussian_position_loss(set, build_ray_table(set, cams), cams).value;
  };
  SceneGradient grad;
  grad.reset(s.set, s.cameras.size());
  gaussian_position_loss(s.set, build_ray_table(s.set, s.cameras), s.cameras, &grad);

  const double h = 1e-6;
  for (std::size_t i = 0; i < s.set.ray_based.size(); ++i) {
    HybridGaussianSet sp = s.set, sm = s.set;
    sp.ray_based[i].z += h;
    sm.ray_based[i].z -= h;
    const double fd = (loss(sp, s.cameras) - loss(sm, s.cameras)) / (2 * h);
    EXPECT_NEAR(grad.z[i], fd, 1e-4 * std::max(1.0, std::abs(fd))) << "z" << i;
  }
  for (std::size_t c = 0; c < s.cameras.size(); ++c) {
    for (int k = 0; k < 3; ++k) {
      auto cp = s.cameras, cm = s.cameras;
      cp[c].pose.t[k] += h;
      cm[c].pose.t[k] -= h;
      const double fd = (loss(s.set, cp) - loss(s.set, cm)) / (2 * h);
      EXPECT_NEAR(grad.poses[c].t[k], fd, 1e-4 * std::max(1.0, std::abs(fd)));

      cp = s.cameras;
      cm = s.cameras;
      cp[c].pose.R = cp[c].pose.R * rotation_from_rotvec(h * Vec3::Unit(k));
      cm[c].pose.R = cm[c].pose.R * rotation_from_rotvec(-h * Vec3::Unit(k));
      const double fdr = (loss(s.set, cp) - loss(s.set, cm)) / (2 * h);
      const double analytic =
          (grad.poses[c].R.array() * (s.cameras[c].pose.R * skew(Vec3::Unit(k))).array()).sum();
      EXPECT_NEAR(analytic, fdr, 1e-4 * std::max(1.0, std::abs(fdr)));
    }
  }
}

TEST(GaussianPositionLoss, SymmetricUnderPairSwap) {
  PairScene s = make_pair_scene(46, 15);
  std::mt19937_64 rng(47);
  std::uniform_real_distribution<double> u(0.8, 1.2);
  for (auto& g : s.set.ray_based) g.z *= u(rng);
  const double before = gaussian_position_loss(s.set, build_ray_table(s.set, s.cameras), s.cameras).value;
  for (auto& p : s.set.pairs) std::swap(p.first, p.second);
  const double after = gaussian_position_loss(s.set, build_ray_table(s.set, s.cameras), s.cameras).value;
  EXPECT_NEAR(before, after, 1e-12);
}

TEST(GaussianPositionLoss, RigidInvariance) {
  PairScene s = make_pair_scene(48, 15);
  std::mt19937_64 rng(49);
  std::uniform_real_distribution<double> u(0.8, 1.2);
  for (auto& g : s.set.ray_based) g.z *= u(rng);
  const double before = gaussian_position_loss(s.set, build_ray_table(s.set, s.cameras), s.cameras).value;
  rigid_transform(s.cameras, random_rotation(rng, 3.0), Vec3(2.0, -1.0, 0.5));
  // ray Gaussians ride on the rays, so moving the cameras moves them too
  const double after = gaussian_position_loss(s.set, build_ray_table(s.set, s.cameras), s.cameras).value;
  EXPECT_NEAR(before, after, 1e-9);
}

TEST(BackprojectDepth, IdentityCamera) {
  Camera c;
  c.intrinsics = CameraIntrinsics{1.0, 1.0, 0.0, 0.0, 1, 1};
  const Vec3 X = backproject_depth(Vec2(0, 0), 2.0, c);
  EXPECT_LT((X - Vec3(0, 0, 2)).norm(), 1e-15);
  try {
    backproject_depth(Vec2(0, 0), 0.0, c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonPositiveDepth);
  }
}

TEST(BackprojectDepth, RoundTrip) {
  std::mt19937_64 rng(50);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto cams = ring_cameras(rng, 3);
  for (int k = 0; k < 200; ++k) {
    const Camera& c = cams[k % 3];
    const Vec2 p(160 * u(rng), 120 * u(rng));
    const double d = 0.5 + 10 * u(rng);
    const Vec3 X = backproject_depth(p, d, c);
    EXPECT_LT((project(X, c) - p).norm(), 1e-9);
    EXPECT_NEAR(c.pose.to_camera(X).z(), d, 1e-12);
  }
}

TEST(BackprojectDepth, RecoversSingleOpaqueGaussian) {
  std::mt19937_64 rng(51);
  const auto cams = ring_cameras(rng, 1, 41, 41);
  const Camera& c = cams[0];
  // mean exactly behind the center of pixel (17, 23)
  const Vec3 mu = backproject_depth(Vec2(17, 23), 3.7, c);
  HybridGaussianSet set;
  OrdinaryGaussian g;
  g.position = mu;
  g.common.log_scale = Vec3::Constant(std::log(0.02));
  g.common.opacity = kMaxOpacity;
  set.ordinary.push_back(g);
  const RenderOutput out = rasterize(set, build_ray_table(set, cams), cams, 0);
  // the blended depth carries the opacity factor; dividing by alpha removes it
  const double d = out.view.depth(17, 23) / out.view.alpha(17, 23);
  EXPECT_LT((backproject_depth(Vec2(17, 23), d, c) - mu).norm(), 1e-6);
}

namespace {

struct DepthScene {
  std::vector<Camera> cameras;
  std::vector<MatchPair> matches;
  std::vector<Image> depths;
};

// Analytic depth maps of a tilted plane seen by every camera; matches on the plane.
DepthScene make_plane_scene(std::uint64_t seed, int n_matches) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  DepthScene s;
  s.cameras = ring_cameras(rng, 3);
  const Vec3 n = Vec3(0.1, 0.2, -1.0).normalized();
  const double offset = 0.3;  // plane n . X = offset
  for (const Camera& c : s.cameras) {
    Image D(160, 120, 1);
    for (int y = 0; y < 120; ++y)
      for (int x = 0; x < 160; ++x) {
        const Vec3 ray = c.pose.R * (c.intrinsics.inverse() * Vec3(x, y, 1.0));
        D(x, y) = (offset - n.dot(c.pose.t)) / n.dot(ray);  // camera-frame z along this pixel
      }
    s.depths.push_back(D);
  }
  while (static_cast<int>(s.matches.size()) < n_matches) {
    // integer pixels so bilinear sampling of the analytic map is exact
    const int v = static_cast<int>(s.matches.size()) % 3;
    const Camera& ci = s.cameras[v];
    const Vec2 p(std::round(80 + 60 * u(rng)), std::round(60 + 45 * u(rng)));
    const Vec3 X = backproject_depth(p, s.depths[v](static_cast<int>(p.x()), static_cast<int>(p.y())), ci);
    MatchPair m;
    m.view_i = v;
    m.view_j = (v + 1) % 3;
    m.p_i = p;
    m.p_j = project(X, s.cameras[m.view_j]);
    s.matches.push_back(m);
  }
  return s;
}

std::vector<DepthMap> depth_maps(const DepthScene& s, const std::vector<int>& views) {
  std::vector<DepthMap> maps;
  for (int v : views) maps.push_back(DepthMap{v, &s.depths[static_cast<std::size_t>(v)], nullptr});
  return maps;
}

}  // namespace

TEST(RenderingGeometryLoss, VanishesOnTrueDepth) {
  // shared orientation and a plane facing every camera: camera depth is constant per view,
  // so bilinear sampling is exact in both directions
  std::mt19937_64 rng(52);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const Mat3 R = random_rotation(rng, 0.5);
  std::vector<Camera> cams;
  std::vector<Image> depths;
  for (int v = 0; v < 3; ++v) {
    const Vec3 local(0.5 * (v - 1), 0.1 * u(rng), 0.3 * u(rng));
    cams.push_back(make_camera(v, 150.0, 160, 120, R, R * local));
    depths.emplace_back(160, 120, 1, 6.0 - local.z());
  }
  std::vector<MatchPair> matches;
  for (int k = 0; k < 30; ++k) {
    const Vec3 X = R * Vec3(0.6 * u(rng), 0.4 * u(rng), 6.0);
    MatchPair m;
    m.view_i = k % 3;
    m.view_j = (k + 1) % 3;
    m.p_i = project(X, cams[m.view_i]);
    m.p_j = project(X, cams[m.view_j]);
    matches.push_back(m);
  }
  std::vector<DepthMap> maps;
  for (int v = 0; v < 3; ++v) maps.push_back(DepthMap{v, &depths[v], nullptr});
  const MatchLoss l = rendering_geometry_loss(maps, matches, cams);
  EXPECT_EQ(l.terms, 60u);
  EXPECT_LT(l.value, 1e-6);
}

TEST(RenderingGeometryLoss, ExactAtIntegerSamples) {
  const DepthScene s = make_plane_scene(53, 30);
  // tilted plane: only the direction whose source sample lands on a pixel center is exact
  double total = 0.0;
  for (const MatchPair& m : s.matches) {
    const DepthMap map{m.view_i, &s.depths[static_cast<std::size_t>(m.view_i)], nullptr};
    const MatchLoss l = rendering_geometry_loss(std::span<const DepthMap>(&map, 1), {m}, s.cameras);
    EXPECT_EQ(l.terms, 1u);
    total += l.value;
  }
  EXPECT_LT(total / s.matches.size(), 1e-6);
}

TEST(RenderingGeometryLoss, TwoPixelErrorEachWay) {
  // rectified pair with constant depth 10; the match is 2 px off along the baseline
  const Camera ci = make_camera(0, 100.0, 101, 101, Mat3::Identity(), Vec3::Zero());
  const Camera cj = make_camera(1, 100.0, 101, 101, Mat3::Identity(), Vec3(1, 0, 0));
  const std::vector<Camera> cams{ci, cj};
  const Image D(101, 101, 1, 10.0);
  const std::vector<DepthMap> maps{DepthMap{0, &D, nullptr}, DepthMap{1, &D, nullptr}};
  MatchPair m;
  m.view_i = 0;
  m.view_j = 1;
  m.p_i = Vec2(50, 50);
  m.p_j = Vec2(40 + 2, 50);  // disparity 10 at depth 10, shifted by 2
  const MatchLoss l = rendering_geometry_loss(maps, {m}, cams);
  EXPECT_NEAR(l.value, 2.0, 1e-12);
  EXPECT_EQ(l.terms, 2u);
}

TEST(RenderingGeometryLoss, SkipsNonPositiveDepth) {
  const Camera ci = make_camera(0, 100.0, 21, 21, Mat3::Identity(), Vec3::Zero());
  const Camera cj = make_camera(1, 100.0, 21, 21, Mat3::Identity(), Vec3(1, 0, 0));
  const std::vector<Camera> cams{ci, cj};
  Image D(21, 21, 1, 10.0);
  const Image empty(21, 21, 1, 0.0);
  MatchPair m;
  m.p_i = Vec2(10, 10);
  m.p_j = Vec2(0, 10);
  std::vector<DepthMap> maps{DepthMap{0, &D, nullptr}, DepthMap{1, &empty, nullptr}};
  const MatchLoss l = rendering_geometry_loss(maps, {m}, cams);
  EXPECT_EQ(l.terms, 1u);
  EXPECT_EQ(l.skipped, 1u);
  maps[0].depth = &empty;
  try {
    rendering_geometry_loss(maps, {m}, cams);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SkippedAllTerms);
  }
}

TEST(RenderingGeometryLoss, DepthPerturbationIsLocal) {
  const DepthScene s = make_plane_scene(54, 12);
  const auto maps = depth_maps(s, {0, 1, 2});
  GeometryLossGradient grad;
  rendering_geometry_loss(maps, s.matches, s.cameras, {}, &grad);
  // nudging a pixel no term samples changes nothing
  DepthScene t = s;
  std::vector<bool> touched(160 * 120, false);
  for (std::size_t k = 0; k < grad.maps[0].depth.size(); ++k) touched[k] = grad.maps[0].depth.data[k] != 0.0;
  std::size_t untouched = 0;
  while (touched[untouched]) ++untouched;
  t.depths[0].data[untouched] += 5.0;
  const double a = rendering_geometry_loss(maps, s.matches, s.cameras).value;
  const double b = rendering_geometry_loss(depth_maps(t, {0, 1, 2}), t.matches, t.cameras).value;
  EXPECT_EQ(a, b);
}

TEST(RenderingGeometryLoss, GradientsMatchFiniteDifferences) {
  DepthScene s = make_plane_scene(55, 10);
  std::mt19937_64 rng(56);
  std::uniform_real_distribution<double> u(0.95, 1.05);
  for (auto& D : s.depths)
    for (double& v : D.data) v *= u(rng);
  std::vector<Image> alphas(3, Image(160, 120, 1));
  for (auto& A : alphas)
    for (double& v : A.data) v = 0.6 + 0.3 * (u(rng) - 0.95) * 10;

  for (bool normalize : {false, true}) {
    GeometryLossOptions opt;
    opt.normalize_by_alpha = normalize;
    auto maps_of = [&](const std::vector<Image>& D, const std::vector<Image>& A) {
      std::vector<DepthMap> maps;
      for (int v = 0; v < 3; ++v) maps.push_back(DepthMap{v, &D[v], &A[v]});
      return maps;
    };
    std::vector<PoseGradient> poses(3);
    GeometryLossGradient grad;
    grad.poses = &poses;
    rendering_geometry_loss(maps_of(s.depths, alphas), s.matches, s.cameras, opt, &grad);

    const double h = 1e-6;
    int checked = 0;
    for (int v = 0; v < 3; ++v) {
      for (std::size_t k = 0; k < s.depths[v].size(); ++k) {
        if (grad.maps[v].depth.data[k] == 0.0) continue;
        auto Dp = s.depths, Dm = s.depths;
        Dp[v].data[k] += h;
        Dm[v].data[k] -= h;
        const double fd = (rendering_geometry_loss(maps_of(Dp, alphas), s.matches, s.cameras, opt).value -
                           rendering_geometry_loss(maps_of(Dm, alphas), s.matches, s.cameras, opt).value) /
                          (2 * h);
        EXPECT_NEAR(grad.maps[v].depth.data[k], fd, 1e-4 * std::max(1.0, std::abs(fd)));
        if (normalize) {
          auto Ap = alphas, Am = alphas;
          Ap[v].data[k] += h;
          Am[v].data[k] -= h;
          const double fda = (rendering_geometry_loss(maps_of(s.depths, Ap), s.matches, s.cameras, opt).value -
                              rendering_geometry_loss(maps_of(s.depths, Am), s.matches, s.cameras, opt).value) /
                             (2 * h);
          EXPECT_NEAR(grad.maps[v].alpha.data[k], fda, 1e-4 * std::max(1.0, std::abs(fda)));
        }
        ++checked;
      }
    }
    EXPECT_GT(checked, 40);
    for (int c = 0; c < 3; ++c)
      for (int k = 0; k < 3; ++k) {
        auto cp = s.cameras, cm = s.cameras;
        cp[c].pose.t[k] += h;
        cm[c].pose.t[k] -= h;
        const double fd = (rendering_geometry_loss(maps_of(s.depths, alphas), s.matches, cp, opt).value -
                           rendering_geometry_loss(maps_of(s.depths, alphas), s.matches, cm, opt).value) /
                          (2 * h);
        EXPECT_NEAR(poses[c].t[k], fd, 1e-4 * std::max(1.0, std::abs(fd)));
      }
  }
}

TEST(RenderingGeometryLoss, ReversedMatchesAndRigidMotion) {
  DepthScene s = make_plane_scene(57, 20);
  const auto maps = depth_maps(s, {0, 1, 2});
  const double base = rendering_geometry_loss(maps, s.matches, s.cameras).value;
  std::vector<MatchPair> reversed;
  for (const auto& m : s.matches) reversed.push_back(MatchPair{m.view_j, m.view_i, m.p_j, m.p_i, m.weight});
  EXPECT_NEAR(rendering_geometry_loss(maps, reversed, s.cameras).value, base, 1e-12);
  std::mt19937_64 rng(58);
  rigid_transform(s.cameras, random_rotation(rng, 3.0), Vec3(-1.0, 0.3, 2.0));
  // camera-frame depths are unchanged by a rigid motion of the whole scene
  EXPECT_NEAR(rendering_geometry_loss(maps, s.matches, s.cameras).value, base, 1e-9);
}
