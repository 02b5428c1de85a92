#include <gtest/gtest.h>

#include <random>

#include "geosplat/error.hpp"
#include "geosplat/geometry.hpp"
#include "support.hpp"

using namespace geosplat;
using geosplat::testing::make_camera;
using geosplat::testing::random_rotation;

namespace {

CameraIntrinsics unit_intrinsics() { return CameraIntrinsics{1.0, 1.0, 0.0, 0.0, 1, 1}; }

Camera random_camera(std::mt19937_64& rng, int id) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  return make_camera(id, 300.0 + 100.0 * u(rng), 640, 480, random_rotation(rng, 0.3),
                     Vec3(u(rng), u(rng), u(rng)) * 0.5);
}

// A point in front of the camera that projects inside the image.
Vec3 visible_point(std::mt19937_64& rng, const Camera& c) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Vec2 p(20 + 600 * u(rng), 20 + 440 * u(rng));
  const double depth = 2.0 + 6.0 * u(rng);
  return c.pose.to_world(depth * (c.intrinsics.inverse() * Vec3(p.x(), p.y(), 1.0)));
}

}  // namespace

TEST(Project, OpticalAxisHitsPrincipalPoint) {
  const Vec2 p = project(Vec3(0, 0, 2), unit_intrinsics(), CameraPose{});
  EXPECT_DOUBLE_EQ(p.x(), 0.0);
  EXPECT_DOUBLE_EQ(p.y(), 0.0);
}

TEST(Project, PerspectiveDivision) {
  const Vec2 p = project(Vec3(2, 4, 2), unit_intrinsics(), CameraPose{});
  EXPECT_DOUBLE_EQ(p.x(), 1.0);
  EXPECT_DOUBLE_EQ(p.y(), 2.0);
}

TEST(Project, TranslationComposes) {
  CameraPose pose;
  pose.t = Vec3(0, 0, -1);
  EXPECT_DOUBLE_EQ(pose.to_camera(Vec3(0, 0, 1)).z(), 2.0);
  const Vec2 p = project(Vec3(0, 0, 1), unit_intrinsics(), pose);
  EXPECT_DOUBLE_EQ(p.x(), 0.0);
  EXPECT_DOUBLE_EQ(p.y(), 0.0);
}

TEST(Project, BehindCameraThrows) {
  try {
    project(Vec3(0, 0, -1), unit_intrinsics(), CameraPose{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::PointBehindCamera);
  }
}

TEST(PixelToRay, AxisAndOblique) {
  const Ray r0 = pixel_to_ray(Vec2(0, 0), unit_intrinsics(), CameraPose{});
  EXPECT_LT((r0.origin - Vec3::Zero()).norm(), 1e-15);
  EXPECT_LT((r0.direction - Vec3(0, 0, 1)).norm(), 1e-15);
  const Ray r1 = pixel_to_ray(Vec2(1, 0), unit_intrinsics(), CameraPose{});
  EXPECT_LT((r1.direction - Vec3(1, 0, 1) / std::sqrt(2.0)).norm(), 1e-15);
}

TEST(PixelToRay, RoundTripThroughRandomPoints) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 100; ++i) {
    const Camera c = random_camera(rng, 0);
    const Vec3 X = visible_point(rng, c);
    const Ray r = pixel_to_ray(project(X, c), c.intrinsics, c.pose);
    EXPECT_NEAR(r.direction.norm(), 1.0, 1e-12);
    // closest point of the ray to X
    const Vec3 foot = r.at((X - r.origin).dot(r.direction));
    EXPECT_LT((foot - X).norm(), 1e-9);
    for (double s : {0.5, 3.0, 10.0}) EXPECT_LT((project(r.at(s), c) - project(X, c)).norm(), 1e-9);
  }
}

TEST(Fundamental, RectifiedStereo) {
  CameraPose j;
  j.t = Vec3(1, 0, 0);
  const Mat3 F = fundamental_matrix(unit_intrinsics(), CameraPose{}, unit_intrinsics(), j);
  Mat3 expected;
  expected << 0, 0, 0, 0, 0, -1, 0, 1, 0;
  // equal up to scale
  const double s = F(2, 1) / expected(2, 1);
  EXPECT_LT((F - s * expected).norm(), 1e-12 * F.norm());
  const EpipolarLine l = epipolar_line(Vec2(3, 5), F / s);
  EXPECT_NEAR(l.a, 0.0, 1e-15);
  EXPECT_NEAR(l.b, -1.0, 1e-15);
  EXPECT_NEAR(l.c, 5.0, 1e-15);
}

TEST(Fundamental, CoincidentCenters) {
  try {
    fundamental_matrix(unit_intrinsics(), CameraPose{}, unit_intrinsics(), CameraPose{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::CoincidentCameras);
  }
}

TEST(Fundamental, EpipolarConstraintOnRandomPairs) {
  std::mt19937_64 rng(12);
  for (int i = 0; i < 100; ++i) {
    const Camera a = random_camera(rng, 0);
    Camera b = random_camera(rng, 1);
    const Vec3 X = visible_point(rng, a);
    if (b.pose.to_camera(X).z() <= 0.1) continue;
    const Mat3 F = fundamental_matrix(a.intrinsics, a.pose, b.intrinsics, b.pose);
    const Vec2 pa = project(X, a), pb = project(X, b);
    const double r = Vec3(pb.x(), pb.y(), 1.0).dot(F * Vec3(pa.x(), pa.y(), 1.0)) / F.norm();
    EXPECT_LT(std::abs(r), 1e-9);
    const EpipolarLine l = epipolar_line(pa, F);
    EXPECT_LT(l.distance(pb), 1e-7);
  }
}

TEST(EpipolarLine, ScaleOfFCarriesOver) {
  std::mt19937_64 rng(13);
  const Camera a = random_camera(rng, 0), b = random_camera(rng, 1);
  const Mat3 F = fundamental_matrix(a.intrinsics, a.pose, b.intrinsics, b.pose);
  const EpipolarLine l1 = epipolar_line(Vec2(100, 200), F), l2 = epipolar_line(Vec2(100, 200), 2.0 * F);
  EXPECT_DOUBLE_EQ(l2.a, 2.0 * l1.a);
  EXPECT_DOUBLE_EQ(l2.b, 2.0 * l1.b);
  EXPECT_DOUBLE_EQ(l2.c, 2.0 * l1.c);
}

TEST(EpipolarLine, EpipoleIsDegenerate) {
  // camera j sees camera i's center at the principal point, so p_i at i's epipole
  CameraPose i, j;
  j.t = Vec3(0, 0, -2);
  const CameraIntrinsics K{100, 100, 50, 50, 101, 101};
  const Mat3 F = fundamental_matrix(K, i, K, j);
  try {
    epipolar_line(Vec2(50, 50), F);  // the epipole of view j in view i lies on the axis
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateLine);
  }
}

TEST(Epipole, RectifiedIsAtInfinity) {
  CameraPose j;
  j.t = Vec3(1, 0, 0);
  try {
    epipole_and_baseline(CameraPose{}, j, unit_intrinsics());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EpipoleAtInfinity);
  }
}

TEST(Epipole, LookingAtOtherCenterGivesPrincipalPoint) {
  CameraPose i, j;
  i.t = Vec3(0, 0, 3);
  const CameraIntrinsics K{200, 200, 64, 48, 128, 96};
  const EpipoleGeometry g = epipole_and_baseline(i, j, K);
  EXPECT_NEAR(g.epipole.x(), 64.0, 1e-12);
  EXPECT_NEAR(g.epipole.y(), 48.0, 1e-12);
  EXPECT_NEAR(g.baseline, 3.0, 1e-12);
}

TEST(Epipole, AllEpipolarLinesMeetThere) {
  std::mt19937_64 rng(14);
  int tested = 0;
  while (tested < 50) {
    const Camera a = random_camera(rng, 0), b = random_camera(rng, 1);
    EpipoleGeometry g;
    try {
      g = epipole_and_baseline(a.pose, b.pose, b.intrinsics);
    } catch (const Error&) {
      continue;
    }
    const Mat3 F = fundamental_matrix(a.intrinsics, a.pose, b.intrinsics, b.pose);
    for (int k = 0; k < 5; ++k) {
      const EpipolarLine l = epipolar_line(project(visible_point(rng, a), a), F);
      EXPECT_LT(l.distance(g.epipole), 1e-7 * std::max(1.0, g.epipole.norm() / 1000.0));
    }
    EXPECT_NEAR(g.baseline, (a.pose.t - b.pose.t).norm(), 1e-12);
    ++tested;
  }
}

TEST(Quaternion, RoundTripAndGradient) {
  std::mt19937_64 rng(15);
  for (int i = 0; i < 50; ++i) {
    const Vec4 q = geosplat::testing::random_quaternion(rng);
    const Mat3 R = quaternion_to_rotation(q);
    EXPECT_LT((R.transpose() * R - Mat3::Identity()).norm(), 1e-12);
    EXPECT_NEAR(R.determinant(), 1.0, 1e-12);
    Vec4 back = rotation_to_quaternion(R);
    if (back.dot(q) < 0) back = -back;
    EXPECT_LT((back - q).norm(), 1e-12);

    // gradient of <G, R(q/|q|)> against central differences on an unnormalized q
    std::normal_distribution<double> n(0.0, 1.0);
    Mat3 G;
    for (int k = 0; k < 9; ++k) G(k / 3, k % 3) = n(rng);
    const Vec4 q2 = 1.7 * q;
    const Vec4 g = quaternion_gradient(q2, G);
    for (int k = 0; k < 4; ++k) {
      Vec4 qp = q2, qm = q2;
      qp[k] += 1e-6;
      qm[k] -= 1e-6;
      const double fd = ((G.array() * quaternion_to_rotation(qp).array()).sum() -
                         (G.array() * quaternion_to_rotation(qm).array()).sum()) /
                        2e-6;
      EXPECT_NEAR(g[k], fd, 1e-7);
    }
  }
}

TEST(Rotation, AngleOfRotvec) {
  const Mat3 R = rotation_from_rotvec(Vec3(0, 0.3, 0));
  EXPECT_NEAR(rotation_angle(Mat3::Identity(), R), 0.3, 1e-15);
  EXPECT_NEAR(rotation_angle(R, R), 0.0, 1e-15);
  EXPECT_NEAR(rotation_angle(Mat3::Identity(), rotation_from_rotvec(Vec3(1e-9, 0, 0))), 1e-9, 1e-20);
}

TEST(Intrinsics, Validation) {
  EXPECT_THROW((CameraIntrinsics{0.0, 1.0, 0, 0, 1, 1}.validate()), Error);
  EXPECT_THROW((CameraIntrinsics{1.0, 1.0, 0, 0, 0, 1}.validate()), Error);
  EXPECT_NO_THROW((CameraIntrinsics{1.0, 1.0, 0, 0, 1, 1}.validate()));
  CameraPose bad;
  bad.R(0, 0) = -1.0;  // reflection
  EXPECT_THROW(bad.validate(), Error);
}
