#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace geosplat {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat23 = Eigen::Matrix<double, 2, 3>;

/// Pinhole intrinsics in pixels. Pixel (x, y) has its center at integer coordinates.
struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  Mat3 matrix() const;
  Mat3 inverse() const;
  void validate() const;
};

/// World-from-camera rotation and camera center. A world point X has
/// camera coordinates R^T (X - t).
struct CameraPose {
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();

  Vec3 to_camera(const Vec3& X) const { return R.transpose() * (X - t); }
  Vec3 to_world(const Vec3& x) const { return R * x + t; }
  void validate() const;
};

struct Camera {
  int id = 0;
  CameraIntrinsics intrinsics;
  CameraPose pose;
};

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();

  Vec3 at(double s) const { return origin + s * direction; }
};

/// a*x + b*y + c = 0 in target image pixels; not normalized.
struct EpipolarLine {
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;

  double residual(const Vec2& p) const { return a * p.x() + b * p.y() + c; }
  double distance(const Vec2& p) const;
};

struct EpipoleGeometry {
  Vec2 epipole;     // O_i projected into view j, pixels
  double baseline;  // |O_i - O_j|
  double m;         // |O_j - o_ij| with o_ij embedded on camera j's z = 1 plane
};

// Below this camera-frame depth a point counts as behind the camera.
inline constexpr double kMinProjectDepth = 1e-9;

/// pi(K R^T (X - t)). Throws PointBehindCamera when the camera depth is <= 1e-9.
Vec2 project(const Vec3& X, const CameraIntrinsics& K, const CameraPose& pose);
Vec2 project(const Vec3& X, const Camera& camera);

/// Perspective division of a camera-frame point; no depth check.
Vec2 project_camera_point(const Vec3& xc, const CameraIntrinsics& K);

/// d(u, v) / d(camera-frame point).
Mat23 projection_jacobian(const Vec3& xc, const CameraIntrinsics& K);

/// Unit-length camera-frame direction through pixel p.
Vec3 pixel_direction(const Vec2& p, const CameraIntrinsics& K);

Ray pixel_to_ray(const Vec2& p, const CameraIntrinsics& K, const CameraPose& pose);

/// F with p_j^T F p_i = 0 for corresponding pixels. Throws CoincidentCameras.
Mat3 fundamental_matrix(const CameraIntrinsics& K_i, const CameraPose& pose_i,
                        const CameraIntrinsics& K_j, const CameraPose& pose_j);

/// Coefficients F * (x, y, 1). Throws DegenerateLine when p_i is the epipole.
EpipolarLine epipolar_line(const Vec2& p_i, const Mat3& F);

/// Throws CoincidentCameras or EpipoleAtInfinity (O_i not in front of camera j).
EpipoleGeometry epipole_and_baseline(const CameraPose& pose_i, const CameraPose& pose_j,
                                     const CameraIntrinsics& K_j);

Mat3 skew(const Vec3& v);

// Quaternions are stored (w, x, y, z).
Mat3 quaternion_to_rotation(const Vec4& q);
Vec4 rotation_to_quaternion(const Mat3& R);
Vec4 normalize_quaternion(const Vec4& q);

/// Pulls dL/dR back to the raw (possibly unnormalized) quaternion q, where R = R(q / |q|).
Vec4 quaternion_gradient(const Vec4& q, const Mat3& dR);

Mat3 rotation_from_rotvec(const Vec3& rotvec);
/// Geodesic angle between two rotations, radians.
double rotation_angle(const Mat3& A, const Mat3& B);

}  // namespace geosplat
