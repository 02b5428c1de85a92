#include "geosplat/geometry.hpp"

#include <algorithm>
#include <cmath>

#include "geosplat/error.hpp"

namespace geosplat {

Mat3 CameraIntrinsics::matrix() const {
  Mat3 K;
  K << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
  return K;
}

Mat3 CameraIntrinsics::inverse() const {
  Mat3 Ki;
  Ki << 1.0 / fx, 0.0, -cx / fx, 0.0, 1.0 / fy, -cy / fy, 0.0, 0.0, 1.0;
  return Ki;
}

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw Error(ErrorCode::InvalidArgument, "focal lengths must be positive");
  if (width < 1 || height < 1) throw Error(ErrorCode::InvalidArgument, "image size must be at least 1x1");
}

void CameraPose::validate() const {
  const double orth = (R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (!(orth <= 1e-9) || std::abs(R.determinant() - 1.0) > 1e-9) {
    throw Error(ErrorCode::InvalidArgument, "pose rotation is not a proper rotation");
  }
  if (!t.allFinite()) throw Error(ErrorCode::InvalidArgument, "camera center is not finite");
}

double EpipolarLine::distance(const Vec2& p) const {
  return std::abs(residual(p)) / std::hypot(a, b);
}

Vec2 project_camera_point(const Vec3& xc, const CameraIntrinsics& K) {
  return {K.fx * xc.x() / xc.z() + K.cx, K.fy * xc.y() / xc.z() + K.cy};
}

Vec2 project(const Vec3& X, const CameraIntrinsics& K, const CameraPose& pose) {
  const Vec3 xc = pose.to_camera(X);
  if (!(xc.z() > kMinProjectDepth)) {
    throw Error(ErrorCode::PointBehindCamera, "camera depth " + std::to_string(xc.z()));
  }
  return project_camera_point(xc, K);
}

Vec2 project(const Vec3& X, const Camera& camera) {
  return project(X, camera.intrinsics, camera.pose);
}

Mat23 projection_jacobian(const Vec3& xc, const CameraIntrinsics& K) {
  const double iz = 1.0 / xc.z();
  const double iz2 = iz * iz;
  Mat23 J;
  J << K.fx * iz, 0.0, -K.fx * xc.x() * iz2, 0.0, K.fy * iz, -K.fy * xc.y() * iz2;
  return J;
}

Vec3 pixel_direction(const Vec2& p, const CameraIntrinsics& K) {
  return Vec3((p.x() - K.cx) / K.fx, (p.y() - K.cy) / K.fy, 1.0).normalized();
}

Ray pixel_to_ray(const Vec2& p, const CameraIntrinsics& K, const CameraPose& pose) {
  return Ray{pose.t, pose.R * pixel_direction(p, K)};
}

Mat3 skew(const Vec3& v) {
  Mat3 S;
  S << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return S;
}

Mat3 fundamental_matrix(const CameraIntrinsics& K_i, const CameraPose& pose_i,
                        const CameraIntrinsics& K_j, const CameraPose& pose_j) {
  if ((pose_i.t - pose_j.t).norm() <= 1e-9) {
    throw Error(ErrorCode::CoincidentCameras, "camera centers coincide");
  }
  // camera-j-from-camera-i: x_j = R_rel x_i + t_rel
  const Mat3 R_rel = pose_j.R.transpose() * pose_i.R;
  const Vec3 t_rel = pose_j.R.transpose() * (pose_i.t - pose_j.t);
  return K_j.inverse().transpose() * skew(t_rel) * R_rel * K_i.inverse();
}

EpipolarLine epipolar_line(const Vec2& p_i, const Mat3& F) {
  const Vec3 l = F * Vec3(p_i.x(), p_i.y(), 1.0);
  if (l.x() * l.x() + l.y() * l.y() <= 1e-18) {
    throw Error(ErrorCode::DegenerateLine, "pixel coincides with the epipole");
  }
  return {l.x(), l.y(), l.z()};
}

EpipoleGeometry epipole_and_baseline(const CameraPose& pose_i, const CameraPose& pose_j,
                                     const CameraIntrinsics& K_j) {
  const double baseline = (pose_i.t - pose_j.t).norm();
  if (baseline <= 1e-9) throw Error(ErrorCode::CoincidentCameras, "camera centers coincide");
  const Vec3 oc = pose_j.to_camera(pose_i.t);
  if (!(oc.z() > kMinProjectDepth)) {
    throw Error(ErrorCode::EpipoleAtInfinity, "other camera center is not in front of the view");
  }
  const Vec3 plane_point = oc / oc.z();
  return {project_camera_point(oc, K_j), baseline, plane_point.norm()};
}

Vec4 normalize_quaternion(const Vec4& q) {
  const double n = q.norm();
  if (!(n > 0.0)) return Vec4(1.0, 0.0, 0.0, 0.0);
  return q / n;
}

Mat3 quaternion_to_rotation(const Vec4& q_raw) {
  const Vec4 q = normalize_quaternion(q_raw);
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3 R;
  R << 1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),
       2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),
       2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y);
  return R;
}

Vec4 rotation_to_quaternion(const Mat3& R) {
  Eigen::Quaterniond q(R);
  q.normalize();
  Vec4 out(q.w(), q.x(), q.y(), q.z());
  if (out[0] < 0.0) out = -out;
  return out;
}

Vec4 quaternion_gradient(const Vec4& q_raw, const Mat3& G) {
  const double n = q_raw.norm();
  const Vec4 q = q_raw / n;
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3 dw, dx, dy, dz;
  dw << 0.0, -z, y, z, 0.0, -x, -y, x, 0.0;
  dx << 0.0, y, z, y, -2.0 * x, -w, z, w, -2.0 * x;
  dy << -2.0 * y, x, w, x, 0.0, z, -w, z, -2.0 * y;
  dz << -2.0 * z, -w, x, w, -2.0 * z, y, x, y, 0.0;
  const Vec4 g_unit(2.0 * (G.cwiseProduct(dw)).sum(), 2.0 * (G.cwiseProduct(dx)).sum(),
                    2.0 * (G.cwiseProduct(dy)).sum(), 2.0 * (G.cwiseProduct(dz)).sum());
  return (g_unit - q * q.dot(g_unit)) / n;
}

Mat3 rotation_from_rotvec(const Vec3& rotvec) {
  const double angle = rotvec.norm();
  if (angle == 0.0) return Mat3::Identity();
  return Eigen::AngleAxisd(angle, rotvec / angle).toRotationMatrix();
}

double rotation_angle(const Mat3& A, const Mat3& B) {
  const double c = std::clamp(((A.transpose() * B).trace() - 1.0) / 2.0, -1.0, 1.0);
  // acos loses precision near zero; recover from the skew part instead
  const Mat3 D = A.transpose() * B;
  const double s = 0.5 * Vec3(D(2, 1) - D(1, 2), D(0, 2) - D(2, 0), D(1, 0) - D(0, 1)).norm();
  return std::atan2(s, c);
}

}  // namespace geosplat
