#pragma once

#include <algorithm>
#include <cmath>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace cubemap {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;

inline Mat3 Skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return m;
}

inline Mat3 RotX(double angle) {
  return Eigen::AngleAxisd(angle, Vec3::UnitX()).toRotationMatrix();
}
inline Mat3 RotY(double angle) {
  return Eigen::AngleAxisd(angle, Vec3::UnitY()).toRotationMatrix();
}
inline Mat3 RotZ(double angle) {
  return Eigen::AngleAxisd(angle, Vec3::UnitZ()).toRotationMatrix();
}

// Rodrigues' formula.
inline Mat3 So3Exp(const Vec3& phi) {
  const double angle = phi.norm();
  if (angle < 1e-12) {
    return Mat3::Identity() + Skew(phi);
  }
  return Eigen::AngleAxisd(angle, phi / angle).toRotationMatrix();
}

inline Vec3 So3Log(const Mat3& rotation) {
  const Eigen::AngleAxisd aa(rotation);
  return aa.angle() * aa.axis();
}

// Left Jacobian of SO(3).
inline Mat3 So3LeftJacobian(const Vec3& phi) {
  const double angle = phi.norm();
  const Mat3 phi_hat = Skew(phi);
  if (angle < 1e-6) {
    return Mat3::Identity() + 0.5 * phi_hat + phi_hat * phi_hat / 6.0;
  }
  const double a2 = angle * angle;
  return Mat3::Identity() + (1.0 - std::cos(angle)) / a2 * phi_hat +
         (angle - std::sin(angle)) / (a2 * angle) * phi_hat * phi_hat;
}

// Angle of the relative rotation a^T b, radians.
inline double RotationAngle(const Mat3& a, const Mat3& b) {
  return Eigen::AngleAxisd(Mat3(a.transpose() * b)).angle();
}

inline double AngleBetween(const Vec3& a, const Vec3& b) {
  return std::atan2(a.cross(b).norm(), a.dot(b));
}

/// Tangent-space increment xi = (phi, rho), rotation block first.
struct Se3Tangent {
  Vec3 phi = Vec3::Zero();
  Vec3 rho = Vec3::Zero();

  static Se3Tangent FromVector(const Vec6& xi) {
    return {xi.head<3>(), xi.tail<3>()};
  }
  Vec6 ToVector() const {
    Vec6 xi;
    xi << phi, rho;
    return xi;
  }
};

/// Rigid transform x_to = rotation * x_from + translation. Used as T_BW
/// (world to body) in the optimizer and as camera-to-world in trajectories.
struct Se3Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static Se3Pose Identity() { return {}; }

  Vec3 operator*(const Vec3& p) const { return rotation * p + translation; }

  Se3Pose operator*(const Se3Pose& other) const {
    return {rotation * other.rotation, rotation * other.translation + translation};
  }

  Se3Pose Inverse() const {
    const Mat3 rt = rotation.transpose();
    return {rt, -rt * translation};
  }

  static Se3Pose Exp(const Se3Tangent& xi) {
    return {So3Exp(xi.phi), So3LeftJacobian(xi.phi) * xi.rho};
  }

  // Rotation re-projected onto SO(3); products of many poses drift off it.
  Se3Pose Normalized() const {
    return {Eigen::Quaterniond(rotation).normalized().toRotationMatrix(), translation};
  }

  // Left-multiplicative update exp(xi^) * this.
  Se3Pose Retract(const Se3Tangent& xi) const { return (Exp(xi) * *this).Normalized(); }

  bool IsValid(double tol = 1e-9) const {
    return (rotation.transpose() * rotation - Mat3::Identity()).norm() < tol &&
           std::abs(rotation.determinant() - 1.0) < tol &&
           translation.allFinite();
  }
};

}  // namespace cubemap
