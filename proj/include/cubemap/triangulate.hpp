#pragma once

#include <cmath>
#include <numbers>

#include "cubemap/geometry.hpp"

namespace cubemap {

enum class TriangulationStatus { kOk, kBehindCamera, kLowParallax, kIllConditioned };

struct TriangulationOptions {
  double min_parallax_rad = 0.5 * std::numbers::pi / 180.0;
};

struct TriangulationResult {
  Vec3 point = Vec3::Zero();  // frame-1 coordinates
  double depth1 = 0.0;
  double depth2 = 0.0;
  double parallax = 0.0;  // radians
  TriangulationStatus status = TriangulationStatus::kIllConditioned;

  bool ok() const { return status == TriangulationStatus::kOk; }
};

// Midpoint of the shortest segment between the two viewing rays. T21 maps
// frame-1 coordinates into frame 2. Depths are signed projections onto the
// observed bearings, so a point seen on a side face is "in front" even with
// negative body z.
inline TriangulationResult Triangulate(const Vec3& r1, const Vec3& r2, const Se3Pose& T21,
                                       const TriangulationOptions& options = {}) {
  TriangulationResult result;
  const Mat3 Rt = T21.rotation.transpose();
  const Vec3 d1 = r1;
  const Vec3 d2 = Rt * r2;
  const Vec3 c2 = -Rt * T21.translation;

  const double sin_parallax = d1.cross(d2).norm();
  result.parallax = std::atan2(sin_parallax, d1.dot(d2));
  if (sin_parallax < 1e-12) {
    return result;
  }

  const double b = d1.dot(d2);
  const double p = d1.dot(c2);
  const double q = d2.dot(c2);
  const double denom = d1.squaredNorm() * d2.squaredNorm() - b * b;
  const double lambda2 = (b * p - d1.squaredNorm() * q) / denom;
  const double lambda1 = (p * d2.squaredNorm() - b * q) / denom;

  result.point = 0.5 * (lambda1 * d1 + c2 + lambda2 * d2);
  result.depth1 = result.point.dot(r1);
  result.depth2 = (T21 * result.point).dot(r2);

  if (result.depth1 <= 0.0 || result.depth2 <= 0.0) {
    result.status = TriangulationStatus::kBehindCamera;
  } else if (result.parallax < options.min_parallax_rad) {
    result.status = TriangulationStatus::kLowParallax;
  } else {
    result.status = TriangulationStatus::kOk;
  }
  return result;
}

}  // namespace cubemap
