#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/SVD>

#include "cubemap/error.hpp"
#include "cubemap/geometry.hpp"

namespace cubemap {

struct StampedPose {
  double timestamp = 0.0;  // seconds
  Se3Pose pose;            // camera-to-world
};

// Timestamped camera-to-world poses with strictly increasing stamps.
struct Trajectory {
  std::vector<StampedPose> entries;

  std::size_t size() const { return entries.size(); }
  Vec3 Position(std::size_t i) const { return entries[i].pose.translation; }

  void Validate() const {
    if (entries.empty()) throw Error(ErrorKind::kValidation, "trajectory is empty");
    for (std::size_t i = 1; i < entries.size(); ++i) {
      if (!(entries[i].timestamp > entries[i - 1].timestamp)) {
        throw Error(ErrorKind::kValidation,
                    "timestamps not strictly increasing at entry " + std::to_string(i));
      }
    }
  }
};

// x_gt = scale * rotation * x_est + translation.
struct Sim3Transform {
  double scale = 1.0;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 operator*(const Vec3& x) const { return scale * (rotation * x) + translation; }

  Sim3Transform operator*(const Sim3Transform& o) const {
    return {scale * o.scale, rotation * o.rotation, scale * (rotation * o.translation) + translation};
  }

  Sim3Transform Inverse() const {
    const Mat3 rt = rotation.transpose();
    return {1.0 / scale, rt, -(rt * translation) / scale};
  }
};

inline constexpr double kAssociationWindow = 0.02;  // seconds

// Nearest-timestamp pairs (est index, gt index) within the window, each
// entry used at most once. Candidate pairs are taken closest-first.
inline std::vector<std::pair<std::size_t, std::size_t>> AssociateTimestamps(
    const Trajectory& est, const Trajectory& gt, double window = kAssociationWindow) {
  struct Candidate {
    double dt;
    std::size_t i;
    std::size_t j;
  };
  std::vector<Candidate> candidates;
  for (std::size_t i = 0; i < est.size(); ++i) {
    const double t = est.entries[i].timestamp;
    auto it = std::lower_bound(gt.entries.begin(), gt.entries.end(), t - window,
                               [](const StampedPose& p, double v) { return p.timestamp < v; });
    for (; it != gt.entries.end() && it->timestamp <= t + window; ++it) {
      candidates.push_back({std::abs(it->timestamp - t), i,
                            static_cast<std::size_t>(it - gt.entries.begin())});
    }
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const Candidate& a, const Candidate& b) { return a.dt < b.dt; });
  std::vector<bool> used_est(est.size(), false);
  std::vector<bool> used_gt(gt.size(), false);
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (const auto& c : candidates) {
    if (used_est[c.i] || used_gt[c.j]) continue;
    used_est[c.i] = used_gt[c.j] = true;
    pairs.emplace_back(c.i, c.j);
  }
  std::sort(pairs.begin(), pairs.end());
  return pairs;
}

// Closed-form least-squares similarity mapping src onto dst (centroids,
// cross-covariance SVD with reflection guard, trace-ratio scale).
inline Sim3Transform AlignPointSets(const std::vector<Vec3>& src, const std::vector<Vec3>& dst) {
  if (src.size() != dst.size() || src.size() < 3) {
    throw Error(ErrorKind::kValidation, "alignment needs at least 3 associated positions");
  }
  const double n = static_cast<double>(src.size());
  Vec3 mu_src = Vec3::Zero();
  Vec3 mu_dst = Vec3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) {
    mu_src += src[i];
    mu_dst += dst[i];
  }
  mu_src /= n;
  mu_dst /= n;
  Mat3 cov = Mat3::Zero();
  double var_src = 0.0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    const Vec3 a = src[i] - mu_src;
    cov += (dst[i] - mu_dst) * a.transpose();
    var_src += a.squaredNorm();
  }
  cov /= n;
  var_src /= n;

  const Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();
  if (var_src < 1e-18 || sv(1) < 1e-12 * std::max(1.0, sv(0))) {
    throw Error(ErrorKind::kDegenerate, "rank-deficient alignment (collinear or zero variance)");
  }
  Mat3 S = Mat3::Identity();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) S(2, 2) = -1.0;
  Sim3Transform t;
  t.rotation = svd.matrixU() * S * svd.matrixV().transpose();
  t.scale = (sv.asDiagonal() * S).trace() / var_src;
  t.translation = mu_dst - t.scale * t.rotation * mu_src;
  return t;
}

inline Sim3Transform AlignSim3(const Trajectory& est, const Trajectory& gt) {
  const auto pairs = AssociateTimestamps(est, gt);
  if (pairs.size() < 3) {
    throw Error(ErrorKind::kValidation, "fewer than 3 timestamp associations");
  }
  std::vector<Vec3> src;
  std::vector<Vec3> dst;
  for (const auto& [i, j] : pairs) {
    src.push_back(est.Position(i));
    dst.push_back(gt.Position(j));
  }
  return AlignPointSets(src, dst);
}

// Position-only absolute trajectory error after 7-DoF alignment.
inline double AteRmse(const Trajectory& est, const Trajectory& gt) {
  const auto pairs = AssociateTimestamps(est, gt);
  const Sim3Transform s = AlignSim3(est, gt);
  double sum = 0.0;
  for (const auto& [i, j] : pairs) {
    sum += (gt.Position(j) - s * est.Position(i)).squaredNorm();
  }
  return std::sqrt(sum / static_cast<double>(pairs.size()));
}

////////////////////////////////////////////////////////////////////////////////
// TUM text format: "timestamp tx ty tz qx qy qz qw"
////////////////////////////////////////////////////////////////////////////////

inline Trajectory ParseTrajectory(std::istream& in) {
  Trajectory traj;
  std::string line;
  int line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ss(line);
    double v[8];
    for (double& x : v) {
      if (!(ss >> x)) {
        throw Error(ErrorKind::kParse, "line " + std::to_string(line_number) +
                                           ": expected 8 numbers");
      }
    }
    std::string extra;
    if (ss >> extra) {
      throw Error(ErrorKind::kParse, "line " + std::to_string(line_number) +
                                         ": trailing data '" + extra + "'");
    }
    Eigen::Quaterniond q(v[7], v[4], v[5], v[6]);
    const double qn = q.norm();
    if (std::abs(qn - 1.0) > 1e-3) {
      throw Error(ErrorKind::kParse, "line " + std::to_string(line_number) +
                                         ": quaternion not normalized");
    }
    q.coeffs() /= qn;
    traj.entries.push_back({v[0], {q.toRotationMatrix(), Vec3(v[1], v[2], v[3])}});
  }
  traj.Validate();
  return traj;
}

inline Trajectory ReadTrajectory(const std::string& path) {
  std::ifstream file(path);
  if (!file) throw Error(ErrorKind::kIo, "cannot open trajectory " + path);
  return ParseTrajectory(file);
}

inline void WriteTrajectory(std::ostream& out, const Trajectory& traj) {
  out << "# timestamp tx ty tz qx qy qz qw\n";
  out << std::setprecision(17);
  for (const auto& e : traj.entries) {
    const Eigen::Quaterniond q(e.pose.rotation);
    const Vec3& t = e.pose.translation;
    out << e.timestamp << ' ' << t.x() << ' ' << t.y() << ' ' << t.z() << ' ' << q.x() << ' '
        << q.y() << ' ' << q.z() << ' ' << q.w() << '\n';
  }
}

inline void WriteTrajectory(const std::string& path, const Trajectory& traj) {
  std::ofstream file(path);
  if (!file) throw Error(ErrorKind::kIo, "cannot write trajectory " + path);
  WriteTrajectory(file, traj);
}

}  // namespace cubemap
