#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include <Eigen/SVD>

#include "cubemap/calib.hpp"
#include "cubemap/error.hpp"
#include "cubemap/geometry.hpp"
#include "cubemap/triangulate.hpp"

namespace cubemap {

// Essential matrix with r2^T E r1 = 0 and E = [t]x R for x2 = R x1 + t.
struct EssentialModel {
  Mat3 E = Mat3::Zero();
};

struct Correspondence {
  Vec3 r1 = Vec3::UnitZ();  // body-frame bearing, frame 1
  Vec3 r2 = Vec3::UnitZ();  // body-frame bearing, frame 2
  FacePoint fp1;
  FacePoint fp2;
};

inline Correspondence MakeCorrespondence(const CubemapCamera& cam, const FacePoint& fp1,
                                         const FacePoint& fp2) {
  return {cam.Unproject(fp1), cam.Unproject(fp2), fp1, fp2};
}

// Singular values forced to (1, 1, 0); Frobenius norm sqrt(2).
inline Mat3 ProjectToEssentialManifold(const Mat3& m) {
  const Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return svd.matrixU() * Eigen::Vector3d(1.0, 1.0, 0.0).asDiagonal() *
         svd.matrixV().transpose();
}

// Linear eight-point estimate from unit bearings (no normalization needed).
inline EssentialModel EstimateEssential8pt(std::span<const Correspondence> corrs) {
  if (corrs.size() < 8) {
    throw Error(ErrorKind::kNoModel, "eight-point estimation needs at least 8 correspondences");
  }
  Eigen::MatrixXd design(std::max<std::size_t>(corrs.size(), 9), 9);
  design.setZero();
  for (std::size_t k = 0; k < corrs.size(); ++k) {
    const Vec3& a = corrs[k].r1;
    const Vec3& b = corrs[k].r2;
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) design(static_cast<Eigen::Index>(k), i * 3 + j) = b(i) * a(j);
    }
  }
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(design, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (sv(7) - sv(8) < 1e-12 * std::max(1.0, sv(0))) {
    throw Error(ErrorKind::kDegenerate, "design matrix has a multi-dimensional null space");
  }
  const Eigen::Matrix<double, 9, 1> e = svd.matrixV().col(8);
  Mat3 E;
  E << e(0), e(1), e(2), e(3), e(4), e(5), e(6), e(7), e(8);
  return {ProjectToEssentialManifold(E)};
}

// Signed sine of the angle between r2 and the epipolar plane with normal E r1.
inline double EpipolarResidual(const Mat3& E, const Vec3& r1, const Vec3& r2) {
  const Vec3 n = E * r1;
  const double norm = n.norm();
  if (norm < 1e-12) {
    throw Error(ErrorKind::kDegenerate, "bearing coincides with the epipole");
  }
  return r2.dot(n) / norm;
}

/// Intermediate quantities of the spherical inlier bound. Lengths are in
/// face pixels.
struct ThresholdGeometry {
  double th = 1.0;
  double f = 0.0;
  Vec3 n_face = Vec3::Zero();
  Vec3 e_dir = Vec3::Zero();
  double len_OO = 0.0;
  double len_PO = 0.0;
  double tan_phi = 0.0;
  double tan_phi_theta = 0.0;
  double tan_theta = 0.0;
  double sin_theta = 0.0;
};

namespace internal {

inline std::optional<ThresholdGeometry> TryInlierThreshold(const CubemapCamera& cam,
                                                           const FacePoint& fp,
                                                           const Vec3& n_body, double th) {
  ThresholdGeometry g;
  g.th = th;
  g.f = cam.focal();
  const double n_norm = n_body.norm();
  if (!(n_norm > 0.0)) return std::nullopt;
  g.n_face = cam.Rotation(fp.face) * (n_body / n_norm);
  // Epipolar line direction on the face: intersection of the epipolar plane
  // with the image plane (normal +z).
  g.e_dir = g.n_face.cross(Vec3::UnitZ());
  const double e_norm = g.e_dir.norm();
  if (e_norm < 1e-9) return std::nullopt;

  const Vec3 op(fp.pixel.x() - cam.principal(), fp.pixel.y() - cam.principal(), 0.0);
  g.len_OO = std::abs(g.e_dir.dot(op)) / e_norm;
  // Same as sqrt(|OP|^2 - OO'^2) without the cancellation.
  g.len_PO = std::abs(g.e_dir.cross(op).z()) / e_norm;
  const double len_CO = std::sqrt(g.f * g.f + g.len_OO * g.len_OO);
  g.tan_phi_theta = (th + g.len_PO) / len_CO;
  g.tan_phi = g.len_PO / len_CO;
  g.tan_theta = (g.tan_phi_theta - g.tan_phi) / (1.0 + g.tan_phi_theta * g.tan_phi);
  g.sin_theta = g.tan_theta / std::sqrt(g.tan_theta * g.tan_theta + 1.0);
  return g;
}

}  // namespace internal

// Maps a band of th pixels around the epipolar line at face point fp onto
// the unit sphere; returns sin(theta) together with the construction.
inline ThresholdGeometry InlierThresholdSinTheta(const CubemapCamera& cam, const FacePoint& fp,
                                                 const Vec3& n_body, double th) {
  auto g = internal::TryInlierThreshold(cam, fp, n_body, th);
  if (!g) {
    throw Error(ErrorKind::kDegenerate, "epipolar plane parallel to the face plane");
  }
  return *g;
}

// Lower bound used when the epipolar plane is parallel to the face.
inline double MinSinTheta(const CubemapCamera& cam, double th) {
  return th / std::sqrt(th * th + cam.focal() * cam.focal());
}

inline double SinThetaOrFallback(const CubemapCamera& cam, const FacePoint& fp,
                                 const Vec3& n_body, double th) {
  const auto g = internal::TryInlierThreshold(cam, fp, n_body, th);
  return g ? g->sin_theta : MinSinTheta(cam, th);
}

// Two-sided check: r2 against the plane E r1 on fp2's face, r1 against
// E^T r2 on fp1's face.
inline bool IsEpipolarInlier(const CubemapCamera& cam, const Mat3& E, const Correspondence& c,
                             double th) {
  const Vec3 n2 = E * c.r1;
  const Vec3 n1 = E.transpose() * c.r2;
  const double norm2 = n2.norm();
  const double norm1 = n1.norm();
  if (norm2 < 1e-12 || norm1 < 1e-12) return false;
  if (std::abs(c.r2.dot(n2)) / norm2 > SinThetaOrFallback(cam, c.fp2, n2, th)) return false;
  return std::abs(c.r1.dot(n1)) / norm1 <= SinThetaOrFallback(cam, c.fp1, n1, th);
}

struct RansacConfig {
  static constexpr int kSampleSize = 8;
  int max_iterations = 1000;
  double confidence = 0.999;
  double th = 1.0;  // pixels
  std::uint64_t seed = 0;

  void Validate() const {
    if (max_iterations < 1) {
      throw Error(ErrorKind::kConfiguration, "max_iterations must be >= 1");
    }
    if (!(confidence > 0.0 && confidence < 1.0)) {
      throw Error(ErrorKind::kConfiguration, "confidence must be in (0, 1)");
    }
    if (!(th > 0.0)) throw Error(ErrorKind::kConfiguration, "th must be positive");
  }
};

struct RansacResult {
  EssentialModel model;
  std::vector<bool> inliers;
  int num_inliers = 0;
  int iterations = 0;
};

inline int AdaptiveIterationBound(double inlier_ratio, double confidence, int max_iterations) {
  if (inlier_ratio >= 1.0) return 1;
  const double good_sample = std::pow(inlier_ratio, RansacConfig::kSampleSize);
  if (good_sample <= 0.0) return max_iterations;
  const double n = std::log(1.0 - confidence) / std::log(1.0 - good_sample);
  if (!std::isfinite(n) || n >= max_iterations) return max_iterations;
  return std::max(1, static_cast<int>(std::ceil(n)));
}

namespace internal {

inline int CountInliers(const CubemapCamera& cam, const Mat3& E,
                        std::span<const Correspondence> corrs, double th,
                        std::vector<bool>* mask) {
  int count = 0;
  if (mask) mask->assign(corrs.size(), false);
  for (std::size_t i = 0; i < corrs.size(); ++i) {
    if (IsEpipolarInlier(cam, E, corrs[i], th)) {
      ++count;
      if (mask) (*mask)[i] = true;
    }
  }
  return count;
}

inline std::vector<Correspondence> Select(std::span<const Correspondence> corrs,
                                          const std::vector<bool>& mask) {
  std::vector<Correspondence> out;
  for (std::size_t i = 0; i < corrs.size(); ++i) {
    if (mask[i]) out.push_back(corrs[i]);
  }
  return out;
}

}  // namespace internal

// Hypothesize-and-verify over 8-point samples with the per-point spherical
// threshold. The best hypothesis (first index wins ties) is re-estimated on
// its inliers.
inline RansacResult RansacEssential(const CubemapCamera& cam,
                                    std::span<const Correspondence> corrs,
                                    const RansacConfig& cfg) {
  cfg.Validate();
  const int n = static_cast<int>(corrs.size());
  if (n < RansacConfig::kSampleSize) {
    throw Error(ErrorKind::kNoModel, "fewer than 8 correspondences");
  }

  std::mt19937_64 rng(cfg.seed);
  std::vector<int> indices(n);
  std::iota(indices.begin(), indices.end(), 0);
  std::vector<Correspondence> sample(RansacConfig::kSampleSize);

  RansacResult result;
  int best_count = -1;
  Mat3 best_E = Mat3::Zero();
  int bound = cfg.max_iterations;
  int iter = 0;
  for (; iter < bound; ++iter) {
    // Partial Fisher-Yates draw of 8 distinct indices.
    for (int k = 0; k < RansacConfig::kSampleSize; ++k) {
      std::uniform_int_distribution<int> pick(k, n - 1);
      std::swap(indices[k], indices[pick(rng)]);
      sample[k] = corrs[indices[k]];
    }
    Mat3 E;
    try {
      E = EstimateEssential8pt(sample).E;
    } catch (const Error&) {
      continue;
    }
    const int count = internal::CountInliers(cam, E, corrs, cfg.th, nullptr);
    if (count > best_count) {
      best_count = count;
      best_E = E;
      bound = std::min(cfg.max_iterations,
                       AdaptiveIterationBound(static_cast<double>(count) / n,
                                              cfg.confidence, cfg.max_iterations));
    }
  }
  result.iterations = iter;
  if (best_count < RansacConfig::kSampleSize) {
    throw Error(ErrorKind::kNoModel, "no hypothesis reached 8 inliers");
  }

  std::vector<bool> mask;
  internal::CountInliers(cam, best_E, corrs, cfg.th, &mask);
  result.model.E = best_E;
  result.num_inliers = best_count;
  result.inliers = mask;
  // Re-estimate on the consensus set while it does not shrink.
  for (int round = 0; round < 3; ++round) {
    const auto subset = internal::Select(corrs, mask);
    Mat3 refined;
    try {
      refined = EstimateEssential8pt(subset).E;
    } catch (const Error&) {
      break;
    }
    std::vector<bool> refined_mask;
    const int count = internal::CountInliers(cam, refined, corrs, cfg.th, &refined_mask);
    if (count < result.num_inliers) break;
    result.model.E = refined;
    result.num_inliers = count;
    result.inliers = refined_mask;
    if (refined_mask == mask) break;
    mask = std::move(refined_mask);
  }
  return result;
}

struct RelativePose {
  Mat3 rotation = Mat3::Identity();  // x2 = rotation * x1 + translation
  Vec3 translation = Vec3::UnitX();  // unit norm

  Se3Pose AsPose() const { return {rotation, translation}; }
};

// Picks the (R, t) candidate with the most points in front of both
// cameras. Needs a strict majority of the given correspondences.
inline RelativePose DecomposeEssential(const Mat3& E, std::span<const Correspondence> corrs) {
  if (corrs.empty()) {
    throw Error(ErrorKind::kAmbiguous, "no correspondences for the cheirality test");
  }
  const Eigen::JacobiSVD<Mat3> svd(E, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 U = svd.matrixU();
  Mat3 V = svd.matrixV();
  if (U.determinant() < 0) U = -U;
  if (V.determinant() < 0) V = -V;
  Mat3 W;
  W << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  const Mat3 Ra = U * W * V.transpose();
  const Mat3 Rb = U * W.transpose() * V.transpose();
  const Vec3 t = U.col(2).normalized();
  const std::array<RelativePose, 4> candidates = {
      RelativePose{Ra, t}, RelativePose{Ra, -t}, RelativePose{Rb, t}, RelativePose{Rb, -t}};

  int best = -1;
  int best_count = -1;
  for (int k = 0; k < 4; ++k) {
    int count = 0;
    const Se3Pose pose = candidates[k].AsPose();
    for (const auto& c : corrs) {
      const auto tri = Triangulate(c.r1, c.r2, pose);
      if (tri.status != TriangulationStatus::kIllConditioned && tri.depth1 > 0.0 &&
          tri.depth2 > 0.0) {
        ++count;
      }
    }
    if (count > best_count) {
      best_count = count;
      best = k;
    }
  }
  if (2 * best_count <= static_cast<int>(corrs.size())) {
    throw Error(ErrorKind::kAmbiguous, "no motion candidate has majority cheirality support");
  }
  return candidates[best];
}

}  // namespace cubemap
