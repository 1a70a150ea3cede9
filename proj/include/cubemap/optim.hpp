#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/LU>

#include "cubemap/calib.hpp"
#include "cubemap/error.hpp"
#include "cubemap/geometry.hpp"

namespace cubemap {

using Mat26 = Eigen::Matrix<double, 2, 6>;
using Mat23 = Eigen::Matrix<double, 2, 3>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

enum class MetricKind { kRu, kRa1, kRa2, kRt, kRf };

inline constexpr std::array<MetricKind, 5> kAllMetrics = {
    MetricKind::kRu, MetricKind::kRa1, MetricKind::kRa2, MetricKind::kRt, MetricKind::kRf};

inline const char* MetricName(MetricKind kind) {
  switch (kind) {
    case MetricKind::kRu: return "r_u";
    case MetricKind::kRa1: return "r_a1";
    case MetricKind::kRa2: return "r_a2";
    case MetricKind::kRt: return "r_t";
    case MetricKind::kRf: return "r_f";
  }
  return "?";
}

inline MetricKind ParseMetric(std::string_view name) {
  for (MetricKind k : kAllMetrics) {
    if (name == MetricName(k)) return k;
  }
  throw Error(ErrorKind::kParse, "unknown metric '" + std::string(name) + "'");
}

struct CubemapObservation {
  int point_id = 0;
  int pose_id = 0;
  FacePoint fp;
  double sigma = 1.0;  // pixels
};

////////////////////////////////////////////////////////////////////////////////
// Multi-pinhole projection: u = K R_{C_i B} T_BW P
////////////////////////////////////////////////////////////////////////////////

struct ProjectionChain {
  Vec3 p2 = Vec3::Zero();  // body frame, T_BW P
  Vec3 p1 = Vec3::Zero();  // face-camera frame, R_{C_i B} P2
  Vec2 predicted = Vec2::Zero();
};

inline ProjectionChain ProjectOnFaceChain(const CubemapCamera& cam, const Se3Pose& T_BW,
                                          const Vec3& point, Face face) {
  ProjectionChain chain;
  chain.p2 = T_BW * point;
  chain.p1 = cam.Rotation(face) * chain.p2;
  if (chain.p1.z() <= 1e-9) {
    throw Error(ErrorKind::kDegenerate, "point behind the observing face");
  }
  const double f = cam.focal();
  chain.predicted = Vec2(f * chain.p1.x() / chain.p1.z() + cam.principal(),
                         f * chain.p1.y() / chain.p1.z() + cam.principal());
  return chain;
}

// Same chain but requires the predicted face to equal the measured one.
inline ProjectionChain ProjectObservedChain(const CubemapCamera& cam, const Se3Pose& T_BW,
                                            const Vec3& point, const FacePoint& fp) {
  const Vec3 p2 = T_BW * point;
  const double norm = p2.norm();
  if (!(norm > 0.0)) throw Error(ErrorKind::kDegenerate, "point at the camera center");
  Face predicted_face;
  try {
    predicted_face = cam.FaceOf(p2 / norm);
  } catch (const Error&) {
    throw Error(ErrorKind::kCrossFace, "point predicted on an inactive face");
  }
  if (predicted_face != fp.face) {
    throw Error(ErrorKind::kCrossFace, std::string("predicted on ") + FaceName(predicted_face) +
                                           ", measured on " + FaceName(fp.face));
  }
  return ProjectOnFaceChain(cam, T_BW, point, fp.face);
}

// du/dP1 of the pinhole division.
inline Mat23 ProjectionDerivative(double f, const Vec3& p1) {
  const double iz = 1.0 / p1.z();
  Mat23 d;
  d << f * iz, 0.0, -f * p1.x() * iz * iz,
       0.0, f * iz, -f * p1.y() * iz * iz;
  return d;
}

// Residual u_measured - u_predicted, pixels.
inline Vec2 ResidualRu(const CubemapCamera& cam, const Se3Pose& T_BW, const Vec3& point,
                       const FacePoint& measured) {
  return measured.pixel - ProjectObservedChain(cam, T_BW, point, measured).predicted;
}

namespace internal {

inline Mat26 PoseJacobianFromChain(const CubemapCamera& cam, Face face,
                                   const ProjectionChain& chain) {
  Eigen::Matrix<double, 3, 6> dp2;
  dp2.leftCols<3>() = -Skew(chain.p2);
  dp2.rightCols<3>() = Mat3::Identity();
  return -ProjectionDerivative(cam.focal(), chain.p1) * cam.Rotation(face) * dp2;
}

inline Mat23 PointJacobianFromChain(const CubemapCamera& cam, Face face, const Se3Pose& T_BW,
                                    const ProjectionChain& chain) {
  return -ProjectionDerivative(cam.focal(), chain.p1) * cam.Rotation(face) * T_BW.rotation;
}

}  // namespace internal

// d(residual)/d(xi) for the left update exp(xi^) T_BW, xi = (phi, rho).
inline Mat26 JacobianPose(const CubemapCamera& cam, const Se3Pose& T_BW, const Vec3& point,
                          const FacePoint& measured) {
  const auto chain = ProjectObservedChain(cam, T_BW, point, measured);
  return internal::PoseJacobianFromChain(cam, measured.face, chain);
}

// d(residual)/d(P), world-frame point.
inline Mat23 JacobianPoint(const CubemapCamera& cam, const Se3Pose& T_BW, const Vec3& point,
                           const FacePoint& measured) {
  const auto chain = ProjectObservedChain(cam, T_BW, point, measured);
  return internal::PointJacobianFromChain(cam, measured.face, T_BW, chain);
}

////////////////////////////////////////////////////////////////////////////////
// Bearing metrics
////////////////////////////////////////////////////////////////////////////////

inline int MetricDimension(MetricKind kind) {
  switch (kind) {
    case MetricKind::kRu: return 2;
    case MetricKind::kRa1:
    case MetricKind::kRa2: return 1;
    case MetricKind::kRt:
    case MetricKind::kRf: return 3;
  }
  return 0;
}

// Bearing-space residuals. r_u is a face-pixel residual and is not defined
// here.
inline Eigen::VectorXd ResidualMetric(MetricKind kind, const Vec3& predicted,
                                      const Vec3& measured) {
  Eigen::VectorXd r(MetricDimension(kind));
  const double dot = measured.dot(predicted);
  switch (kind) {
    case MetricKind::kRa1:
      r(0) = std::acos(std::clamp(dot, -1.0, 1.0));
      break;
    case MetricKind::kRa2:
      r(0) = 1.0 - dot;
      break;
    case MetricKind::kRt:
      r = measured - predicted * dot;
      break;
    case MetricKind::kRf:
      r = measured - predicted;
      break;
    case MetricKind::kRu:
      throw Error(ErrorKind::kValidation, "r_u needs the cubemap projection, not bearings");
  }
  return r;
}

////////////////////////////////////////////////////////////////////////////////
// Robust weighting
////////////////////////////////////////////////////////////////////////////////

namespace internal {

inline double RobustCost(double squared_norm, const std::optional<double>& huber) {
  if (!huber || squared_norm <= *huber * *huber) return squared_norm;
  return 2.0 * *huber * std::sqrt(squared_norm) - *huber * *huber;
}

// IRLS weight on the squared residual.
inline double RobustWeight(double squared_norm, const std::optional<double>& huber) {
  if (!huber || squared_norm <= *huber * *huber) return 1.0;
  return *huber / std::sqrt(squared_norm);
}

}  // namespace internal

////////////////////////////////////////////////////////////////////////////////
// Pose-only optimization
////////////////////////////////////////////////////////////////////////////////

struct PoseObservation {
  Vec3 point = Vec3::Zero();  // fixed map point, world frame
  FacePoint fp;
  double sigma = 1.0;
};

struct PoseOptimizationOptions {
  MetricKind metric = MetricKind::kRu;
  std::optional<double> huber_delta;  // pixels; 2.45 is the usual choice
  int max_iterations = 100;
  double initial_lambda = 1e-4;
};

struct PoseOptimizationResult {
  Se3Pose pose;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations = 0;
  int accepted_steps = 0;
  int num_used = 0;
  bool converged = false;
  std::vector<double> accepted_costs;
};

namespace internal {

class PoseCostFunction {
 public:
  PoseCostFunction(const CubemapCamera& cam, std::span<const PoseObservation> obs,
                   const PoseOptimizationOptions& options, const Se3Pose& init)
      : cam_(cam), options_(options) {
    // Observations whose predicted face disagrees with the measured face at
    // the initial estimate are dropped for the whole solve.
    for (const auto& o : obs) {
      if (options_.metric == MetricKind::kRu) {
        try {
          ProjectObservedChain(cam_, init, o.point, o.fp);
        } catch (const Error&) {
          continue;
        }
      } else if (!((init * o.point).norm() > 0.0)) {
        continue;
      }
      used_.push_back(o);
      measured_bearings_.push_back(cam_.Unproject(o.fp));
    }
  }

  std::size_t size() const { return used_.size(); }
  int dim() const { return MetricDimension(options_.metric); }

  // Whitened residual (pixel-equivalent units for bearing metrics).
  std::optional<Eigen::VectorXd> Residual(const Se3Pose& pose, std::size_t i) const {
    const auto& o = used_[i];
    if (options_.metric == MetricKind::kRu) {
      const Vec3 p1 = cam_.Rotation(o.fp.face) * (pose * o.point);
      if (p1.z() <= 1e-9) return std::nullopt;
      const Vec2 pred = ProjectOnFaceChain(cam_, pose, o.point, o.fp.face).predicted;
      return Eigen::VectorXd((o.fp.pixel - pred) / o.sigma);
    }
    const Vec3 p2 = pose * o.point;
    const double n = p2.norm();
    if (!(n > 0.0)) return std::nullopt;
    return ResidualMetric(options_.metric, p2 / n, measured_bearings_[i]) *
           (cam_.focal() / o.sigma);
  }

  Eigen::MatrixXd Jacobian(const Se3Pose& pose, std::size_t i) const {
    const auto& o = used_[i];
    if (options_.metric == MetricKind::kRu) {
      const auto chain = ProjectOnFaceChain(cam_, pose, o.point, o.fp.face);
      return PoseJacobianFromChain(cam_, o.fp.face, chain) / o.sigma;
    }
    constexpr double kStep = 1e-6;
    Eigen::MatrixXd J(dim(), 6);
    for (int k = 0; k < 6; ++k) {
      Vec6 d = Vec6::Zero();
      d(k) = kStep;
      const auto plus = Residual(pose.Retract(Se3Tangent::FromVector(d)), i);
      const auto minus = Residual(pose.Retract(Se3Tangent::FromVector(-d)), i);
      if (!plus || !minus) {
        J.col(k).setZero();
      } else {
        J.col(k) = (*plus - *minus) / (2.0 * kStep);
      }
    }
    return J;
  }

  std::optional<double> Cost(const Se3Pose& pose) const {
    double cost = 0.0;
    for (std::size_t i = 0; i < used_.size(); ++i) {
      const auto r = Residual(pose, i);
      if (!r) return std::nullopt;
      cost += RobustCost(r->squaredNorm(), options_.huber_delta);
    }
    return cost;
  }

 private:
  const CubemapCamera& cam_;
  PoseOptimizationOptions options_;
  std::vector<PoseObservation> used_;
  std::vector<Vec3> measured_bearings_;
};

}  // namespace internal

// Levenberg-Marquardt over T_BW with left-multiplicative updates.
inline PoseOptimizationResult OptimizePose(const CubemapCamera& cam, const Se3Pose& init,
                                           std::span<const PoseObservation> observations,
                                           const PoseOptimizationOptions& options = {}) {
  internal::PoseCostFunction problem(cam, observations, options, init);
  if (problem.size() < 3) {
    throw Error(ErrorKind::kConfiguration, "pose optimization needs at least 3 observations");
  }
  PoseOptimizationResult result;
  result.pose = init;
  result.num_used = static_cast<int>(problem.size());
  const auto initial = problem.Cost(init);
  if (!initial) throw Error(ErrorKind::kDegenerate, "initial pose puts points behind faces");
  double cost = *initial;
  result.initial_cost = cost;
  result.accepted_costs.push_back(cost);

  double lambda = options.initial_lambda;
  for (int iter = 0; iter < options.max_iterations; ++iter) {
    result.iterations = iter + 1;
    if (cost == 0.0) {
      result.converged = true;
      break;
    }
    Mat6 H = Mat6::Zero();
    Vec6 g = Vec6::Zero();
    for (std::size_t i = 0; i < problem.size(); ++i) {
      const auto r = problem.Residual(result.pose, i);
      const Eigen::MatrixXd J = problem.Jacobian(result.pose, i);
      const double w = internal::RobustWeight(r->squaredNorm(), options.huber_delta);
      H.noalias() += w * J.transpose() * J;
      g.noalias() += w * J.transpose() * *r;
    }

    bool accepted = false;
    bool done = false;
    while (!accepted && lambda <= 1e8) {
      Mat6 A = H;
      A.diagonal() += lambda * H.diagonal().cwiseMax(1e-9);
      const Vec6 delta = A.ldlt().solve(-g);
      if (!delta.allFinite()) {
        lambda *= 10.0;
        continue;
      }
      if (delta.norm() < 1e-10) {
        done = true;
        break;
      }
      const Se3Pose candidate = result.pose.Retract(Se3Tangent::FromVector(delta));
      const auto new_cost = problem.Cost(candidate);
      if (new_cost && *new_cost < cost) {
        done = cost - *new_cost < 1e-12 * cost;
        result.pose = candidate;
        cost = *new_cost;
        result.accepted_costs.push_back(cost);
        ++result.accepted_steps;
        lambda = std::max(lambda * 0.1, 1e-12);
        accepted = true;
      } else {
        lambda *= 10.0;
      }
    }
    if (done || !accepted) {
      // Either converged or damping exhausted without progress.
      result.converged = true;
      break;
    }
  }
  result.final_cost = cost;
  return result;
}

////////////////////////////////////////////////////////////////////////////////
// Bundle adjustment
////////////////////////////////////////////////////////////////////////////////

struct BundleProblem {
  std::vector<Se3Pose> poses;  // T_BW per pose id
  std::vector<Vec3> points;    // world frame per point id
  std::vector<CubemapObservation> observations;
  std::vector<int> fixed_poses;
  // With a single fixed pose, the distance between this pose's center and
  // the fixed pose's center is held to remove the scale gauge.
  std::optional<int> scale_anchor;
};

struct BundleOptions {
  int max_iterations = 100;
  std::optional<double> huber_delta;
  double initial_lambda = 1e-4;
  double scale_anchor_weight = 1e4;
};

struct BundleResult {
  int iterations = 0;
  int accepted_steps = 0;
  double initial_rms = 0.0;  // pixels, over observations in the solve
  double final_rms = 0.0;
  std::vector<double> accepted_costs;
  int num_used = 0;
  int num_dropped = 0;
  bool converged = false;
};

inline Vec3 CameraCenter(const Se3Pose& T_BW) {
  return -T_BW.rotation.transpose() * T_BW.translation;
}

// RMS pixel error over observations whose predicted face matches.
inline double ReprojectionRms(const CubemapCamera& cam, const BundleProblem& problem) {
  double sum = 0.0;
  int count = 0;
  for (const auto& o : problem.observations) {
    try {
      sum += ResidualRu(cam, problem.poses[o.pose_id], problem.points[o.point_id], o.fp)
                 .squaredNorm();
      ++count;
    } catch (const Error&) {
    }
  }
  return count > 0 ? std::sqrt(sum / count) : 0.0;
}

namespace internal {

struct BundleState {
  std::vector<Se3Pose> poses;
  std::vector<Vec3> points;
};

class BundleSolver {
 public:
  BundleSolver(const CubemapCamera& cam, BundleProblem& problem, const BundleOptions& options)
      : cam_(cam), problem_(problem), options_(options) {
    const int num_poses = static_cast<int>(problem.poses.size());
    const int num_points = static_cast<int>(problem.points.size());
    pose_param_.assign(num_poses, -1);
    std::vector<bool> fixed(num_poses, false);
    for (int id : problem.fixed_poses) {
      if (id < 0 || id >= num_poses) {
        throw Error(ErrorKind::kConfiguration, "fixed pose id out of range");
      }
      fixed[id] = true;
    }
    const int num_fixed = static_cast<int>(std::count(fixed.begin(), fixed.end(), true));
    if (num_fixed == 0) {
      throw Error(ErrorKind::kConfiguration, "gauge unfixed: no fixed pose");
    }
    if (num_fixed == 1) {
      if (!problem.scale_anchor || *problem.scale_anchor < 0 ||
          *problem.scale_anchor >= num_poses || fixed[*problem.scale_anchor]) {
        throw Error(ErrorKind::kConfiguration,
                    "gauge unfixed: one fixed pose requires a free scale anchor pose");
      }
      anchor_ = *problem.scale_anchor;
      reference_ = static_cast<int>(std::find(fixed.begin(), fixed.end(), true) - fixed.begin());
      anchor_distance_ =
          (CameraCenter(problem.poses[*anchor_]) - CameraCenter(problem.poses[reference_])).norm();
    }
    for (int i = 0; i < num_poses; ++i) {
      if (!fixed[i]) pose_param_[i] = num_free_++;
    }

    point_obs_.assign(num_points, {});
    for (std::size_t k = 0; k < problem.observations.size(); ++k) {
      const auto& o = problem.observations[k];
      if (o.pose_id < 0 || o.pose_id >= num_poses || o.point_id < 0 ||
          o.point_id >= num_points) {
        throw Error(ErrorKind::kConfiguration, "observation references unknown pose or point");
      }
      try {
        ProjectObservedChain(cam_, problem.poses[o.pose_id], problem.points[o.point_id], o.fp);
      } catch (const Error&) {
        ++dropped_;
        continue;
      }
      active_.push_back(static_cast<int>(k));
      point_obs_[o.point_id].push_back(static_cast<int>(k));
    }
  }

  int num_used() const { return static_cast<int>(active_.size()); }
  int num_dropped() const { return dropped_; }

  std::optional<double> Cost(const BundleState& s, double* reproj_sq = nullptr) const {
    double cost = 0.0;
    double sq = 0.0;
    for (int k : active_) {
      const auto& o = problem_.observations[k];
      const Vec3 p1 = cam_.Rotation(o.fp.face) * (s.poses[o.pose_id] * s.points[o.point_id]);
      if (p1.z() <= 1e-9) return std::nullopt;
      const Vec2 r =
          o.fp.pixel -
          ProjectOnFaceChain(cam_, s.poses[o.pose_id], s.points[o.point_id], o.fp.face).predicted;
      sq += r.squaredNorm();
      cost += RobustCost((r / o.sigma).squaredNorm(), options_.huber_delta);
    }
    if (anchor_) {
      const double r = AnchorResidual(s);
      cost += r * r;
    }
    if (reproj_sq) *reproj_sq = sq;
    return cost;
  }

  double Rms(const BundleState& s) const {
    double sq = 0.0;
    Cost(s, &sq);
    return active_.empty() ? 0.0 : std::sqrt(sq / static_cast<double>(active_.size()));
  }

  BundleResult Solve() {
    BundleResult result;
    result.num_used = num_used();
    result.num_dropped = num_dropped();
    BundleState state{problem_.poses, problem_.points};
    const auto initial = Cost(state);
    if (!initial) throw Error(ErrorKind::kDegenerate, "initial state puts points behind faces");
    double cost = *initial;
    result.initial_rms = Rms(state);
    result.accepted_costs.push_back(cost);

    double lambda = options_.initial_lambda;
    for (int iter = 0; iter < options_.max_iterations; ++iter) {
      result.iterations = iter + 1;
      if (cost == 0.0) {
        result.converged = true;
        break;
      }
      BuildNormalEquations(state);
      bool accepted = false;
      bool done = false;
      while (!accepted && lambda <= 1e8) {
        Eigen::VectorXd dpose;
        std::vector<Vec3> dpoint;
        if (!SolveDamped(lambda, &dpose, &dpoint)) {
          lambda *= 10.0;
          continue;
        }
        double step_sq = dpose.squaredNorm();
        for (const auto& d : dpoint) step_sq += d.squaredNorm();
        if (std::sqrt(step_sq) < 1e-10) {
          done = true;
          break;
        }
        BundleState candidate = state;
        for (std::size_t i = 0; i < candidate.poses.size(); ++i) {
          if (pose_param_[i] < 0) continue;
          candidate.poses[i] = candidate.poses[i].Retract(
              Se3Tangent::FromVector(dpose.segment<6>(6 * pose_param_[i])));
        }
        for (std::size_t j = 0; j < candidate.points.size(); ++j) {
          candidate.points[j] += dpoint[j];
        }
        const auto new_cost = Cost(candidate);
        if (new_cost && *new_cost < cost) {
          done = cost - *new_cost < 1e-12 * cost;
          state = std::move(candidate);
          cost = *new_cost;
          result.accepted_costs.push_back(cost);
          ++result.accepted_steps;
          lambda = std::max(lambda * 0.1, 1e-12);
          accepted = true;
        } else {
          lambda *= 10.0;
        }
      }
      if (done) {
        result.converged = true;
        break;
      }
      if (!accepted) {
        if (result.accepted_steps == 0 && !solved_once_) {
          throw Error(ErrorKind::kNumeric, "normal equations singular up to lambda = 1e8");
        }
        result.converged = true;
        break;
      }
    }
    problem_.poses = state.poses;
    problem_.points = state.points;
    result.final_rms = Rms(state);
    return result;
  }

 private:
  double AnchorResidual(const BundleState& s) const {
    const double d =
        (CameraCenter(s.poses[*anchor_]) - CameraCenter(s.poses[reference_])).norm();
    return options_.scale_anchor_weight * (d - anchor_distance_);
  }

  void BuildNormalEquations(const BundleState& s) {
    const int nc = 6 * num_free_;
    Hcc_.setZero(nc, nc);
    gc_.setZero(nc);
    const std::size_t num_points = s.points.size();
    Hpp_.assign(num_points, Mat3::Zero());
    gp_.assign(num_points, Vec3::Zero());
    Hcp_.assign(problem_.observations.size(), Eigen::Matrix<double, 6, 3>::Zero());

    for (int k : active_) {
      const auto& o = problem_.observations[k];
      const Se3Pose& pose = s.poses[o.pose_id];
      const auto chain = ProjectOnFaceChain(cam_, pose, s.points[o.point_id], o.fp.face);
      const Vec2 r = (o.fp.pixel - chain.predicted) / o.sigma;
      const double w = RobustWeight(r.squaredNorm(), options_.huber_delta);
      const Mat23 Jp = PointJacobianFromChain(cam_, o.fp.face, pose, chain) / o.sigma;
      Hpp_[o.point_id].noalias() += w * Jp.transpose() * Jp;
      gp_[o.point_id].noalias() += w * Jp.transpose() * r;
      const int c = pose_param_[o.pose_id];
      if (c < 0) continue;
      const Mat26 Jc = PoseJacobianFromChain(cam_, o.fp.face, chain) / o.sigma;
      Hcc_.block<6, 6>(6 * c, 6 * c).noalias() += w * Jc.transpose() * Jc;
      gc_.segment<6>(6 * c).noalias() += w * Jc.transpose() * r;
      Hcp_[k].noalias() = w * Jc.transpose() * Jp;
    }

    if (anchor_) {
      const int c = pose_param_[*anchor_];
      const Vec3 diff = CameraCenter(s.poses[*anchor_]) - CameraCenter(s.poses[reference_]);
      const double d = diff.norm();
      if (d > 0.0) {
        // Center moves by -R^T drho under the left update; phi has no
        // first-order effect.
        Eigen::Matrix<double, 1, 6> J = Eigen::Matrix<double, 1, 6>::Zero();
        J.rightCols<3>() = -options_.scale_anchor_weight * (diff / d).transpose() *
                           s.poses[*anchor_].rotation.transpose();
        const double r = AnchorResidual(s);
        Hcc_.block<6, 6>(6 * c, 6 * c).noalias() += J.transpose() * J;
        gc_.segment<6>(6 * c).noalias() += J.transpose() * r;
      }
    }
  }

  // Schur complement on the point blocks, then back-substitution.
  bool SolveDamped(double lambda, Eigen::VectorXd* dpose, std::vector<Vec3>* dpoint) {
    const int nc = 6 * num_free_;
    Eigen::MatrixXd S = Hcc_;
    S.diagonal() += lambda * Hcc_.diagonal().cwiseMax(1e-9);
    Eigen::VectorXd b = -gc_;
    std::vector<Mat3> Hpp_inv(Hpp_.size(), Mat3::Zero());
    for (std::size_t j = 0; j < Hpp_.size(); ++j) {
      if (point_obs_[j].empty()) continue;
      Mat3 A = Hpp_[j];
      A.diagonal() += lambda * Hpp_[j].diagonal().cwiseMax(1e-9);
      Eigen::FullPivLU<Mat3> lu(A);
      if (!lu.isInvertible()) return false;
      Hpp_inv[j] = lu.inverse();
      const auto& obs = point_obs_[j];
      for (std::size_t a = 0; a < obs.size(); ++a) {
        const int ca = pose_param_[problem_.observations[obs[a]].pose_id];
        if (ca < 0) continue;
        const Eigen::Matrix<double, 6, 3> WHinv = Hcp_[obs[a]] * Hpp_inv[j];
        b.segment<6>(6 * ca).noalias() += WHinv * gp_[j];
        for (std::size_t bb = 0; bb < obs.size(); ++bb) {
          const int cb = pose_param_[problem_.observations[obs[bb]].pose_id];
          if (cb < 0) continue;
          S.block<6, 6>(6 * ca, 6 * cb).noalias() -= WHinv * Hcp_[obs[bb]].transpose();
        }
      }
    }
    *dpose = Eigen::VectorXd::Zero(nc);
    if (nc > 0) {
      const Eigen::LDLT<Eigen::MatrixXd> ldlt(S);
      if (ldlt.info() != Eigen::Success) return false;
      *dpose = ldlt.solve(b);
      if (!dpose->allFinite()) return false;
    }
    dpoint->assign(Hpp_.size(), Vec3::Zero());
    for (std::size_t j = 0; j < Hpp_.size(); ++j) {
      if (point_obs_[j].empty()) continue;
      Vec3 rhs = -gp_[j];
      for (int k : point_obs_[j]) {
        const int c = pose_param_[problem_.observations[k].pose_id];
        if (c < 0) continue;
        rhs.noalias() -= Hcp_[k].transpose() * dpose->segment<6>(6 * c);
      }
      (*dpoint)[j] = Hpp_inv[j] * rhs;
      if (!(*dpoint)[j].allFinite()) return false;
    }
    solved_once_ = true;
    return true;
  }

  const CubemapCamera& cam_;
  BundleProblem& problem_;
  BundleOptions options_;
  std::vector<int> pose_param_;
  int num_free_ = 0;
  std::optional<int> anchor_;
  int reference_ = 0;
  double anchor_distance_ = 0.0;
  std::vector<int> active_;
  std::vector<std::vector<int>> point_obs_;
  int dropped_ = 0;
  bool solved_once_ = false;

  Eigen::MatrixXd Hcc_;
  Eigen::VectorXd gc_;
  std::vector<Mat3> Hpp_;
  std::vector<Vec3> gp_;
  std::vector<Eigen::Matrix<double, 6, 3>> Hcp_;
};

}  // namespace internal

// Joint LM over free poses and all observed points with r_u residuals.
// Refines `problem` in place.
inline BundleResult BundleAdjust(const CubemapCamera& cam, BundleProblem& problem,
                                 const BundleOptions& options = {}) {
  internal::BundleSolver solver(cam, problem, options);
  return solver.Solve();
}

}  // namespace cubemap
