#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "cubemap/calib.hpp"
#include "cubemap/epipolar.hpp"
#include "cubemap/error.hpp"
#include "cubemap/eval.hpp"
#include "cubemap/geometry.hpp"
#include "cubemap/optim.hpp"
#include "cubemap/triangulate.hpp"

namespace cubemap {

inline constexpr double kDegToRad = std::numbers::pi / 180.0;

enum class TrajectoryShape { kStraight, kCircle, kUTurn };
enum class PointDistribution { kBox, kCorridor };

struct SceneConfig {
  int num_points = 500;
  PointDistribution distribution = PointDistribution::kBox;
  double box_margin = 8.0;          // box: padding around the trajectory bounds
  double height = 3.0;              // half-extent along the vertical axis
  double min_distance = 1.0;        // box: clearance from every camera position
  double corridor_min = 2.0;        // corridor: lateral wall offsets
  double corridor_max = 6.0;
  TrajectoryShape shape = TrajectoryShape::kCircle;
  int num_frames = 60;
  double length = 30.0;             // straight length; u-turn leg length
  double radius = 10.0;             // circle radius; u-turn turn radius
  double sway = 0.2;                // straight: lateral sway amplitude
  double mount_yaw_deg = 0.0;       // 0 front-facing, 90 lateral (left)
  double noise_sigma = 0.0;         // pixels
  double outlier_fraction = 0.0;
  double max_range = 40.0;
  int face_size = 650;
  double frame_interval = 0.1;      // seconds
  std::uint64_t seed = 0;
  int num_seeds = 20;               // benchmark repetitions

  void Validate() const {
    if (num_frames < 2) throw Error(ErrorKind::kConfiguration, "num_frames must be >= 2");
    if (num_points < 1) throw Error(ErrorKind::kConfiguration, "num_points must be >= 1");
    if (!(noise_sigma >= 0.0)) throw Error(ErrorKind::kConfiguration, "noise_sigma must be >= 0");
    if (!(outlier_fraction >= 0.0 && outlier_fraction < 0.5)) {
      throw Error(ErrorKind::kConfiguration, "outlier_fraction must be in [0, 0.5)");
    }
    if (!(corridor_min >= 0.0 && corridor_max >= corridor_min)) {
      throw Error(ErrorKind::kConfiguration, "corridor offsets must satisfy 0 <= min <= max");
    }
    if (!(length > 0.0 && radius > 0.0 && max_range > 0.0 && frame_interval > 0.0)) {
      throw Error(ErrorKind::kConfiguration, "lengths and intervals must be positive");
    }
    if (num_seeds < 1) throw Error(ErrorKind::kConfiguration, "num_seeds must be >= 1");
  }
};

inline const char* ShapeName(TrajectoryShape s) {
  switch (s) {
    case TrajectoryShape::kStraight: return "straight";
    case TrajectoryShape::kCircle: return "circle";
    case TrajectoryShape::kUTurn: return "u-turn";
  }
  return "?";
}

// Flat "key = value" text; '#' starts a comment.
inline SceneConfig ParseSceneConfig(const std::string& text) {
  SceneConfig cfg;
  std::istringstream in(text);
  std::string line;
  int line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const auto eq = line.find('=');
    const auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      const auto e = s.find_last_not_of(" \t\r");
      return s.substr(b, e - b + 1);
    };
    if (trim(line).empty()) continue;
    if (eq == std::string::npos) {
      throw Error(ErrorKind::kParse, "scene config line " + std::to_string(line_number) +
                                         ": expected key=value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto number = [&]() {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(value, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != value.size()) {
        throw Error(ErrorKind::kParse, "scene config line " + std::to_string(line_number) +
                                           ": bad number for " + key);
      }
      return v;
    };
    if (key == "num_points") cfg.num_points = static_cast<int>(number());
    else if (key == "distribution") {
      if (value == "box") cfg.distribution = PointDistribution::kBox;
      else if (value == "corridor") cfg.distribution = PointDistribution::kCorridor;
      else throw Error(ErrorKind::kParse, "unknown distribution '" + value + "'");
    } else if (key == "box_margin") cfg.box_margin = number();
    else if (key == "height") cfg.height = number();
    else if (key == "min_distance") cfg.min_distance = number();
    else if (key == "corridor_min") cfg.corridor_min = number();
    else if (key == "corridor_max") cfg.corridor_max = number();
    else if (key == "shape" || key == "trajectory") {
      if (value == "straight") cfg.shape = TrajectoryShape::kStraight;
      else if (value == "circle") cfg.shape = TrajectoryShape::kCircle;
      else if (value == "u-turn" || value == "uturn") cfg.shape = TrajectoryShape::kUTurn;
      else throw Error(ErrorKind::kParse, "unknown trajectory shape '" + value + "'");
    } else if (key == "num_frames") cfg.num_frames = static_cast<int>(number());
    else if (key == "length") cfg.length = number();
    else if (key == "radius") cfg.radius = number();
    else if (key == "sway") cfg.sway = number();
    else if (key == "mount_yaw_deg") cfg.mount_yaw_deg = number();
    else if (key == "noise_sigma") cfg.noise_sigma = number();
    else if (key == "outlier_fraction") cfg.outlier_fraction = number();
    else if (key == "max_range") cfg.max_range = number();
    else if (key == "face_size") cfg.face_size = static_cast<int>(number());
    else if (key == "frame_interval") cfg.frame_interval = number();
    else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(number());
    else if (key == "num_seeds") cfg.num_seeds = static_cast<int>(number());
    else {
      throw Error(ErrorKind::kParse, "unknown scene config key '" + key + "'");
    }
  }
  cfg.Validate();
  return cfg;
}

inline SceneConfig LoadSceneConfig(const std::string& path) {
  std::ifstream file(path);
  if (!file) throw Error(ErrorKind::kIo, "cannot open scene config " + path);
  std::stringstream buffer;
  buffer << file.rdbuf();
  return ParseSceneConfig(buffer.str());
}

struct SceneObservation {
  int point_id = 0;
  FacePoint fp;             // measured (noisy / outlier) face point
  Vec3 bearing;             // unprojected measurement, body frame
  FacePoint clean_fp;       // noise-free projection
  bool outlier = false;
};

struct SyntheticScene {
  SceneConfig config;
  std::vector<Se3Pose> poses;  // T_BW per frame
  std::vector<double> timestamps;
  std::vector<Vec3> points;
  std::vector<std::vector<SceneObservation>> frames;

  CubemapCamera Camera() const { return CubemapCamera(config.face_size); }

  Trajectory GroundTruth() const {
    Trajectory t;
    for (std::size_t i = 0; i < poses.size(); ++i) {
      t.entries.push_back({timestamps[i], poses[i].Inverse()});
    }
    return t;
  }

  double TrajectoryLength() const {
    double len = 0.0;
    for (std::size_t i = 1; i < poses.size(); ++i) {
      len += (CameraCenter(poses[i]) - CameraCenter(poses[i - 1])).norm();
    }
    return len;
  }
};

namespace internal {

struct PathSample {
  Vec3 position;
  double heading;  // yaw of the travel direction about +y; 0 = +z
};

// World frame: x right, y down, z forward at the start.
inline PathSample SamplePath(const SceneConfig& cfg, double s) {
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  switch (cfg.shape) {
    case TrajectoryShape::kStraight: {
      const double z = cfg.length * s;
      const double w = kTwoPi * 2.0 / cfg.length;  // two sway periods
      const double x = cfg.sway * std::sin(w * z);
      return {Vec3(x, 0.0, z), std::atan(cfg.sway * w * std::cos(w * z))};
    }
    case TrajectoryShape::kCircle: {
      const double a = kTwoPi * s;
      return {Vec3(cfg.radius * (1.0 - std::cos(a)), 0.0, cfg.radius * std::sin(a)), a};
    }
    case TrajectoryShape::kUTurn: {
      const double leg = cfg.length;
      const double arc = std::numbers::pi * cfg.radius;
      const double d = s * (2.0 * leg + arc);
      if (d <= leg) return {Vec3(0.0, 0.0, d), 0.0};
      if (d <= leg + arc) {
        const double a = (d - leg) / cfg.radius;
        return {Vec3(cfg.radius * (1.0 - std::cos(a)), 0.0, leg + cfg.radius * std::sin(a)), a};
      }
      return {Vec3(2.0 * cfg.radius, 0.0, leg - (d - leg - arc)), std::numbers::pi};
    }
  }
  return {Vec3::Zero(), 0.0};
}

inline double PathParameter(const SceneConfig& cfg, int frame) {
  // Closed circles stop one step short of the start.
  if (cfg.shape == TrajectoryShape::kCircle) {
    return static_cast<double>(frame) / cfg.num_frames;
  }
  return static_cast<double>(frame) / (cfg.num_frames - 1);
}

inline Se3Pose CameraPose(const SceneConfig& cfg, const PathSample& p) {
  // Camera-to-world rotation; positive mount yaw turns the camera left.
  const Mat3 R_wc = RotY(p.heading - cfg.mount_yaw_deg * kDegToRad);
  return Se3Pose{R_wc, p.position}.Inverse();
}

inline std::optional<FacePoint> Observe(const CubemapCamera& cam, const Se3Pose& T_BW,
                                        const Vec3& point, double max_range) {
  const Vec3 p = T_BW * point;
  const double dist = p.norm();
  if (dist < 0.3 || dist > max_range) return std::nullopt;
  try {
    return cam.Project(p);
  } catch (const Error&) {
    return std::nullopt;
  }
}

inline Vec3 RandomActiveBearing(const CubemapCamera& cam, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  while (true) {
    const Vec3 v(gauss(rng), gauss(rng), gauss(rng));
    if (v.norm() < 1e-9) continue;
    const Vec3 b = v.normalized();
    bool active = true;
    try {
      cam.FaceOf(b);
    } catch (const Error&) {
      active = false;
    }
    if (active) return b;
  }
}

inline SceneObservation MakeMeasurement(const CubemapCamera& cam, int point_id,
                                        const FacePoint& clean, double sigma,
                                        double outlier_fraction, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  SceneObservation o;
  o.point_id = point_id;
  o.clean_fp = clean;
  // Fixed draw order keeps scenes reproducible across parameter changes.
  const double u_outlier = unit(rng);
  const Vec2 noise(gauss(rng), gauss(rng));
  if (u_outlier < outlier_fraction) {
    o.outlier = true;
    o.bearing = RandomActiveBearing(cam, rng);
    o.fp = cam.Project(o.bearing);
  } else {
    o.fp = clean;
    o.fp.pixel += sigma * noise;
    o.bearing = cam.Unproject(o.fp);
  }
  return o;
}

}  // namespace internal

inline SyntheticScene GenerateScene(const SceneConfig& cfg) {
  cfg.Validate();
  SyntheticScene scene;
  scene.config = cfg;
  const CubemapCamera cam(cfg.face_size);
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<internal::PathSample> path;
  for (int i = 0; i < cfg.num_frames; ++i) {
    path.push_back(internal::SamplePath(cfg, internal::PathParameter(cfg, i)));
    scene.poses.push_back(internal::CameraPose(cfg, path.back()));
    scene.timestamps.push_back(i * cfg.frame_interval);
  }

  Vec3 lo = path.front().position;
  Vec3 hi = lo;
  for (const auto& p : path) {
    lo = lo.cwiseMin(p.position);
    hi = hi.cwiseMax(p.position);
  }

  const auto draw_point = [&]() -> Vec3 {
    if (cfg.distribution == PointDistribution::kCorridor) {
      const auto p = internal::SamplePath(cfg, unit(rng));
      const Vec3 right(std::cos(p.heading), 0.0, -std::sin(p.heading));
      const double side = unit(rng) < 0.5 ? -1.0 : 1.0;
      const double offset = cfg.corridor_min + (cfg.corridor_max - cfg.corridor_min) * unit(rng);
      const double y = cfg.height * (2.0 * unit(rng) - 1.0);
      return p.position + side * offset * right + Vec3(0.0, y, 0.0);
    }
    while (true) {
      const Vec3 q(lo.x() - cfg.box_margin + (hi.x() - lo.x() + 2 * cfg.box_margin) * unit(rng),
                   cfg.height * (2.0 * unit(rng) - 1.0),
                   lo.z() - cfg.box_margin + (hi.z() - lo.z() + 2 * cfg.box_margin) * unit(rng));
      bool clear = true;
      for (const auto& p : path) {
        if ((p.position - q).norm() < cfg.min_distance) {
          clear = false;
          break;
        }
      }
      if (clear) return q;
    }
  };

  scene.frames.assign(cfg.num_frames, {});
  for (int id = 0; id < cfg.num_points; ++id) {
    bool placed = false;
    for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
      const Vec3 point = draw_point();
      int visible = 0;
      for (const auto& pose : scene.poses) {
        if (internal::Observe(cam, pose, point, cfg.max_range)) ++visible;
      }
      if (visible >= 2) {
        scene.points.push_back(point);
        placed = true;
      }
    }
    if (!placed) {
      throw Error(ErrorKind::kConfiguration,
                  "point visibility unsatisfiable after 100 resamples");
    }
  }

  for (int f = 0; f < cfg.num_frames; ++f) {
    for (int id = 0; id < cfg.num_points; ++id) {
      const auto clean = internal::Observe(cam, scene.poses[f], scene.points[id], cfg.max_range);
      if (!clean) continue;
      scene.frames[f].push_back(internal::MakeMeasurement(cam, id, *clean, cfg.noise_sigma,
                                                          cfg.outlier_fraction, rng));
    }
  }
  return scene;
}

////////////////////////////////////////////////////////////////////////////////
// Random two-view scenes
////////////////////////////////////////////////////////////////////////////////

struct TwoViewConfig {
  int num_points = 100;
  double outlier_fraction = 0.0;
  double noise_sigma = 0.0;
  double max_rotation_rad = 0.5;
  double min_depth = 2.0;
  double max_depth = 10.0;
  int face_size = 650;
  std::uint64_t seed = 0;
};

struct TwoViewScene {
  RelativePose motion;  // x2 = R x1 + t, |t| = 1
  std::vector<Vec3> points;  // frame 1
  std::vector<Correspondence> correspondences;
  std::vector<bool> outlier;
};

// Random relative motion with points spread over all active directions of
// the first camera.
inline TwoViewScene GenerateTwoViewScene(const TwoViewConfig& cfg) {
  const CubemapCamera cam(cfg.face_size);
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  TwoViewScene scene;
  const Vec3 axis = Vec3(gauss(rng), gauss(rng), gauss(rng)).normalized();
  scene.motion.rotation = So3Exp(axis * cfg.max_rotation_rad * unit(rng));
  scene.motion.translation = Vec3(gauss(rng), gauss(rng), gauss(rng)).normalized();
  const Se3Pose T21 = scene.motion.AsPose();

  while (static_cast<int>(scene.points.size()) < cfg.num_points) {
    const Vec3 dir = internal::RandomActiveBearing(cam, rng);
    const double depth = cfg.min_depth + (cfg.max_depth - cfg.min_depth) * unit(rng);
    const Vec3 X1 = depth * dir;
    const auto fp1 = internal::Observe(cam, Se3Pose::Identity(), X1, 1e9);
    const auto fp2 = internal::Observe(cam, T21, X1, 1e9);
    if (!fp1 || !fp2) continue;
    const auto tri = Triangulate(cam.Unproject(*fp1), cam.Unproject(*fp2), T21);
    if (tri.parallax < 0.5 * kDegToRad) continue;
    const auto m1 = internal::MakeMeasurement(cam, 0, *fp1, cfg.noise_sigma, 0.0, rng);
    auto m2 = internal::MakeMeasurement(cam, 0, *fp2, cfg.noise_sigma, 0.0, rng);
    const bool is_outlier = unit(rng) < cfg.outlier_fraction;
    if (is_outlier) {
      const Vec3 b = internal::RandomActiveBearing(cam, rng);
      m2.fp = cam.Project(b);
      m2.bearing = b;
    }
    scene.points.push_back(X1);
    scene.correspondences.push_back({m1.bearing, m2.bearing, m1.fp, m2.fp});
    scene.outlier.push_back(is_outlier);
  }
  return scene;
}

////////////////////////////////////////////////////////////////////////////////
// Batch visual odometry
////////////////////////////////////////////////////////////////////////////////

struct PipelineConfig {
  MetricKind metric = MetricKind::kRu;
  std::optional<double> huber_delta;
  double th = 1.0;
  int ransac_max_iterations = 1000;
  double ransac_confidence = 0.999;
  std::uint64_t seed = 0;
  double init_min_parallax_deg = 1.0;
  double new_point_min_parallax_deg = 1.0;
  bool init_bundle_adjustment = true;
  bool local_bundle_adjustment = true;
  int local_ba_every = 5;
  int local_ba_window = 10;
  int min_tracked = 6;
};

struct FrameStats {
  int frame = 0;
  int tracked = 0;
  int map_points = 0;
  double final_cost = 0.0;
  bool converged = true;
};

struct TrajectoryEstimate {
  Trajectory trajectory;  // camera-to-world, one entry per frame
  std::vector<Se3Pose> poses;  // T_BW per frame
  std::vector<FrameStats> stats;
  int init_frame = 0;
  int init_inliers = 0;
};

namespace internal {

inline double Median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  if (v.size() % 2 == 1) return *mid;
  const double hi = *mid;
  const double lo = *std::max_element(v.begin(), mid);
  return 0.5 * (lo + hi);
}

class VoDriver {
 public:
  VoDriver(const SyntheticScene& scene, const CubemapCamera& cam, const PipelineConfig& cfg)
      : scene_(scene), cam_(cam), cfg_(cfg) {
    const int n = static_cast<int>(scene.frames.size());
    lookup_.resize(n);
    for (int f = 0; f < n; ++f) {
      for (std::size_t k = 0; k < scene.frames[f].size(); ++k) {
        lookup_[f][scene.frames[f][k].point_id] = static_cast<int>(k);
      }
    }
    poses_.assign(n, Se3Pose::Identity());
    estimated_.assign(n, false);
    map_.assign(scene.points.size(), std::nullopt);
  }

  TrajectoryEstimate Run() {
    const int n = static_cast<int>(scene_.frames.size());
    if (n < 2) throw Error(ErrorKind::kConfiguration, "scene needs at least 2 frames");
    TrajectoryEstimate out;
    const int k = SelectInitFrame();
    out.init_frame = k;
    out.init_inliers = Initialize(k);

    std::vector<int> order;
    for (int j = 1; j < k; ++j) order.push_back(j);
    for (int j = k + 1; j < n; ++j) order.push_back(j);
    processed_ = {0, k};
    int since_ba = 0;
    for (int j : order) {
      out.stats.push_back(Track(j));
      processed_.push_back(j);
      TriangulateNew(j);
      if (cfg_.local_bundle_adjustment && ++since_ba == cfg_.local_ba_every) {
        since_ba = 0;
        LocalBundleAdjust();
      }
    }
    out.poses = poses_;
    for (int f = 0; f < n; ++f) {
      out.trajectory.entries.push_back({scene_.timestamps[f], poses_[f].Inverse()});
    }
    return out;
  }

 private:
  std::vector<int> Common(int a, int b) const {
    std::vector<int> ids;
    for (const auto& o : scene_.frames[a]) {
      if (lookup_[b].count(o.point_id)) ids.push_back(o.point_id);
    }
    return ids;
  }

  const SceneObservation& Obs(int frame, int point_id) const {
    return scene_.frames[frame][lookup_[frame].at(point_id)];
  }

  // First frame whose median raw bearing angle to frame 0 reaches the bound.
  int SelectInitFrame() const {
    const int n = static_cast<int>(scene_.frames.size());
    for (int j = 1; j < n; ++j) {
      const auto ids = Common(0, j);
      if (ids.size() < 8) continue;
      std::vector<double> angles;
      for (int id : ids) angles.push_back(AngleBetween(Obs(0, id).bearing, Obs(j, id).bearing));
      if (Median(angles) >= cfg_.init_min_parallax_deg * kDegToRad) return j;
    }
    if (n == 2) return 1;
    throw Error(ErrorKind::kNoModel,
                "initialization failed for frame pair (0, " + std::to_string(n - 1) +
                    "): parallax bound never reached");
  }

  int Initialize(int k) {
    const auto ids = Common(0, k);
    std::vector<Correspondence> corrs;
    for (int id : ids) {
      const auto& a = Obs(0, id);
      const auto& b = Obs(k, id);
      corrs.push_back({a.bearing, b.bearing, a.fp, b.fp});
    }
    RansacConfig rc;
    rc.th = cfg_.th;
    rc.max_iterations = cfg_.ransac_max_iterations;
    rc.confidence = cfg_.ransac_confidence;
    rc.seed = cfg_.seed;
    RansacResult ransac;
    RelativePose motion;
    std::vector<Correspondence> inliers;
    try {
      ransac = RansacEssential(cam_, corrs, rc);
      inliers = internal::Select(corrs, ransac.inliers);
      motion = DecomposeEssential(ransac.model.E, inliers);
    } catch (const Error& e) {
      throw Error(e.kind(), "initialization failed for frame pair (0, " + std::to_string(k) +
                                "): " + e.what());
    }
    poses_[0] = Se3Pose::Identity();
    poses_[k] = motion.AsPose();
    estimated_[0] = estimated_[k] = true;

    TriangulationOptions topt;
    topt.min_parallax_rad = cfg_.new_point_min_parallax_deg * kDegToRad;
    int created = 0;
    for (std::size_t i = 0; i < corrs.size(); ++i) {
      if (!ransac.inliers[i]) continue;
      const auto tri = Triangulate(corrs[i].r1, corrs[i].r2, poses_[k], topt);
      if (!tri.ok()) continue;
      map_[ids[i]] = tri.point;
      ++created;
    }
    if (created < cfg_.min_tracked) {
      throw Error(ErrorKind::kNoModel, "initialization failed for frame pair (0, " +
                                           std::to_string(k) + "): too few map points");
    }
    if (cfg_.init_bundle_adjustment) {
      RunBundle({0, k}, {0}, k);
    }
    return ransac.num_inliers;
  }

  FrameStats Track(int j) {
    Se3Pose guess;
    const int last = processed_.back();
    if (processed_.size() >= 3 && last == j - 1 && estimated_[j - 2]) {
      // Constant-velocity prediction.
      guess = ((poses_[j - 1] * poses_[j - 2].Inverse()) * poses_[j - 1]).Normalized();
    } else if (j > 0 && estimated_[j - 1]) {
      guess = poses_[j - 1];
    } else {
      guess = poses_[last];
    }
    std::vector<PoseObservation> obs;
    for (const auto& o : scene_.frames[j]) {
      if (map_[o.point_id]) obs.push_back({*map_[o.point_id], o.fp, 1.0});
    }
    if (static_cast<int>(obs.size()) < cfg_.min_tracked) {
      throw Error(ErrorKind::kNoModel, "tracking lost at frame " + std::to_string(j));
    }
    PoseOptimizationOptions popt;
    popt.metric = cfg_.metric;
    popt.huber_delta = cfg_.huber_delta;
    const auto result = OptimizePose(cam_, guess, obs, popt);
    poses_[j] = result.pose;
    estimated_[j] = true;
    FrameStats stats;
    stats.frame = j;
    stats.tracked = result.num_used;
    stats.final_cost = result.final_cost;
    stats.converged = result.converged;
    stats.map_points = static_cast<int>(
        std::count_if(map_.begin(), map_.end(), [](const auto& p) { return p.has_value(); }));
    return stats;
  }

  // Unmapped points seen in frame b are triangulated against their earliest
  // estimated observation, which maximizes the baseline.
  void TriangulateNew(int b) {
    TriangulationOptions topt;
    topt.min_parallax_rad = cfg_.new_point_min_parallax_deg * kDegToRad;
    for (const auto& o : scene_.frames[b]) {
      if (map_[o.point_id]) continue;
      for (int a = 0; a < static_cast<int>(poses_.size()); ++a) {
        if (a == b || !estimated_[a] || !lookup_[a].count(o.point_id)) continue;
        const Se3Pose T21 = poses_[b] * poses_[a].Inverse();
        const auto tri = Triangulate(Obs(a, o.point_id).bearing, o.bearing, T21, topt);
        if (tri.ok()) map_[o.point_id] = poses_[a].Inverse() * tri.point;
        break;
      }
    }
  }

  void LocalBundleAdjust() {
    const int window = std::min<int>(cfg_.local_ba_window, static_cast<int>(processed_.size()));
    if (window < 3) return;
    std::vector<int> frames(processed_.end() - window, processed_.end());
    std::sort(frames.begin(), frames.end());
    RunBundle(frames, {frames[0], frames[1]}, std::nullopt);
  }

  void RunBundle(const std::vector<int>& frames, const std::vector<int>& fixed,
                 std::optional<int> anchor) {
    BundleProblem problem;
    std::map<int, int> pose_index;
    for (int f : frames) {
      pose_index[f] = static_cast<int>(problem.poses.size());
      problem.poses.push_back(poses_[f]);
    }
    std::map<int, int> point_index;
    for (int f : frames) {
      for (const auto& o : scene_.frames[f]) {
        if (!map_[o.point_id]) continue;
        auto [it, inserted] =
            point_index.emplace(o.point_id, static_cast<int>(problem.points.size()));
        if (inserted) problem.points.push_back(*map_[o.point_id]);
        problem.observations.push_back({it->second, pose_index[f], o.fp, 1.0});
      }
    }
    for (int f : fixed) problem.fixed_poses.push_back(pose_index[f]);
    if (anchor) problem.scale_anchor = pose_index[*anchor];
    BundleOptions bopt;
    bopt.huber_delta = cfg_.huber_delta;
    try {
      BundleAdjust(cam_, problem, bopt);
    } catch (const Error&) {
      return;  // keep the tracked estimate
    }
    for (int f : frames) poses_[f] = problem.poses[pose_index[f]];
    for (const auto& [id, idx] : point_index) map_[id] = problem.points[idx];
  }

  const SyntheticScene& scene_;
  const CubemapCamera& cam_;
  PipelineConfig cfg_;
  std::vector<std::unordered_map<int, int>> lookup_;
  std::vector<Se3Pose> poses_;
  std::vector<bool> estimated_;
  std::vector<std::optional<Vec3>> map_;
  std::vector<int> processed_;
};

}  // namespace internal

// Two-view initialization, then per-frame pose optimization against the map
// with ground-truth data association, triangulation from the last two
// poses, and periodic local bundle adjustment.
inline TrajectoryEstimate RunVo(const SyntheticScene& scene, const CubemapCamera& cam,
                                const PipelineConfig& cfg) {
  return internal::VoDriver(scene, cam, cfg).Run();
}

////////////////////////////////////////////////////////////////////////////////
// Metric benchmark
////////////////////////////////////////////////////////////////////////////////

struct MetricBenchRow {
  MetricKind metric = MetricKind::kRu;
  std::uint64_t seed = 0;
  double ate_rmse = 0.0;
  bool failed = false;
};

// One VO run per (metric, seed) on identical scenes with local BA off.
// Rows are metric-major in the order given, seeds ascending.
inline std::vector<MetricBenchRow> BenchMetrics(const SceneConfig& cfg,
                                                const std::vector<MetricKind>& metrics,
                                                PipelineConfig pipeline = {}) {
  cfg.Validate();
  pipeline.local_bundle_adjustment = false;
  std::vector<std::vector<MetricBenchRow>> per_metric(metrics.size());
  for (int s = 0; s < cfg.num_seeds; ++s) {
    SceneConfig scfg = cfg;
    scfg.seed = cfg.seed + static_cast<std::uint64_t>(s);
    const SyntheticScene scene = GenerateScene(scfg);
    const CubemapCamera cam = scene.Camera();
    const Trajectory gt = scene.GroundTruth();
    const double length = scene.TrajectoryLength();
    for (std::size_t m = 0; m < metrics.size(); ++m) {
      MetricBenchRow row;
      row.metric = metrics[m];
      row.seed = scfg.seed;
      PipelineConfig pcfg = pipeline;
      pcfg.metric = metrics[m];
      pcfg.seed = scfg.seed;
      try {
        const auto est = RunVo(scene, cam, pcfg);
        row.ate_rmse = AteRmse(est.trajectory, gt);
        row.failed = !std::isfinite(row.ate_rmse) || row.ate_rmse > 10.0 * length;
      } catch (const Error&) {
        row.ate_rmse = std::numeric_limits<double>::infinity();
        row.failed = true;
      }
      per_metric[m].push_back(row);
    }
  }
  std::vector<MetricBenchRow> rows;
  for (const auto& v : per_metric) rows.insert(rows.end(), v.begin(), v.end());
  return rows;
}

}  // namespace cubemap
