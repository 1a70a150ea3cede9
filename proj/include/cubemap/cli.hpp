#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cubemap/calib.hpp"
#include "cubemap/epipolar.hpp"
#include "cubemap/error.hpp"
#include "cubemap/eval.hpp"
#include "cubemap/image.hpp"
#include "cubemap/optim.hpp"
#include "cubemap/remap.hpp"
#include "cubemap/report.hpp"
#include "cubemap/sim.hpp"

namespace cubemap::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

struct CliConfig {
  std::string subcommand;
  std::string calib;
  std::vector<std::string> inputs;
  std::string out = ".";
  int face_size = 650;
  std::string active_faces = "front,left,right,up,down";
  double th = 1.0;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> metrics;
  std::string scene;
  std::string est;
  std::string gt;
};

inline std::vector<Face> ParseFaceList(const std::string& list) {
  std::vector<Face> faces;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) faces.push_back(ParseFace(item));
  }
  if (faces.empty()) throw Error(ErrorKind::kValidation, "no active faces given");
  return faces;
}

// Observation file: one "face,u,v" row per point, optional header line.
// Row i of both files forms correspondence i.
inline std::vector<FacePoint> ReadObservations(const std::string& path) {
  std::ifstream file(path);
  if (!file) throw Error(ErrorKind::kIo, "cannot open observations " + path);
  std::vector<FacePoint> points;
  std::string line;
  int line_number = 0;
  while (std::getline(file, line)) {
    ++line_number;
    if (line.empty() || line[0] == '#' || line.rfind("face", 0) == 0) continue;
    std::stringstream ss(line);
    std::string face;
    std::string u;
    std::string v;
    if (!std::getline(ss, face, ',') || !std::getline(ss, u, ',') || !std::getline(ss, v)) {
      throw Error(ErrorKind::kParse, path + " line " + std::to_string(line_number) +
                                         ": expected face,u,v");
    }
    try {
      points.push_back({ParseFace(face), Vec2(std::stod(u), std::stod(v))});
    } catch (const std::invalid_argument&) {
      throw Error(ErrorKind::kParse, path + " line " + std::to_string(line_number) +
                                         ": bad coordinate");
    }
  }
  return points;
}

namespace internal {

inline std::filesystem::path PrepareOutput(const CliConfig& cfg) {
  std::filesystem::path dir(cfg.out);
  std::filesystem::create_directories(dir);
  return dir;
}

inline void WriteText(const std::filesystem::path& path, const std::string& text) {
  std::ofstream file(path);
  if (!file) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  file << text;
}

inline int RunRemap(const CliConfig& cfg, std::ostream& out) {
  const auto intr = LoadOcamCalib(cfg.calib);
  const CubemapCamera cam(cfg.face_size, ParseFaceList(cfg.active_faces));
  const GrayImage src = ReadPgm(cfg.inputs.at(0));
  const RemapTable table = BuildRemapTable(intr, cam);
  const CubemapImages cube = RemapImage(table, src);
  const auto dir = PrepareOutput(cfg);
  for (std::size_t i = 0; i < cube.faces.size(); ++i) {
    const auto path = dir / (std::string(FaceName(cube.faces[i])) + ".pgm");
    WritePgm(path.string(), cube.images[i]);
    out << "wrote " << path.string() << '\n';
  }
  const auto cross = dir / "cross.pgm";
  WritePgm(cross.string(), ComposeCross(cube, cfg.face_size));
  out << "wrote " << cross.string() << '\n';
  return kExitOk;
}

inline int RunInit(const CliConfig& cfg, std::ostream& out) {
  if (cfg.inputs.size() != 2) {
    throw Error(ErrorKind::kValidation, "init needs exactly two --in observation files");
  }
  const CubemapCamera cam(cfg.face_size, ParseFaceList(cfg.active_faces));
  const auto a = ReadObservations(cfg.inputs[0]);
  const auto b = ReadObservations(cfg.inputs[1]);
  if (a.size() != b.size()) {
    throw Error(ErrorKind::kValidation, "observation files differ in length");
  }
  std::vector<Correspondence> corrs;
  for (std::size_t i = 0; i < a.size(); ++i) corrs.push_back(MakeCorrespondence(cam, a[i], b[i]));
  RansacConfig rc;
  rc.th = cfg.th;
  rc.seed = cfg.seed.value_or(0);
  const auto ransac = RansacEssential(cam, corrs, rc);
  const auto motion =
      DecomposeEssential(ransac.model.E, ::cubemap::internal::Select(corrs, ransac.inliers));

  const auto dir = PrepareOutput(cfg);
  std::ostringstream pose;
  pose << std::setprecision(17);
  const auto row = [&](const char* name, const auto& m) {
    pose << name;
    for (int r = 0; r < m.rows(); ++r) {
      for (int c = 0; c < m.cols(); ++c) pose << ' ' << m(r, c);
    }
    pose << '\n';
  };
  row("E", ransac.model.E);
  row("R", motion.rotation);
  row("t", motion.translation);
  WriteText(dir / "relative_pose.txt", pose.str());

  CsvTable inliers{{"index", "inlier", "residual"}, {}};
  for (std::size_t i = 0; i < corrs.size(); ++i) {
    inliers.rows.push_back({std::to_string(i), ransac.inliers[i] ? "1" : "0",
                            FormatNumber(EpipolarResidual(ransac.model.E, corrs[i].r1, corrs[i].r2))});
  }
  WriteText(dir / "inliers.csv", ToCsv(inliers));
  out << "inliers " << ransac.num_inliers << " of " << corrs.size() << '\n';
  return kExitOk;
}

inline SceneConfig SceneFromFlags(const CliConfig& cfg) {
  SceneConfig scene = LoadSceneConfig(cfg.scene);
  scene.face_size = cfg.face_size;
  if (cfg.seed) scene.seed = *cfg.seed;
  return scene;
}

inline int RunVoCommand(const CliConfig& cfg, std::ostream& out) {
  const SceneConfig scfg = SceneFromFlags(cfg);
  const SyntheticScene scene = GenerateScene(scfg);
  const CubemapCamera cam(cfg.face_size, ParseFaceList(cfg.active_faces));
  PipelineConfig pcfg;
  pcfg.th = cfg.th;
  pcfg.seed = scfg.seed;
  if (!cfg.metrics.empty()) pcfg.metric = ParseMetric(cfg.metrics.front());
  const auto est = RunVo(scene, cam, pcfg);
  const auto gt = scene.GroundTruth();
  const auto dir = PrepareOutput(cfg);
  WriteTrajectory((dir / "trajectory.txt").string(), est.trajectory);
  WriteTrajectory((dir / "ground_truth.txt").string(), gt);
  if (!est.stats.empty()) WriteText(dir / "stats.csv", ToCsv(FrameStatsReport(est.stats)));
  char line[64];
  std::snprintf(line, sizeof(line), "ate_rmse %.6f\n", AteRmse(est.trajectory, gt));
  out << line;
  return kExitOk;
}

inline int RunBench(const CliConfig& cfg, std::ostream& out) {
  const SceneConfig scfg = SceneFromFlags(cfg);
  std::vector<MetricKind> metrics;
  for (const auto& m : cfg.metrics) metrics.push_back(ParseMetric(m));
  if (metrics.empty()) metrics.assign(kAllMetrics.begin(), kAllMetrics.end());
  PipelineConfig pcfg;
  pcfg.th = cfg.th;
  const auto rows = BenchMetrics(scfg, metrics, pcfg);
  const auto dir = PrepareOutput(cfg);
  const auto path = dir / "bench_metrics.csv";
  WriteText(path, ToCsv(BenchReport(rows)));
  out << "wrote " << path.string() << '\n';
  return kExitOk;
}

inline int RunAte(const CliConfig& cfg, std::ostream& out) {
  const Trajectory est = ReadTrajectory(cfg.est);
  const Trajectory gt = ReadTrajectory(cfg.gt);
  char line[64];
  std::snprintf(line, sizeof(line), "ate_rmse %.6f\n", AteRmse(est, gt));
  out << line;
  return kExitOk;
}

}  // namespace internal

inline int Dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CliConfig cfg;
  CLI::App app{"Cubemap fisheye visual odometry toolkit"};
  app.require_subcommand(1);

  const auto add_faces = [&](CLI::App* sub) {
    sub->add_option("--faces", cfg.face_size, "Cube face size in pixels")
        ->check(CLI::Range(64, 4096));
    sub->add_option("--active-faces", cfg.active_faces, "Comma-separated active faces");
  };

  auto* remap = app.add_subcommand("remap", "Fisheye PGM to cubemap face PGMs");
  remap->add_option("--calib", cfg.calib, "OCamCalib calibration file")->required();
  remap->add_option("--in", cfg.inputs, "Fisheye PGM image")->required()->expected(1);
  remap->add_option("--out", cfg.out, "Output directory");
  add_faces(remap);

  auto* init = app.add_subcommand("init", "Two-view relative pose from face observations");
  init->add_option("--in", cfg.inputs, "Observation CSV (give twice)")->required()->expected(2);
  init->add_option("--out", cfg.out, "Output directory");
  init->add_option("--th", cfg.th, "Inlier band in face pixels")->check(CLI::PositiveNumber);
  init->add_option("--seed", cfg.seed, "RANSAC seed");
  add_faces(init);

  auto* vo = app.add_subcommand("vo", "Synthetic visual odometry run");
  vo->add_option("--scene", cfg.scene, "Scene config file")->required();
  vo->add_option("--out", cfg.out, "Output directory");
  vo->add_option("--th", cfg.th, "Inlier band in face pixels")->check(CLI::PositiveNumber);
  vo->add_option("--seed", cfg.seed, "Scene and RANSAC seed");
  vo->add_option("--metric", cfg.metrics, "Pose optimization metric")->expected(1);
  add_faces(vo);

  auto* bench = app.add_subcommand("bench-metrics", "ATE per pose-optimization metric");
  bench->add_option("--scene", cfg.scene, "Scene config file")->required();
  bench->add_option("--out", cfg.out, "Output directory");
  bench->add_option("--th", cfg.th, "Inlier band in face pixels")->check(CLI::PositiveNumber);
  bench->add_option("--seed", cfg.seed, "First scene seed");
  bench->add_option("--metric", cfg.metrics, "Metrics to compare (repeatable)");
  add_faces(bench);

  auto* ate = app.add_subcommand("ate", "ATE RMSE between two TUM trajectories");
  ate->add_option("--est", cfg.est, "Estimated trajectory")->required();
  ate->add_option("--gt", cfg.gt, "Ground-truth trajectory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << '\n' << app.help();
    return kExitUsage;
  }

  try {
    if (remap->parsed()) return internal::RunRemap(cfg, out);
    if (init->parsed()) return internal::RunInit(cfg, out);
    if (vo->parsed()) return internal::RunVoCommand(cfg, out);
    if (bench->parsed()) return internal::RunBench(cfg, out);
    if (ate->parsed()) return internal::RunAte(cfg, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace cubemap::cli
