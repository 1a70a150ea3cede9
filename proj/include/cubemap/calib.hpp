#pragma once

#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "cubemap/error.hpp"
#include "cubemap/geometry.hpp"

namespace cubemap {

////////////////////////////////////////////////////////////////////////////////
// Fisheye polynomial model
////////////////////////////////////////////////////////////////////////////////

// Omnidirectional polynomial camera model. The source calibration stores
// the distortion center as (row, col); `center` holds it as (x=col, y=row).
// The affine matrix [[c, d], [e, 1]] maps the ideal (row, col) offset onto
// the sensor.
struct FisheyeIntrinsics {
  std::vector<double> cam2world_coeffs;  // a0..aN
  std::vector<double> world2cam_coeffs;  // optional inverse polynomial
  Vec2 center = Vec2::Zero();
  double c = 1.0;
  double d = 0.0;
  double e = 0.0;
  int width = 0;
  int height = 0;
  // Full field of view of the lens. Not part of the polynomial; bounds
  // bearing_to_pixel.
  double fov_deg = 190.0;

  double MaxPolarAngle() const {
    return 0.5 * fov_deg * std::numbers::pi / 180.0;
  }

  // +1 when the polynomial axis already points forward, -1 otherwise.
  double AxisSign() const { return cam2world_coeffs.front() < 0.0 ? -1.0 : 1.0; }

  void Validate() const {
    if (width <= 0 || height <= 0) {
      throw Error(ErrorKind::kValidation, "image size must be positive");
    }
    if (!(center.x() > -0.5 && center.x() < width - 0.5 &&
          center.y() > -0.5 && center.y() < height - 0.5)) {
      throw Error(ErrorKind::kValidation, "distortion center outside image");
    }
    if (cam2world_coeffs.empty()) {
      throw Error(ErrorKind::kValidation, "polynomial has no coefficients");
    }
    if (cam2world_coeffs.front() == 0.0) {
      throw Error(ErrorKind::kValidation, "polynomial a0 must be non-zero");
    }
    if (std::abs(c - d * e) <= 1e-12) {
      throw Error(ErrorKind::kValidation, "affine matrix is not invertible");
    }
    if (!(fov_deg > 0.0 && fov_deg < 360.0)) {
      throw Error(ErrorKind::kValidation, "field of view must be in (0, 360)");
    }
  }
};

namespace internal {

inline double EvalPoly(const std::vector<double>& coeffs, double x) {
  double value = 0.0;
  for (auto it = coeffs.rbegin(); it != coeffs.rend(); ++it) {
    value = value * x + *it;
  }
  return value;
}

inline double EvalPolyDerivative(const std::vector<double>& coeffs, double x) {
  double value = 0.0;
  for (std::size_t i = coeffs.size(); i-- > 1;) {
    value = value * x + static_cast<double>(i) * coeffs[i];
  }
  return value;
}

inline std::vector<double> ParseNumbers(std::string_view line) {
  std::vector<double> values;
  std::istringstream ss{std::string(line)};
  std::string token;
  while (ss >> token) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(token, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != token.size()) {
      throw Error(ErrorKind::kParse, "not a number: '" + token + "'");
    }
    values.push_back(v);
  }
  return values;
}

// Reads a "count v1 .. vcount" group.
inline std::vector<double> ParseCountedGroup(const std::vector<double>& values,
                                             const char* section) {
  if (values.empty()) {
    throw Error(ErrorKind::kParse, std::string(section) + " section missing");
  }
  const double count = values.front();
  if (count < 0 || count != std::floor(count) ||
      static_cast<std::size_t>(count) + 1 != values.size()) {
    throw Error(ErrorKind::kParse,
                std::string(section) + " section: coefficient count mismatch");
  }
  return {values.begin() + 1, values.end()};
}

}  // namespace internal

// Parses the OCamCalib results text format. Line groups, in order:
// cam2world polynomial (count + coefficients), world2cam polynomial (count +
// coefficients, count may be 0), center (row col), affine (c d e), image
// size (height width). An optional sixth group holds the field of view in
// degrees. Lines starting with '#' are comments.
inline FisheyeIntrinsics ParseOcamCalib(std::string_view text) {
  std::vector<std::vector<double>> groups;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    groups.push_back(internal::ParseNumbers(line));
  }
  const auto group = [&](std::size_t i) -> const std::vector<double>& {
    static const std::vector<double> kEmpty;
    return i < groups.size() ? groups[i] : kEmpty;
  };

  FisheyeIntrinsics intr;
  intr.cam2world_coeffs = internal::ParseCountedGroup(group(0), "polynomial");
  if (intr.cam2world_coeffs.empty()) {
    throw Error(ErrorKind::kParse, "polynomial section has no coefficients");
  }
  intr.world2cam_coeffs =
      internal::ParseCountedGroup(group(1), "inverse polynomial");
  if (group(2).size() != 2) {
    throw Error(ErrorKind::kParse, "center section: expected 'row col'");
  }
  intr.center = Vec2(group(2)[1], group(2)[0]);
  if (group(3).size() != 3) {
    throw Error(ErrorKind::kParse, "affine section: expected 'c d e'");
  }
  intr.c = group(3)[0];
  intr.d = group(3)[1];
  intr.e = group(3)[2];
  if (group(4).size() != 2 || group(4)[0] != std::floor(group(4)[0]) ||
      group(4)[1] != std::floor(group(4)[1])) {
    throw Error(ErrorKind::kParse, "image size section: expected 'height width'");
  }
  intr.height = static_cast<int>(group(4)[0]);
  intr.width = static_cast<int>(group(4)[1]);
  if (groups.size() > 5) {
    if (groups.size() > 6 || group(5).size() != 1) {
      throw Error(ErrorKind::kParse, "unexpected trailing data after image size");
    }
    intr.fov_deg = group(5)[0];
  }
  intr.Validate();
  return intr;
}

inline FisheyeIntrinsics LoadOcamCalib(const std::string& path) {
  std::ifstream file(path);
  if (!file) {
    throw Error(ErrorKind::kIo, "cannot open calibration file " + path);
  }
  std::stringstream buffer;
  buffer << file.rdbuf();
  return ParseOcamCalib(buffer.str());
}

inline std::string SerializeOcamCalib(const FisheyeIntrinsics& intr) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "#polynomial coefficients for the DIRECT mapping function\n";
  out << intr.cam2world_coeffs.size();
  for (double a : intr.cam2world_coeffs) out << ' ' << a;
  out << "\n\n#polynomial coefficients for the inverse mapping function\n";
  out << intr.world2cam_coeffs.size();
  for (double a : intr.world2cam_coeffs) out << ' ' << a;
  out << "\n\n#center: \"row\" and \"column\", starting from 0 (C convention)\n";
  out << intr.center.y() << ' ' << intr.center.x() << "\n\n";
  out << "#affine parameters \"c\", \"d\", \"e\"\n";
  out << intr.c << ' ' << intr.d << ' ' << intr.e << "\n\n";
  out << "#image size: \"height\" and \"width\"\n";
  out << intr.height << ' ' << intr.width << "\n\n";
  out << "#field of view in degrees\n" << intr.fov_deg << '\n';
  return out.str();
}

inline bool InImage(const FisheyeIntrinsics& intr, const Vec2& pixel) {
  return pixel.x() >= -0.5 && pixel.x() <= intr.width - 0.5 &&
         pixel.y() >= -0.5 && pixel.y() <= intr.height - 0.5;
}

// Lifts an image pixel (x=col, y=row) to a unit bearing with +z forward,
// x right and y down.
inline Vec3 CamToBearing(const FisheyeIntrinsics& intr, const Vec2& pixel) {
  if (!InImage(intr, pixel)) {
    throw Error(ErrorKind::kDomain, "pixel outside image bounds");
  }
  const double drow = pixel.y() - intr.center.y();
  const double dcol = pixel.x() - intr.center.x();
  const double inv_det = 1.0 / (intr.c - intr.d * intr.e);
  const double xr = inv_det * (drow - intr.d * dcol);
  const double yc = inv_det * (-intr.e * drow + intr.c * dcol);
  const double rho = std::hypot(xr, yc);
  const double z = intr.AxisSign() * internal::EvalPoly(intr.cam2world_coeffs, rho);
  return Vec3(yc, xr, z).normalized();
}

// Projects a bearing onto the fisheye image. Uses the inverse polynomial
// when present, otherwise Newton iteration on the forward polynomial.
inline Vec2 BearingToPixel(const FisheyeIntrinsics& intr, const Vec3& bearing) {
  const double m = std::hypot(bearing.x(), bearing.y());
  const double theta = std::atan2(m, bearing.z());
  if (theta > intr.MaxPolarAngle() + 1e-12) {
    throw Error(ErrorKind::kOutOfFov, "bearing outside calibrated field of view");
  }
  if (m < 1e-15 * bearing.norm()) {
    return intr.center;
  }
  const double sign = intr.AxisSign();

  double rho = 0.0;
  if (!intr.world2cam_coeffs.empty()) {
    // Inverse polynomial in the elevation angle of the source convention.
    const double elevation = std::atan(sign * bearing.z() / m);
    rho = internal::EvalPoly(intr.world2cam_coeffs, elevation);
  } else {
    const auto& poly = intr.cam2world_coeffs;
    // g(rho) = sign * poly(rho) * m - z * rho vanishes at the solution.
    rho = theta * std::abs(poly.front());
    bool converged = false;
    for (int iter = 0; iter < 50; ++iter) {
      const double g = sign * internal::EvalPoly(poly, rho) * m - bearing.z() * rho;
      const double dg = sign * internal::EvalPolyDerivative(poly, rho) * m - bearing.z();
      if (dg == 0.0 || !std::isfinite(dg)) break;
      const double step = g / dg;
      rho -= step;
      if (std::abs(step) < 1e-10) {
        converged = true;
        break;
      }
    }
    if (!converged || !(rho >= 0.0)) {
      throw Error(ErrorKind::kNumeric, "polynomial inversion did not converge");
    }
  }
  const double xr = rho * bearing.y() / m;
  const double yc = rho * bearing.x() / m;
  const double row = intr.c * xr + intr.d * yc + intr.center.y();
  const double col = intr.e * xr + yc + intr.center.x();
  return Vec2(col, row);
}

////////////////////////////////////////////////////////////////////////////////
// Cubemap model
////////////////////////////////////////////////////////////////////////////////

enum class Face : int { kFront = 0, kLeft, kRight, kUp, kDown, kBack };

// Tie-break priority order for face assignment.
inline constexpr std::array<Face, 6> kAllFaces = {
    Face::kFront, Face::kLeft, Face::kRight, Face::kUp, Face::kDown, Face::kBack};

inline constexpr std::array<Face, 5> kDefaultActiveFaces = {
    Face::kFront, Face::kLeft, Face::kRight, Face::kUp, Face::kDown};

inline const char* FaceName(Face face) {
  switch (face) {
    case Face::kFront: return "front";
    case Face::kLeft: return "left";
    case Face::kRight: return "right";
    case Face::kUp: return "up";
    case Face::kDown: return "down";
    case Face::kBack: return "back";
  }
  return "?";
}

inline Face ParseFace(std::string_view name) {
  for (Face f : kAllFaces) {
    if (name == FaceName(f)) return f;
  }
  throw Error(ErrorKind::kParse, "unknown face '" + std::string(name) + "'");
}

// Outward axis of a face in the body frame (x right, y down, z forward).
inline Vec3 FaceAxis(Face face) {
  switch (face) {
    case Face::kFront: return Vec3(0, 0, 1);
    case Face::kLeft: return Vec3(-1, 0, 0);
    case Face::kRight: return Vec3(1, 0, 0);
    case Face::kUp: return Vec3(0, -1, 0);
    case Face::kDown: return Vec3(0, 1, 0);
    case Face::kBack: return Vec3(0, 0, -1);
  }
  return Vec3::Zero();
}

// R_{C_i B}: body frame to face-camera frame. Integer-exact entries.
inline Mat3 FaceRotation(Face face) {
  Mat3 r;
  switch (face) {
    case Face::kFront:
      r.setIdentity();
      break;
    case Face::kLeft:  // Ry(+90)
      r << 0, 0, 1, 0, 1, 0, -1, 0, 0;
      break;
    case Face::kRight:  // Ry(-90)
      r << 0, 0, -1, 0, 1, 0, 1, 0, 0;
      break;
    case Face::kUp:  // Rx(-90)
      r << 1, 0, 0, 0, 0, 1, 0, -1, 0;
      break;
    case Face::kDown:  // Rx(+90)
      r << 1, 0, 0, 0, 0, -1, 0, 1, 0;
      break;
    case Face::kBack:  // Ry(180)
      r << -1, 0, 0, 0, 1, 0, 0, 0, -1;
      break;
  }
  return r;
}

struct FacePoint {
  Face face = Face::kFront;
  Vec2 pixel = Vec2::Zero();
};

// Six 90-degree virtual pinhole cameras sharing one center. The body frame
// is the front camera's frame.
class CubemapCamera {
 public:
  explicit CubemapCamera(int face_size = 650)
      : CubemapCamera(face_size, {kDefaultActiveFaces.begin(), kDefaultActiveFaces.end()}) {}

  CubemapCamera(int face_size, const std::vector<Face>& active_faces)
      : face_size_(face_size) {
    if (face_size <= 0) {
      throw Error(ErrorKind::kValidation, "face size must be positive");
    }
    if (active_faces.empty()) {
      throw Error(ErrorKind::kValidation, "at least one face must be active");
    }
    active_.fill(false);
    for (Face f : active_faces) active_[static_cast<int>(f)] = true;
    for (Face f : kAllFaces) {
      if (active_[static_cast<int>(f)]) active_faces_.push_back(f);
    }
    for (Face f : kAllFaces) rotations_[static_cast<int>(f)] = FaceRotation(f);
  }

  int face_size() const { return face_size_; }
  double focal() const { return 0.5 * face_size_; }
  double principal() const { return 0.5 * (face_size_ - 1); }
  Vec2 principal_point() const { return Vec2(principal(), principal()); }
  const std::vector<Face>& active_faces() const { return active_faces_; }
  bool IsActive(Face face) const { return active_[static_cast<int>(face)]; }
  const Mat3& Rotation(Face face) const { return rotations_[static_cast<int>(face)]; }

  // Pixel extent of a face: projections of in-face bearings land in
  // [-0.5, S - 0.5] on both axes.
  bool InFace(const Vec2& pixel, double tol = 1e-9) const {
    const double lo = -0.5 - tol;
    const double hi = face_size_ - 0.5 + tol;
    return pixel.x() >= lo && pixel.x() <= hi && pixel.y() >= lo && pixel.y() <= hi;
  }

  // Face whose axis has the largest dot product with the direction; ties
  // resolved by kAllFaces order. Throws when that face is inactive.
  Face FaceOf(const Vec3& direction) const {
    Face best = Face::kFront;
    double best_dot = -std::numeric_limits<double>::infinity();
    for (Face f : kAllFaces) {
      const double dot = FaceAxis(f).dot(direction);
      if (dot > best_dot) {
        best_dot = dot;
        best = f;
      }
    }
    if (!IsActive(best)) {
      throw Error(ErrorKind::kNoFace,
                  std::string("direction falls on inactive face ") + FaceName(best));
    }
    return best;
  }

  // Pinhole projection of a body-frame point onto a given face.
  Vec2 ProjectOnFace(Face face, const Vec3& p_body) const {
    const Vec3 p_face = Rotation(face) * p_body;
    if (p_face.z() <= 1e-12) {
      throw Error(ErrorKind::kDegenerate, "point not in front of face");
    }
    return Vec2(focal() * p_face.x() / p_face.z() + principal(),
                focal() * p_face.y() / p_face.z() + principal());
  }

  FacePoint Project(const Vec3& p_body) const {
    const double norm = p_body.norm();
    if (!(norm > 0.0)) {
      throw Error(ErrorKind::kDegenerate, "cannot project the zero vector");
    }
    const Face face = FaceOf(p_body / norm);
    return {face, ProjectOnFace(face, p_body)};
  }

  Vec3 Unproject(const FacePoint& fp) const {
    if (!IsActive(fp.face)) {
      throw Error(ErrorKind::kNoFace, std::string("inactive face ") + FaceName(fp.face));
    }
    const Vec3 ray((fp.pixel.x() - principal()) / focal(),
                   (fp.pixel.y() - principal()) / focal(), 1.0);
    return (Rotation(fp.face).transpose() * ray).normalized();
  }

 private:
  int face_size_;
  std::array<bool, 6> active_{};
  std::vector<Face> active_faces_;
  std::array<Mat3, 6> rotations_;
};

}  // namespace cubemap
