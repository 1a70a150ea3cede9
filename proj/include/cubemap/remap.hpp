#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "cubemap/calib.hpp"
#include "cubemap/image.hpp"

namespace cubemap {

// Per active face, a face_size x face_size grid of fisheye source
// coordinates (x=col, y=row); NaN marks pixels outside the lens FoV or the
// source image.
struct RemapTable {
  int face_size = 0;
  int source_width = 0;
  int source_height = 0;
  std::vector<Face> faces;
  std::vector<std::vector<Vec2>> coords;

  static bool IsSentinel(const Vec2& p) { return std::isnan(p.x()); }

  const Vec2& at(std::size_t face_index, int u, int v) const {
    return coords[face_index][static_cast<std::size_t>(v) * face_size + u];
  }
};

inline RemapTable BuildRemapTable(const FisheyeIntrinsics& intr, const CubemapCamera& cam) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  RemapTable table;
  table.face_size = cam.face_size();
  table.source_width = intr.width;
  table.source_height = intr.height;
  table.faces = cam.active_faces();
  const int size = cam.face_size();
  const double max_angle = intr.MaxPolarAngle();
  for (Face face : table.faces) {
    std::vector<Vec2> grid(static_cast<std::size_t>(size) * size, Vec2(nan, nan));
    for (int v = 0; v < size; ++v) {
      for (int u = 0; u < size; ++u) {
        const Vec3 b = cam.Unproject({face, Vec2(u, v)});
        if (std::atan2(std::hypot(b.x(), b.y()), b.z()) > max_angle) continue;
        Vec2 src;
        try {
          src = BearingToPixel(intr, b);
        } catch (const Error&) {
          continue;
        }
        if (InImage(intr, src)) grid[static_cast<std::size_t>(v) * size + u] = src;
      }
    }
    table.coords.push_back(std::move(grid));
  }
  return table;
}

// Bilinear sample with border clamping.
inline double SampleBilinear(const GrayImage& image, const Vec2& p) {
  const double x = std::clamp(p.x(), 0.0, image.width - 1.0);
  const double y = std::clamp(p.y(), 0.0, image.height - 1.0);
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const int x1 = std::min(x0 + 1, image.width - 1);
  const int y1 = std::min(y0 + 1, image.height - 1);
  const double ax = x - x0;
  const double ay = y - y0;
  const double top = (1.0 - ax) * image.at(x0, y0) + ax * image.at(x1, y0);
  const double bottom = (1.0 - ax) * image.at(x0, y1) + ax * image.at(x1, y1);
  return (1.0 - ay) * top + ay * bottom;
}

struct CubemapImages {
  std::vector<Face> faces;
  std::vector<GrayImage> images;

  const GrayImage* Find(Face face) const {
    for (std::size_t i = 0; i < faces.size(); ++i) {
      if (faces[i] == face) return &images[i];
    }
    return nullptr;
  }
};

inline CubemapImages RemapImage(const RemapTable& table, const GrayImage& src) {
  if (src.width != table.source_width || src.height != table.source_height) {
    throw Error(ErrorKind::kValidation, "source image size does not match calibration");
  }
  CubemapImages out;
  out.faces = table.faces;
  for (std::size_t fi = 0; fi < table.faces.size(); ++fi) {
    GrayImage face(table.face_size, table.face_size, 0);
    for (int v = 0; v < table.face_size; ++v) {
      for (int u = 0; u < table.face_size; ++u) {
        const Vec2& p = table.at(fi, u, v);
        if (RemapTable::IsSentinel(p)) continue;
        face.at(u, v) = static_cast<std::uint8_t>(
            std::lround(std::clamp(SampleBilinear(src, p), 0.0, 255.0)));
      }
    }
    out.images.push_back(std::move(face));
  }
  return out;
}

// Unfolded cross layout: Up above Front; Left, Front, Right in the middle
// row; Down below Front. Back, when present, sits right of Right.
inline GrayImage ComposeCross(const CubemapImages& cube, int face_size) {
  const bool has_back = cube.Find(Face::kBack) != nullptr;
  GrayImage out((has_back ? 4 : 3) * face_size, 3 * face_size, 0);
  const auto place = [&](Face face, int col, int row) {
    const GrayImage* img = cube.Find(face);
    if (img == nullptr) return;
    for (int v = 0; v < face_size; ++v) {
      for (int u = 0; u < face_size; ++u) {
        out.at(col * face_size + u, row * face_size + v) = img->at(u, v);
      }
    }
  };
  place(Face::kUp, 1, 0);
  place(Face::kLeft, 0, 1);
  place(Face::kFront, 1, 1);
  place(Face::kRight, 2, 1);
  place(Face::kDown, 1, 2);
  place(Face::kBack, 3, 1);
  return out;
}

}  // namespace cubemap
