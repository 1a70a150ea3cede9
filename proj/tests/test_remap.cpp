#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "cubemap/remap.hpp"
#include "test_support.hpp"

namespace cubemap {
namespace {

using testing::EquidistantIntrinsics;

struct FaceAxes {
  Face face;
  Vec3 right, down, forward;
};

// Written out by hand from the face conventions (x right, y down, z forward).
const FaceAxes kAxes[] = {
    {Face::kFront, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}},
    {Face::kLeft, {0, 0, 1}, {0, 1, 0}, {-1, 0, 0}},
    {Face::kRight, {0, 0, -1}, {0, 1, 0}, {1, 0, 0}},
    {Face::kUp, {1, 0, 0}, {0, 0, 1}, {0, -1, 0}},
    {Face::kDown, {1, 0, 0}, {0, 0, -1}, {0, 1, 0}},
};

// Independent fisheye projection for the equidistant test lens: bisection on
// the polar angle of the forward polynomial.
std::optional<Vec2> ReferencePixel(const FisheyeIntrinsics& intr, const Vec3& b) {
  const double m = std::hypot(b.x(), b.y());
  const double theta = std::atan2(m, b.z());
  if (theta > intr.MaxPolarAngle()) return std::nullopt;
  if (m == 0.0) return intr.center;
  const auto polar = [&](double rho) {
    double poly = 0.0;
    for (std::size_t k = intr.cam2world_coeffs.size(); k-- > 0;) {
      poly = poly * rho + intr.cam2world_coeffs[k];
    }
    return std::atan2(rho, -poly);
  };
  double lo = 0.0;
  double hi = 2000.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (polar(mid) < theta ? lo : hi) = mid;
  }
  const double rho = 0.5 * (lo + hi);
  const Vec2 p = intr.center + rho * Vec2(b.x(), b.y()) / m;
  if (p.x() < -0.5 || p.x() > intr.width - 0.5 || p.y() < -0.5 || p.y() > intr.height - 0.5) {
    return std::nullopt;
  }
  return p;
}

TEST(RemapTable, DimensionsAndBounds) {
  const auto intr = EquidistantIntrinsics();
  const CubemapCamera cam(96);
  const auto table = BuildRemapTable(intr, cam);
  EXPECT_EQ(table.face_size, 96);
  EXPECT_EQ(table.faces, cam.active_faces());
  ASSERT_EQ(table.coords.size(), 5u);
  int valid = 0;
  for (std::size_t fi = 0; fi < table.faces.size(); ++fi) {
    EXPECT_EQ(table.coords[fi].size(), 96u * 96u);
    for (int v = 0; v < 96; ++v) {
      for (int u = 0; u < 96; ++u) {
        const Vec2& p = table.at(fi, u, v);
        if (RemapTable::IsSentinel(p)) continue;
        ++valid;
        EXPECT_TRUE(InImage(intr, p));
      }
    }
  }
  EXPECT_GT(valid, 96 * 96 * 2);
}

TEST(RemapTable, FrontCenterHitsDistortionCenter) {
  const auto intr = EquidistantIntrinsics();
  const CubemapCamera cam(65);  // odd size: pixel 32 is the principal point
  const auto table = BuildRemapTable(intr, cam);
  EXPECT_LT((table.at(0, 32, 32) - intr.center).norm(), 1e-12);
}

TEST(RemapTable, OuterLeftEdgeBeyondFieldOfViewIsSentinel) {
  const auto intr = EquidistantIntrinsics();
  const CubemapCamera cam(64);
  const auto table = BuildRemapTable(intr, cam);
  const std::size_t left = 1;
  ASSERT_EQ(table.faces[left], Face::kLeft);
  for (int v = 0; v < 64; ++v) {
    for (int u = 0; u < 64; ++u) {
      const Vec3 b = cam.Unproject({Face::kLeft, Vec2(u, v)});
      const double polar = std::atan2(std::hypot(b.x(), b.y()), b.z());
      if (polar > intr.MaxPolarAngle()) {
        EXPECT_TRUE(RemapTable::IsSentinel(table.at(left, u, v)));
      }
    }
    // Column 0 looks about 134 degrees off-axis.
    EXPECT_TRUE(RemapTable::IsSentinel(table.at(left, 0, v)));
  }
}

TEST(RemapTable, MatchesIndependentComputation) {
  const auto intr = EquidistantIntrinsics();
  const int size = 80;
  const CubemapCamera cam(size);
  const auto table = BuildRemapTable(intr, cam);
  const double f = 0.5 * size;
  const double c = 0.5 * (size - 1);
  for (std::size_t fi = 0; fi < table.faces.size(); ++fi) {
    const FaceAxes& ax = kAxes[fi];
    ASSERT_EQ(ax.face, table.faces[fi]);
    for (int v = 0; v < size; ++v) {
      for (int u = 0; u < size; ++u) {
        const Vec3 b =
            (ax.forward + ax.right * ((u - c) / f) + ax.down * ((v - c) / f)).normalized();
        const auto ref = ReferencePixel(intr, b);
        const Vec2& got = table.at(fi, u, v);
        ASSERT_EQ(ref.has_value(), !RemapTable::IsSentinel(got))
            << FaceName(ax.face) << " " << u << "," << v;
        if (ref) {
          EXPECT_LT((got - *ref).norm(), 1e-7);
        }
      }
    }
  }
}

TEST(RemapTable, EntriesLiftBackToTheirFacePixel) {
  auto intr = EquidistantIntrinsics();
  intr.c = 0.9995;
  intr.d = 4e-4;
  intr.e = -3e-4;
  const CubemapCamera cam(72);
  const auto table = BuildRemapTable(intr, cam);
  for (std::size_t fi = 0; fi < table.faces.size(); ++fi) {
    for (int v = 0; v < 72; ++v) {
      for (int u = 0; u < 72; ++u) {
        const Vec2& p = table.at(fi, u, v);
        if (RemapTable::IsSentinel(p)) continue;
        const Vec3 b = CamToBearing(intr, p);
        const Vec2 back = cam.ProjectOnFace(table.faces[fi], b);
        EXPECT_LT((back - Vec2(u, v)).norm(), 1e-4);
      }
    }
  }
}

TEST(RemapTable, Deterministic) {
  const auto intr = EquidistantIntrinsics();
  const CubemapCamera cam(48);
  const auto a = BuildRemapTable(intr, cam);
  const auto b = BuildRemapTable(intr, cam);
  for (std::size_t fi = 0; fi < a.coords.size(); ++fi) {
    for (std::size_t k = 0; k < a.coords[fi].size(); ++k) {
      const Vec2& p = a.coords[fi][k];
      const Vec2& q = b.coords[fi][k];
      if (RemapTable::IsSentinel(p)) {
        EXPECT_TRUE(RemapTable::IsSentinel(q));
      } else {
        EXPECT_EQ(p, q);
      }
    }
  }
}

TEST(RemapImage, ConstantSourceAndSentinelFill) {
  const auto intr = EquidistantIntrinsics();
  const CubemapCamera cam(64);
  const auto table = BuildRemapTable(intr, cam);
  const GrayImage src(intr.width, intr.height, 128);
  const auto cube = RemapImage(table, src);
  ASSERT_EQ(cube.images.size(), 5u);
  for (std::size_t fi = 0; fi < cube.images.size(); ++fi) {
    EXPECT_EQ(cube.images[fi].width, 64);
    EXPECT_EQ(cube.images[fi].height, 64);
    for (int v = 0; v < 64; ++v) {
      for (int u = 0; u < 64; ++u) {
        const bool sentinel = RemapTable::IsSentinel(table.at(fi, u, v));
        EXPECT_EQ(cube.images[fi].at(u, v), sentinel ? 0 : 128);
      }
    }
  }
}

TEST(RemapImage, SizeMismatchIsRejected) {
  const auto intr = EquidistantIntrinsics();
  const auto table = BuildRemapTable(intr, CubemapCamera(32));
  try {
    RemapImage(table, GrayImage(640, 480, 0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kValidation);
  }
}

TEST(RemapImage, BilinearSampling) {
  GrayImage img(2, 2, 0);
  img.at(0, 0) = 0;
  img.at(1, 0) = 100;
  img.at(0, 1) = 50;
  img.at(1, 1) = 150;
  EXPECT_DOUBLE_EQ(SampleBilinear(img, Vec2(0.5, 0.5)), 75.0);
  EXPECT_DOUBLE_EQ(SampleBilinear(img, Vec2(0.25, 0.0)), 25.0);
  EXPECT_DOUBLE_EQ(SampleBilinear(img, Vec2(-3.0, -3.0)), 0.0);
  EXPECT_DOUBLE_EQ(SampleBilinear(img, Vec2(9.0, 9.0)), 150.0);
}

TEST(RemapImage, MatchesDirectPinholeRender) {
  // At S = 160 every checker edge falls on a face pixel boundary, so a fine
  // source image leaves almost nothing to interpolation.
  const auto intr = EquidistantIntrinsics(2560, 1440, 660);
  const int size = 160;
  const CubemapCamera cam(size);
  const auto cube = RemapImage(BuildRemapTable(intr, cam), testing::RenderFisheye(intr, 2));
  const auto table = BuildRemapTable(intr, cam);
  for (std::size_t fi = 0; fi < cube.faces.size(); ++fi) {
    const FaceAxes& ax = kAxes[fi];
    const GrayImage ref = testing::RenderPinholeFace(ax.right, ax.down, ax.forward, size, 2);
    double sum = 0.0;
    int count = 0;
    for (int v = 0; v < size; ++v) {
      for (int u = 0; u < size; ++u) {
        if (RemapTable::IsSentinel(table.at(fi, u, v))) continue;
        sum += std::abs(cube.images[fi].at(u, v) - ref.at(u, v));
        ++count;
      }
    }
    ASSERT_GT(count, 0);
    EXPECT_LT(sum / count, 0.1) << FaceName(ax.face);
  }
}

TEST(Cross, LayoutPlacesFaces) {
  CubemapImages cube;
  for (Face f : kDefaultActiveFaces) {
    cube.faces.push_back(f);
    cube.images.emplace_back(4, 4, static_cast<std::uint8_t>(10 + static_cast<int>(f)));
  }
  const GrayImage cross = ComposeCross(cube, 4);
  EXPECT_EQ(cross.width, 12);
  EXPECT_EQ(cross.height, 12);
  EXPECT_EQ(cross.at(5, 1), 10 + static_cast<int>(Face::kUp));
  EXPECT_EQ(cross.at(1, 5), 10 + static_cast<int>(Face::kLeft));
  EXPECT_EQ(cross.at(5, 5), 10 + static_cast<int>(Face::kFront));
  EXPECT_EQ(cross.at(9, 5), 10 + static_cast<int>(Face::kRight));
  EXPECT_EQ(cross.at(5, 9), 10 + static_cast<int>(Face::kDown));
  EXPECT_EQ(cross.at(0, 0), 0);
  cube.faces.push_back(Face::kBack);
  cube.images.emplace_back(4, 4, 99);
  const GrayImage wide = ComposeCross(cube, 4);
  EXPECT_EQ(wide.width, 16);
  EXPECT_EQ(wide.at(13, 5), 99);
}

TEST(Pgm, RoundTrip) {
  GrayImage img(7, 3, 0);
  for (int i = 0; i < 21; ++i) img.data[i] = static_cast<std::uint8_t>(i * 12);
  std::stringstream ss;
  WritePgm(ss, img);
  EXPECT_EQ(ReadPgm(ss), img);
}

TEST(Pgm, CommentsInHeader) {
  std::stringstream ss;
  ss << "P5\n# made by hand\n2 1\n255\n" << '\x05' << '\xff';
  const GrayImage img = ReadPgm(ss);
  EXPECT_EQ(img.width, 2);
  EXPECT_EQ(img.at(0, 0), 5);
  EXPECT_EQ(img.at(1, 0), 255);
}

TEST(Pgm, RejectsOtherFormats) {
  std::stringstream ss("P2\n1 1\n255\n0\n");
  EXPECT_THROW(ReadPgm(ss), Error);
  std::stringstream truncated("P5\n4 4\n255\nab");
  EXPECT_THROW(ReadPgm(truncated), Error);
}

}  // namespace
}  // namespace cubemap
