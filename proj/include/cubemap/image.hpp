#pragma once

#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "cubemap/error.hpp"

namespace cubemap {

// 8-bit single-channel image, row-major.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  GrayImage() = default;
  GrayImage(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {
    if (w <= 0 || h <= 0) {
      throw Error(ErrorKind::kValidation, "image dimensions must be positive");
    }
  }

  std::uint8_t& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int x, int y) const {
    return data[static_cast<std::size_t>(y) * width + x];
  }

  bool operator==(const GrayImage&) const = default;
};

namespace internal {

inline void SkipPnmSpace(std::istream& in) {
  while (true) {
    const int ch = in.peek();
    if (ch == '#') {
      std::string comment;
      std::getline(in, comment);
    } else if (ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r') {
      in.get();
    } else {
      return;
    }
  }
}

}  // namespace internal

// Binary PGM (P5), maxval 255.
inline GrayImage ReadPgm(std::istream& in) {
  std::string magic;
  in >> magic;
  if (magic != "P5") {
    throw Error(ErrorKind::kParse, "not a binary PGM (P5) stream");
  }
  int header[3];
  for (int& value : header) {
    internal::SkipPnmSpace(in);
    if (!(in >> value)) throw Error(ErrorKind::kParse, "truncated PGM header");
  }
  if (header[2] != 255) {
    throw Error(ErrorKind::kParse, "only maxval 255 PGM images are supported");
  }
  in.get();  // single whitespace before the raster
  GrayImage image(header[0], header[1]);
  in.read(reinterpret_cast<char*>(image.data.data()),
          static_cast<std::streamsize>(image.data.size()));
  if (in.gcount() != static_cast<std::streamsize>(image.data.size())) {
    throw Error(ErrorKind::kParse, "truncated PGM raster");
  }
  return image;
}

inline void WritePgm(std::ostream& out, const GrayImage& image) {
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.data.data()),
            static_cast<std::streamsize>(image.data.size()));
}

inline GrayImage ReadPgm(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw Error(ErrorKind::kIo, "cannot open " + path);
  return ReadPgm(file);
}

inline void WritePgm(const std::string& path, const GrayImage& image) {
  std::ofstream file(path, std::ios::binary);
  if (!file) throw Error(ErrorKind::kIo, "cannot write " + path);
  WritePgm(file, image);
}

}  // namespace cubemap
