#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ted4/common.hpp"

namespace ted4 {

/// Row-major H x W x 3 RGB image with values nominally in [0,1].
struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  Image() = default;
  Image(int w, int h, double fill = 0.0) : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, fill) {}

  double& at(int row, int col, int ch) { return data[(static_cast<std::size_t>(row) * width + col) * 3 + ch]; }
  double at(int row, int col, int ch) const { return data[(static_cast<std::size_t>(row) * width + col) * 3 + ch]; }
  bool same_shape(const Image& o) const { return width == o.width && height == o.height; }
  bool operator==(const Image&) const = default;
};

/// Binary PPM (P6, maxval 255).
inline void write_ppm(const Image& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot open " + path.string() + " for writing");
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> bytes(img.data.size());
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    bytes[i] = static_cast<unsigned char>(std::lround(std::clamp(img.data[i], 0.0, 1.0) * 255.0));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::io, "failed writing " + path.string());
}

inline Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open " + path.string());
  auto token = [&]() {
    std::string tok;
    while (in >> tok) {
      if (tok[0] != '#') return tok;
      std::string rest;
      std::getline(in, rest);
    }
    fail(ErrorKind::format, "truncated PPM header in " + path.string());
  };
  if (token() != "P6") fail(ErrorKind::format, path.string() + " is not a binary PPM");
  const int w = std::stoi(token()), h = std::stoi(token()), maxval = std::stoi(token());
  if (w <= 0 || h <= 0 || maxval != 255) fail(ErrorKind::format, "unsupported PPM layout in " + path.string());
  in.get();
  Image img(w, h);
  std::vector<unsigned char> bytes(img.data.size());
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) fail(ErrorKind::format, "truncated PPM " + path.string());
  for (std::size_t i = 0; i < bytes.size(); ++i) img.data[i] = bytes[i] / 255.0;
  return img;
}

}  // namespace ted4
