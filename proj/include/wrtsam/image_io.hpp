#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace wrtsam::io {

/// 8-bit grayscale raster.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major

  bool operator==(const GrayImage&) const = default;
};

/// Binary PGM (P5, maxval 255).
void write_pgm(const std::filesystem::path& path, const GrayImage& img);
/// Reads P5 or P2 PGM with maxval <= 255.
GrayImage read_pgm(const std::filesystem::path& path);

}  // namespace wrtsam::io
