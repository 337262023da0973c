#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace tomembed {

// 8-bit RGB image, row-major, 3 bytes per pixel.
struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t* at(std::size_t row, std::size_t col) { return pixels.data() + (row * width + col) * 3; }
  const std::uint8_t* at(std::size_t row, std::size_t col) const { return pixels.data() + (row * width + col) * 3; }
};

void write_png(const std::filesystem::path& path, const RgbImage& image);
// Accepts any PNG; palette, grey and 16-bit images are converted to 8-bit RGB
// and alpha is dropped.
RgbImage read_png(const std::filesystem::path& path);

}  // namespace tomembed
