#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace deeplight {

struct ImageRGB {
  std::int64_t width = 0;
  std::int64_t height = 0;
  std::vector<std::uint8_t> pixels;  // row-major, 3 bytes per pixel

  ImageRGB() = default;
  ImageRGB(std::int64_t w, std::int64_t h)
      : width(w), height(h),
        pixels(static_cast<std::size_t>(w * h * 3), 0) {}

  void set(std::int64_t x, std::int64_t y, std::uint8_t r, std::uint8_t g,
           std::uint8_t b) {
    const std::size_t i = static_cast<std::size_t>((y * width + x) * 3);
    pixels[i] = r;
    pixels[i + 1] = g;
    pixels[i + 2] = b;
  }
};

// 8-bit truecolor PNG, zlib-deflated, no interlacing.
void write_png(const std::string& path, const ImageRGB& img);

}  // namespace deeplight
