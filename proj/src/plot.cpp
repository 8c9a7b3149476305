#include "deeplight/plot.hpp"

#include <algorithm>
#include <cmath>

#include "deeplight/errors.hpp"

namespace deeplight {

namespace {

constexpr int kPad = 4;

struct Color {
  std::uint8_t r, g, b;
};

Color lerp(Color a, Color b, double t) {
  const auto mix = [&](std::uint8_t x, std::uint8_t y) {
    return static_cast<std::uint8_t>(std::lround(x + (y - x) * t));
  };
  return {mix(a.r, b.r), mix(a.g, b.g), mix(a.b, b.b)};
}

// dark violet -> ember -> pale yellow, clamped to [0,1]
Color heat(double p) {
  p = std::clamp(p, 0.0, 1.0);
  const Color lo{15, 10, 45};
  const Color mid{200, 60, 30};
  const Color hi{252, 250, 160};
  return p < 0.5 ? lerp(lo, mid, p * 2.0) : lerp(mid, hi, (p - 0.5) * 2.0);
}

void fill_panel(ImageRGB& img, std::int64_t x0, std::int64_t y0,
                const TensorF& plane, std::int64_t lead, int scale,
                bool binary) {
  const std::int64_t rows = plane.shape[1];
  const std::int64_t cols = plane.shape[2];
  for (std::int64_t r = 0; r < rows; ++r) {
    for (std::int64_t c = 0; c < cols; ++c) {
      const float v = plane.at(lead, r, c);
      Color col;
      if (binary) {
        col = v > 0.5f ? Color{235, 235, 235} : Color{38, 40, 48};
      } else {
        col = heat(static_cast<double>(v));
      }
      for (int dy = 0; dy < scale; ++dy) {
        for (int dx = 0; dx < scale; ++dx) {
          // row 0 is the southern edge; draw north-up
          img.set(x0 + c * scale + dx, y0 + (rows - 1 - r) * scale + dy, col.r,
                  col.g, col.b);
        }
      }
    }
  }
}

}  // namespace

ImageRGB render_forecast(const TensorF& pred, const TensorF& truth, int scale) {
  if (pred.shape.size() != 3 || !pred.same_shape(truth)) {
    throw ConfigError("prediction and truth must both be [leads, rows, cols]");
  }
  if (scale < 1) throw ConfigError("scale must be >= 1");
  const std::int64_t leads = pred.shape[0];
  const std::int64_t rows = pred.shape[1];
  const std::int64_t cols = pred.shape[2];

  ImageRGB img(3 * kPad + 2 * cols * scale,
               kPad + leads * (rows * scale + kPad));
  for (std::int64_t y = 0; y < img.height; ++y) {
    for (std::int64_t x = 0; x < img.width; ++x) {
      img.set(x, y, 22, 22, 26);
    }
  }
  for (std::int64_t t = 0; t < leads; ++t) {
    const std::int64_t y0 = kPad + t * (rows * scale + kPad);
    fill_panel(img, kPad, y0, truth, t, scale, true);
    fill_panel(img, 2 * kPad + cols * scale, y0, pred, t, scale, false);
  }
  return img;
}

void write_forecast_png(const std::string& path, const TensorF& pred,
                        const TensorF& truth, int scale) {
  write_png(path, render_forecast(pred, truth, scale));
}

}  // namespace deeplight
