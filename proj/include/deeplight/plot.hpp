#pragma once

#include <string>

#include "deeplight/png_write.hpp"
#include "deeplight/tensor.hpp"

namespace deeplight {

// One panel row per lead time: ground truth on the left (white cells on
// slate), predicted probability on the right (dark-to-hot colormap), both
// upscaled by `scale`. Canvas geometry, with pad = 4 px:
//   width  = 3*pad + 2*cols*scale
//   height = pad + leads*(rows*scale + pad)
ImageRGB render_forecast(const TensorF& pred, const TensorF& truth, int scale = 8);

void write_forecast_png(const std::string& path, const TensorF& pred,
                        const TensorF& truth, int scale = 8);

}  // namespace deeplight
