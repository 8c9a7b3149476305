#include "deeplight/loss.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>

namespace deeplight {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

std::int64_t odd_size_for(double sigma) {
  return 2 * static_cast<std::int64_t>(std::ceil(4.0 * sigma)) + 1;
}

void check_volume(const TensorF& v, const char* what) {
  if (v.shape.size() != 3) throw ConfigError(std::string(what) + " must be [h,R,C]");
}

// One zero-padded correlation pass along `axis` of a [d0,d1,d2] volume.
// The kernel is symmetric, so correlation equals convolution.
std::vector<double> axis_pass(const std::vector<double>& in,
                              const std::array<std::int64_t, 3>& dims, int axis,
                              const std::vector<double>& k) {
  const std::int64_t half = static_cast<std::int64_t>(k.size()) / 2;
  const std::int64_t d0 = dims[0], d1 = dims[1], d2 = dims[2];
  std::vector<double> out(in.size(), 0.0);
  const std::int64_t extent = dims[axis];
  for (std::int64_t i0 = 0; i0 < d0; ++i0) {
    for (std::int64_t i1 = 0; i1 < d1; ++i1) {
      for (std::int64_t i2 = 0; i2 < d2; ++i2) {
        std::int64_t idx[3] = {i0, i1, i2};
        const std::int64_t pos = idx[axis];
        const std::int64_t klo = std::max<std::int64_t>(0, half - pos);
        const std::int64_t khi = std::min<std::int64_t>(
            static_cast<std::int64_t>(k.size()), extent - pos + half);
        double acc = 0.0;
        for (std::int64_t kk = klo; kk < khi; ++kk) {
          idx[axis] = pos + kk - half;
          acc += k[static_cast<std::size_t>(kk)] *
                 in[static_cast<std::size_t>((idx[0] * d1 + idx[1]) * d2 + idx[2])];
        }
        out[static_cast<std::size_t>((i0 * d1 + i1) * d2 + i2)] = acc;
      }
    }
  }
  return out;
}

std::vector<double> separable_conv(const TensorF& volume,
                                   const BlurKernel3D& kernel) {
  const std::array<std::int64_t, 3> dims = {volume.shape[0], volume.shape[1],
                                            volume.shape[2]};
  std::vector<double> buf(volume.data.size());
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = volume.data[i];
  for (int axis = 0; axis < 3; ++axis) {
    buf = axis_pass(buf, dims, axis, kernel.axis[static_cast<std::size_t>(axis)]);
  }
  return buf;
}

}  // namespace

double gaussian3d_density(double dt, double dy, double dx,
                          const std::array<double, 3>& sigmas) {
  const double st = sigmas[0], sy = sigmas[1], sx = sigmas[2];
  const double norm = 1.0 / (std::pow(kTwoPi, 1.5) * st * sy * sx);
  const double q = dt * dt / (st * st) + dy * dy / (sy * sy) + dx * dx / (sx * sx);
  return norm * std::exp(-0.5 * q);
}

BlurKernel3D gaussian_kernel_3d(const LossConfig& cfg) {
  cfg.validate();
  BlurKernel3D k;
  const double st = cfg.value_is_variance ? std::sqrt(cfg.temporal_value)
                                          : cfg.temporal_value;
  const double ss = cfg.value_is_variance ? std::sqrt(cfg.spatial_value)
                                          : cfg.spatial_value;
  k.sigmas = {st, ss, ss};
  k.sizes = {odd_size_for(st), odd_size_for(ss), odd_size_for(ss)};

  k.weights = TensorD({k.sizes[0], k.sizes[1], k.sizes[2]});
  const std::int64_t ht = k.sizes[0] / 2, hy = k.sizes[1] / 2, hx = k.sizes[2] / 2;
  double total = 0.0;
  for (std::int64_t t = 0; t < k.sizes[0]; ++t) {
    for (std::int64_t y = 0; y < k.sizes[1]; ++y) {
      for (std::int64_t x = 0; x < k.sizes[2]; ++x) {
        const double v = gaussian3d_density(static_cast<double>(t - ht),
                                            static_cast<double>(y - hy),
                                            static_cast<double>(x - hx), k.sigmas);
        k.weights.at(t, y, x) = v;
        total += v;
      }
    }
  }
  for (auto& v : k.weights.data) v /= total;

  for (int axis = 0; axis < 3; ++axis) {
    const std::int64_t size = k.sizes[static_cast<std::size_t>(axis)];
    const double sigma = k.sigmas[static_cast<std::size_t>(axis)];
    std::vector<double> f(static_cast<std::size_t>(size));
    double s = 0.0;
    for (std::int64_t i = 0; i < size; ++i) {
      const double d = static_cast<double>(i - size / 2);
      f[static_cast<std::size_t>(i)] = std::exp(-0.5 * d * d / (sigma * sigma));
      s += f[static_cast<std::size_t>(i)];
    }
    for (auto& v : f) v /= s;
    k.axis[static_cast<std::size_t>(axis)] = std::move(f);
  }
  return k;
}

TensorF convolve3d(const TensorF& volume, const BlurKernel3D& kernel) {
  check_volume(volume, "convolve3d input");
  const auto buf = separable_conv(volume, kernel);
  TensorF out(volume.shape);
  for (std::size_t i = 0; i < buf.size(); ++i) {
    out.data[i] = static_cast<float>(buf[i]);
  }
  return out;
}

TensorF blur_ground_truth(const TensorF& truth, const BlurKernel3D& kernel) {
  check_volume(truth, "blur input");
  auto buf = separable_conv(truth, kernel);
  const std::int64_t h = truth.shape[0];
  const std::int64_t plane = truth.shape[1] * truth.shape[2];
  for (std::int64_t t = 0; t < h; ++t) {
    double mx = 0.0;
    for (std::int64_t i = 0; i < plane; ++i) {
      mx = std::max(mx, buf[static_cast<std::size_t>(t * plane + i)]);
    }
    if (mx > 0.0) {
      for (std::int64_t i = 0; i < plane; ++i) {
        buf[static_cast<std::size_t>(t * plane + i)] /= mx;
      }
    }
  }
  TensorF out(truth.shape);
  for (std::size_t i = 0; i < buf.size(); ++i) {
    out.data[i] = static_cast<float>(buf[i]);
  }
  return out;
}

double wbce_loss(const TensorF& pred, const TensorF& truth, double pos_weight,
                 double eps) {
  check_volume(pred, "prediction");
  if (!pred.same_shape(truth)) throw ConfigError("loss shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const double p = std::clamp(static_cast<double>(pred.data[i]), eps, 1.0 - eps);
    const double y = truth.data[i];
    acc += pos_weight * y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
  }
  return -acc / static_cast<double>(pred.data.size());
}

double hazy_loss(const TensorF& pred, const TensorF& truth, const TensorF& lblur,
                 double eps) {
  check_volume(pred, "prediction");
  if (!pred.same_shape(truth) || !pred.same_shape(lblur)) {
    throw ConfigError("loss shape mismatch");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const double p_raw = pred.data[i];
    const double lb = lblur.data[i];
    const double p_mix = (1.0 - lb) * p_raw + lb * (1.0 - p_raw);
    const double p = std::clamp(p_raw, eps, 1.0 - eps);
    const double y = truth.data[i];
    const double b = -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
    acc += p_mix * b;
  }
  return acc / static_cast<double>(pred.data.size());
}

double total_loss(const TensorF& pred, const TensorF& truth,
                  const LossConfig& cfg) {
  cfg.validate();
  double loss = wbce_loss(pred, truth, cfg.pos_weight, cfg.eps);
  if (cfg.use_hazy) {
    const auto kernel = gaussian_kernel_3d(cfg);
    const auto lblur = blur_ground_truth(truth, kernel);
    loss += hazy_loss(pred, truth, lblur, cfg.eps);
  }
  return loss;
}

}  // namespace deeplight
