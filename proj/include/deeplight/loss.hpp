#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "deeplight/autograd.hpp"
#include "deeplight/errors.hpp"
#include "deeplight/tensor.hpp"

namespace deeplight {

struct LossConfig {
  // Smoothing scale per axis group. With value_is_variance (the default)
  // these are variances and sigma = sqrt(value); otherwise they are used
  // as sigmas directly.
  double spatial_value = 19.21;
  double temporal_value = 0.96;
  bool value_is_variance = true;
  double pos_weight = 20.0;
  double eps = 1e-7;
  bool use_hazy = true;

  void validate() const {
    if (!(spatial_value > 0.0) || !(temporal_value > 0.0)) {
      throw ConfigError("blur scale values must be positive");
    }
    if (!(pos_weight > 0.0)) throw ConfigError("pos_weight must be positive");
    if (!(eps > 0.0) || !(eps < 0.5)) throw ConfigError("eps must lie in (0, 0.5)");
  }
};

// Truncated, discretized 3D Gaussian. Axis order is (t, y, x). The full
// weight tensor is kept for inspection and oracle tests; blurring runs
// through the separable per-axis factors, which multiply out to exactly
// the same kernel.
struct BlurKernel3D {
  std::array<double, 3> sigmas{};
  std::array<std::int64_t, 3> sizes{};
  TensorD weights;                          // sizes[0] x sizes[1] x sizes[2], unit sum
  std::array<std::vector<double>, 3> axis;  // per-axis unit-sum factors
};

// The 3D Gaussian density at an integer offset from the kernel center.
double gaussian3d_density(double dt, double dy, double dx,
                          const std::array<double, 3>& sigmas);

// Kernel size per axis is 2*ceil(4*sigma)+1 (always odd). Truncating at
// four sigmas puts single-axis edge weights at exp(-8) ~ 3.4e-4 of the
// center and corner weights far below 1e-4 of it.
BlurKernel3D gaussian_kernel_3d(const LossConfig& cfg);

// Plain zero-padded 3D convolution of a [h,R,C] volume with the kernel,
// no normalization. Exposed separately so monotonicity properties can be
// checked below the per-timestep rescaling.
TensorF convolve3d(const TensorF& volume, const BlurKernel3D& kernel);

// Blurred ground truth: convolve, then divide each timestep slice by its
// own maximum; an all-zero slice stays all zero.
TensorF blur_ground_truth(const TensorF& truth, const BlurKernel3D& kernel);

// Value-only loss evaluations (double accumulation), used by eval paths
// and tests. pred and truth are [h,R,C]; truth is binary.
double wbce_loss(const TensorF& pred, const TensorF& truth, double pos_weight,
                 double eps);
double hazy_loss(const TensorF& pred, const TensorF& truth,
                 const TensorF& lblur, double eps);
double total_loss(const TensorF& pred, const TensorF& truth,
                  const LossConfig& cfg);

// ---- differentiable versions on the tape ----------------------------------
// truth and lblur enter as constants: the blur of the ground truth gets
// no gradient, only pred does.

template <typename T>
typename Tape<T>::Ref wbce_graph(Tape<T>& tape, typename Tape<T>::Ref pred,
                                 const Tensor<T>& truth, T pos_weight, T eps) {
  auto clamped = tape.clamp(pred, eps, T(1) - eps);
  // w*y*log(p) + (1-y)*log(1-p), then the negated mean.
  Tensor<T> wy = truth;
  for (auto& v : wy.data) v *= pos_weight;
  Tensor<T> one_minus_y = truth;
  for (auto& v : one_minus_y.data) v = T(1) - v;
  auto pos = tape.mul_const(tape.log_(clamped), wy);
  auto neg = tape.mul_const(tape.log_(tape.affine(clamped, T(-1), T(1))), one_minus_y);
  return tape.affine(tape.mean_all(tape.add(pos, neg)), T(-1), T(0));
}

template <typename T>
typename Tape<T>::Ref hazy_graph(Tape<T>& tape, typename Tape<T>::Ref pred,
                                 const Tensor<T>& truth, const Tensor<T>& lblur,
                                 T eps) {
  // P = (1 - Lblur) o p + Lblur o (1 - p); the raw prediction is used
  // here, clamping only guards the logs inside B.
  Tensor<T> one_minus_lb = lblur;
  for (auto& v : one_minus_lb.data) v = T(1) - v;
  auto p_term = tape.add(tape.mul_const(pred, one_minus_lb),
                         tape.mul_const(tape.affine(pred, T(-1), T(1)), lblur));

  auto clamped = tape.clamp(pred, eps, T(1) - eps);
  Tensor<T> one_minus_y = truth;
  for (auto& v : one_minus_y.data) v = T(1) - v;
  auto b_term = tape.affine(
      tape.add(tape.mul_const(tape.log_(clamped), truth),
               tape.mul_const(tape.log_(tape.affine(clamped, T(-1), T(1))),
                              one_minus_y)),
      T(-1), T(0));
  return tape.mean_all(tape.mul(p_term, b_term));
}

template <typename T>
typename Tape<T>::Ref total_loss_graph(Tape<T>& tape, typename Tape<T>::Ref pred,
                                       const TensorF& truth,
                                       const BlurKernel3D& kernel,
                                       const LossConfig& cfg) {
  cfg.validate();
  Tensor<T> truth_t(truth.shape);
  for (std::size_t i = 0; i < truth.data.size(); ++i) {
    truth_t.data[i] = static_cast<T>(truth.data[i]);
  }
  auto loss = wbce_graph(tape, pred, truth_t, static_cast<T>(cfg.pos_weight),
                         static_cast<T>(cfg.eps));
  if (cfg.use_hazy) {
    const TensorF lblur_f = blur_ground_truth(truth, kernel);
    Tensor<T> lblur(lblur_f.shape);
    for (std::size_t i = 0; i < lblur_f.data.size(); ++i) {
      lblur.data[i] = static_cast<T>(lblur_f.data[i]);
    }
    loss = tape.add(loss, hazy_graph(tape, pred, truth_t, lblur,
                                     static_cast<T>(cfg.eps)));
  }
  return loss;
}

}  // namespace deeplight
