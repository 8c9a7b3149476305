#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "deeplight/errors.hpp"

namespace deeplight {

// Dense row-major tensor. Rank is dynamic but stays small (<= 4 in
// practice: [C,H,W] activations, [T,H,W] label volumes, [O,I,K,K]
// convolution weights). All layout arithmetic lives in the ops that use
// it; this type only owns storage and bounds-checked indexing in debug
// builds.
template <typename T>
struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<T> data;

  Tensor() = default;

  explicit Tensor(std::vector<std::int64_t> s, T fill = T(0))
      : shape(std::move(s)), data(static_cast<std::size_t>(count(shape)), fill) {}

  static std::int64_t count(const std::vector<std::int64_t>& s) {
    std::int64_t n = 1;
    for (auto d : s) {
      if (d < 0) throw StorageError("tensor dimension must be non-negative");
      n *= d;
    }
    return n;
  }

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  std::int64_t dim(std::size_t i) const { return shape.at(i); }
  int rank() const { return static_cast<int>(shape.size()); }

  T& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const {
    return data[static_cast<std::size_t>(i)];
  }

  T& at(std::int64_t i, std::int64_t j) {
    assert(rank() == 2);
    return data[static_cast<std::size_t>(i * shape[1] + j)];
  }
  const T& at(std::int64_t i, std::int64_t j) const {
    assert(rank() == 2);
    return data[static_cast<std::size_t>(i * shape[1] + j)];
  }

  T& at(std::int64_t c, std::int64_t y, std::int64_t x) {
    assert(rank() == 3);
    return data[static_cast<std::size_t>((c * shape[1] + y) * shape[2] + x)];
  }
  const T& at(std::int64_t c, std::int64_t y, std::int64_t x) const {
    assert(rank() == 3);
    return data[static_cast<std::size_t>((c * shape[1] + y) * shape[2] + x)];
  }

  T& at(std::int64_t o, std::int64_t i, std::int64_t y, std::int64_t x) {
    assert(rank() == 4);
    return data[static_cast<std::size_t>(
        ((o * shape[1] + i) * shape[2] + y) * shape[3] + x)];
  }
  const T& at(std::int64_t o, std::int64_t i, std::int64_t y,
              std::int64_t x) const {
    assert(rank() == 4);
    return data[static_cast<std::size_t>(
        ((o * shape[1] + i) * shape[2] + y) * shape[3] + x)];
  }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }
};

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  assert(a.same_shape(b));
  T m = T(0);
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    m = std::max(m, std::abs(a.data[i] - b.data[i]));
  }
  return m;
}

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace deeplight
