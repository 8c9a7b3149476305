#pragma once

// Independent straight-line reimplementations of the network blocks and
// loss pieces, written as plain nested loops with none of the production
// code's vectorization or taping. These are the reference side of the
// oracle-equivalence checks; keep them boring.

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "deeplight/tensor.hpp"

namespace deeplight::oracle {

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, std::int64_t pad) {
  const std::int64_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const std::int64_t cout = w.dim(0), k = w.dim(2);
  Tensor<T> y({cout, h + 2 * pad - k + 1, wd + 2 * pad - k + 1});
  for (std::int64_t co = 0; co < cout; ++co) {
    for (std::int64_t oy = 0; oy < y.dim(1); ++oy) {
      for (std::int64_t ox = 0; ox < y.dim(2); ++ox) {
        double acc = 0.0;
        for (std::int64_t ci = 0; ci < cin; ++ci) {
          for (std::int64_t ky = 0; ky < k; ++ky) {
            for (std::int64_t kx = 0; kx < k; ++kx) {
              const std::int64_t iy = oy + ky - pad, ix = ox + kx - pad;
              if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
              acc += static_cast<double>(x.at(ci, iy, ix)) *
                     static_cast<double>(w.at(co, ci, ky, kx));
            }
          }
        }
        y.at(co, oy, ox) = static_cast<T>(acc);
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> channel_norm(const Tensor<T>& x, const Tensor<T>& gamma,
                       const Tensor<T>& beta, double eps = 1e-5) {
  const std::int64_t c = x.dim(0), plane = x.dim(1) * x.dim(2);
  Tensor<T> y = x;
  for (std::int64_t ci = 0; ci < c; ++ci) {
    double m = 0.0;
    for (std::int64_t i = 0; i < plane; ++i) m += x.data[static_cast<std::size_t>(ci * plane + i)];
    m /= static_cast<double>(plane);
    double var = 0.0;
    for (std::int64_t i = 0; i < plane; ++i) {
      const double d = x.data[static_cast<std::size_t>(ci * plane + i)] - m;
      var += d * d;
    }
    var /= static_cast<double>(plane);
    const double isd = 1.0 / std::sqrt(var + eps);
    for (std::int64_t i = 0; i < plane; ++i) {
      const std::size_t idx = static_cast<std::size_t>(ci * plane + i);
      y.data[idx] = static_cast<T>(
          static_cast<double>(gamma[ci]) * (x.data[idx] - m) * isd +
          static_cast<double>(beta[ci]));
    }
  }
  return y;
}

template <typename T>
Tensor<T> relu(Tensor<T> x) {
  for (auto& v : x.data) v = v > T(0) ? v : T(0);
  return x;
}

template <typename T>
Tensor<T> concat_ch(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> y({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)});
  std::copy(a.data.begin(), a.data.end(), y.data.begin());
  std::copy(b.data.begin(), b.data.end(), y.data.begin() + a.numel());
  return y;
}

using ParamMap = std::map<std::string, TensorF>;

template <typename T>
Tensor<T> multibranch(const Tensor<T>& x,
                      const std::map<std::string, Tensor<T>>& p,
                      const std::string& prefix, const std::vector<int>& kernels,
                      bool cstem_mode) {
  Tensor<T> cat;
  bool first = true;
  for (int k : kernels) {
    const std::string base = prefix + ".k" + std::to_string(k);
    Tensor<T> b = conv2d(x, p.at(base + ".w"), k / 2);
    if (cstem_mode) {
      b = channel_norm(b, p.at(base + ".gamma"), p.at(base + ".beta"));
    }
    b = relu(std::move(b));
    cat = first ? b : concat_ch(cat, b);
    first = false;
  }
  Tensor<T> y = conv2d(cat, p.at(prefix + ".fuse.w"), 0);
  if (cstem_mode) {
    const Tensor<T>& bias = p.at(prefix + ".fuse.b");
    const std::int64_t plane = y.dim(1) * y.dim(2);
    for (std::int64_t c = 0; c < y.dim(0); ++c) {
      for (std::int64_t i = 0; i < plane; ++i) {
        y.data[static_cast<std::size_t>(c * plane + i)] += bias[c];
      }
    }
  }
  return y;
}

// One MB-ConvLSTM step: gate pre-activations from the two multi-branch
// transforms split channelwise into quarters, elementwise peepholes on
// the cell state, scalar-per-channel biases.
template <typename T>
void lstm_step(const Tensor<T>& x, const Tensor<T>& h_prev,
               const Tensor<T>& c_prev,
               const std::map<std::string, Tensor<T>>& p,
               const std::string& cell, const std::vector<int>& kernels,
               Tensor<T>& h_out, Tensor<T>& c_out) {
  const Tensor<T> xb = multibranch(x, p, cell + ".x", kernels, false);
  const Tensor<T> hb = multibranch(h_prev, p, cell + ".h", kernels, false);
  const std::int64_t ch = c_prev.dim(0);
  const std::int64_t plane = c_prev.dim(1) * c_prev.dim(2);
  const Tensor<T>& wcf = p.at(cell + ".w_cf");
  const Tensor<T>& wci = p.at(cell + ".w_ci");
  const Tensor<T>& wco = p.at(cell + ".w_co");
  const Tensor<T>& bf = p.at(cell + ".b_f");
  const Tensor<T>& bi = p.at(cell + ".b_i");
  const Tensor<T>& bc = p.at(cell + ".b_c");
  const Tensor<T>& bo = p.at(cell + ".b_o");

  h_out = Tensor<T>(c_prev.shape);
  c_out = Tensor<T>(c_prev.shape);
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  for (std::int64_t c = 0; c < ch; ++c) {
    for (std::int64_t i = 0; i < plane; ++i) {
      const std::size_t idx = static_cast<std::size_t>(c * plane + i);
      auto gate = [&](int g) {
        return static_cast<double>(xb.data[static_cast<std::size_t>((g * ch + c) * plane + i)]) +
               static_cast<double>(hb.data[static_cast<std::size_t>((g * ch + c) * plane + i)]);
      };
      const double cp = c_prev.data[idx];
      const double f = sig(gate(0) + static_cast<double>(wcf.data[idx]) * cp +
                           static_cast<double>(bf[c]));
      const double in = sig(gate(1) + static_cast<double>(wci.data[idx]) * cp +
                            static_cast<double>(bi[c]));
      const double ct = f * cp + in * std::tanh(gate(2) + static_cast<double>(bc[c]));
      const double o = sig(gate(3) + static_cast<double>(wco.data[idx]) * ct +
                           static_cast<double>(bo[c]));
      c_out.data[idx] = static_cast<T>(ct);
      h_out.data[idx] = static_cast<T>(o * std::tanh(ct));
    }
  }
}

template <typename T>
void fuse_states(const Tensor<T>& h_l, const Tensor<T>& c_l,
                 const Tensor<T>& h_a, const Tensor<T>& c_a,
                 const std::map<std::string, Tensor<T>>& p, Tensor<T>& h_out,
                 Tensor<T>& c_out) {
  auto one = [&](const Tensor<T>& a, const Tensor<T>& b, const std::string& key) {
    Tensor<T> y = conv2d(concat_ch(a, b), p.at(key + ".w"), 0);
    const Tensor<T>& bias = p.at(key + ".b");
    const std::int64_t plane = y.dim(1) * y.dim(2);
    for (std::int64_t c = 0; c < y.dim(0); ++c) {
      for (std::int64_t i = 0; i < plane; ++i) {
        const std::size_t idx = static_cast<std::size_t>(c * plane + i);
        y.data[idx] = std::max(T(0), y.data[idx] + bias[c]);
      }
    }
    return y;
  };
  c_out = one(c_l, c_a, "fusion.c");
  h_out = one(h_l, h_a, "fusion.h");
}

// Zero-padded full 3D convolution with the kernel's weight tensor, then
// per-timestep max rescaling. Direct loops over every kernel cell, double
// accumulation, no separable shortcut.
inline TensorF blur_reference(const TensorF& truth, const TensorD& weights) {
  const std::int64_t h = truth.dim(0), rows = truth.dim(1), cols = truth.dim(2);
  const std::int64_t kt = weights.dim(0), ky = weights.dim(1), kx = weights.dim(2);
  const std::int64_t ht = kt / 2, hy = ky / 2, hx = kx / 2;
  std::vector<double> buf(truth.data.size(), 0.0);
  for (std::int64_t t = 0; t < h; ++t) {
    for (std::int64_t y = 0; y < rows; ++y) {
      for (std::int64_t x = 0; x < cols; ++x) {
        double acc = 0.0;
        for (std::int64_t dt = 0; dt < kt; ++dt) {
          const std::int64_t st = t + dt - ht;
          if (st < 0 || st >= h) continue;
          for (std::int64_t dy = 0; dy < ky; ++dy) {
            const std::int64_t sy = y + dy - hy;
            if (sy < 0 || sy >= rows) continue;
            for (std::int64_t dx = 0; dx < kx; ++dx) {
              const std::int64_t sx = x + dx - hx;
              if (sx < 0 || sx >= cols) continue;
              acc += weights.at(dt, dy, dx) *
                     static_cast<double>(truth.at(st, sy, sx));
            }
          }
        }
        buf[static_cast<std::size_t>((t * rows + y) * cols + x)] = acc;
      }
    }
  }
  const std::int64_t plane = rows * cols;
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

// Per-cell contingency scans over a 2D binary pair, written without any
// dilation helper: the neighborhood variant walks the 3x3 window around
// each cell directly.
struct Counts {
  long long tp = 0, fp = 0, fn = 0, tn = 0, n = 0;
};

inline Counts strict_scan(const TensorF& pred, const TensorF& truth) {
  Counts c;
  c.n = static_cast<long long>(pred.data.size());
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const bool p = pred.data[i] != 0.0f, y = truth.data[i] != 0.0f;
    if (p && y) ++c.tp;
    else if (p && !y) ++c.fp;
    else if (!p && y) ++c.fn;
    else ++c.tn;
  }
  return c;
}

inline Counts neighborhood_scan(const TensorF& pred, const TensorF& truth) {
  const std::int64_t rows = pred.dim(0), cols = pred.dim(1);
  auto any_near = [&](const TensorF& t, std::int64_t y, std::int64_t x) {
    for (std::int64_t sy = y - 1; sy <= y + 1; ++sy) {
      for (std::int64_t sx = x - 1; sx <= x + 1; ++sx) {
        if (sy < 0 || sy >= rows || sx < 0 || sx >= cols) continue;
        if (t.at(sy, sx) != 0.0f) return true;
      }
    }
    return false;
  };
  Counts c;
  c.n = static_cast<long long>(rows * cols);
  for (std::int64_t y = 0; y < rows; ++y) {
    for (std::int64_t x = 0; x < cols; ++x) {
      if (pred.at(y, x) != 0.0f) {
        if (any_near(truth, y, x)) ++c.tp;
        else ++c.fp;
      }
      if (truth.at(y, x) != 0.0f && !any_near(pred, y, x)) ++c.fn;
    }
  }
  c.tn = c.n - c.tp - c.fp - c.fn;
  return c;
}

}  // namespace deeplight::oracle
