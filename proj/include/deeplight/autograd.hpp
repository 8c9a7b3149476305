#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <utility>
#include <vector>

#include "deeplight/errors.hpp"
#include "deeplight/tensor.hpp"

namespace deeplight {

// Reverse-mode tape over dense tensors. Every op appends a node holding
// its forward value and a closure that scatters the node's gradient back
// to its parents; backward() replays the closures in reverse creation
// order. The scalar type is a template parameter so the same graph code
// runs in float for training and in double for finite-difference tests.
//
// Design notes:
//  - Gradients are allocated lazily by backward(), so forward-only use
//    (predict/eval) pays nothing for them.
//  - conv2d uses im2col plus a GEMM and recomputes the column matrix in
//    the backward pass instead of storing it; the column buffers dwarf
//    every activation, so this trades ~30% conv time for a flat memory
//    profile across long unrolled sequences.
template <typename T>
class Tape {
 public:
  struct Ref {
    std::int32_t i = -1;
    bool ok() const { return i >= 0; }
  };

  using Matrix =
      Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatMap = Eigen::Map<Matrix>;
  using ConstMatMap = Eigen::Map<const Matrix>;

  Ref leaf(Tensor<T> v) { return push(std::move(v), nullptr); }

  const Tensor<T>& value(Ref r) const { return node(r).value; }
  const Tensor<T>& grad(Ref r) const {
    const NodeRec& n = node(r);
    if (n.grad.data.empty()) throw TrainError("gradient not computed; run backward first");
    return n.grad;
  }

  std::size_t size() const { return nodes_.size(); }

  void backward(Ref loss) {
    NodeRec& top = node_mut(loss);
    if (top.value.numel() != 1) throw TrainError("backward needs a scalar loss node");
    for (auto& n : nodes_) {
      n.grad = Tensor<T>(n.value.shape);
    }
    top.grad[0] = T(1);
    for (std::int64_t i = static_cast<std::int64_t>(nodes_.size()) - 1; i >= 0; --i) {
      auto& n = nodes_[static_cast<std::size_t>(i)];
      if (n.back) n.back(*this, n);
    }
  }

  // ---- elementwise -------------------------------------------------------

  Ref add(Ref a, Ref b) {
    const Tensor<T>&va = value(a), &vb = value(b);
    require(va.same_shape(vb), "add: shape mismatch");
    Tensor<T> y = va;
    for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] += vb.data[i];
    return push(std::move(y), [a, b](Tape& t, const NodeRec& n) {
      t.accumulate(a, n.grad);
      t.accumulate(b, n.grad);
    });
  }

  Ref sub(Ref a, Ref b) {
    const Tensor<T>&va = value(a), &vb = value(b);
    require(va.same_shape(vb), "sub: shape mismatch");
    Tensor<T> y = va;
    for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] -= vb.data[i];
    return push(std::move(y), [a, b](Tape& t, const NodeRec& n) {
      t.accumulate(a, n.grad);
      Tensor<T>& gb = t.node_mut(b).grad;
      for (std::size_t i = 0; i < gb.data.size(); ++i) gb.data[i] -= n.grad.data[i];
    });
  }

  Ref mul(Ref a, Ref b) {
    const Tensor<T>&va = value(a), &vb = value(b);
    require(va.same_shape(vb), "mul: shape mismatch");
    Tensor<T> y = va;
    for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] *= vb.data[i];
    return push(std::move(y), [a, b](Tape& t, const NodeRec& n) {
      const Tensor<T>&va2 = t.value(a), &vb2 = t.value(b);
      Tensor<T>&ga = t.node_mut(a).grad, &gb = t.node_mut(b).grad;
      for (std::size_t i = 0; i < n.grad.data.size(); ++i) {
        ga.data[i] += n.grad.data[i] * vb2.data[i];
        gb.data[i] += n.grad.data[i] * va2.data[i];
      }
    });
  }

  // y = alpha * a + beta, scalars applied elementwise.
  Ref affine(Ref a, T alpha, T beta) {
    Tensor<T> y = value(a);
    for (auto& v : y.data) v = alpha * v + beta;
    return push(std::move(y), [a, alpha](Tape& t, const NodeRec& n) {
      Tensor<T>& ga = t.node_mut(a).grad;
      for (std::size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += alpha * n.grad.data[i];
    });
  }

  // Elementwise product with a constant tensor (no gradient into c).
  Ref mul_const(Ref a, const Tensor<T>& c) {
    const Tensor<T>& va = value(a);
    require(va.same_shape(c), "mul_const: shape mismatch");
    Tensor<T> y = va;
    for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] *= c.data[i];
    Tensor<T> ckeep = c;
    return push(std::move(y), [a, ckeep = std::move(ckeep)](Tape& t, const NodeRec& n) {
      Tensor<T>& ga = t.node_mut(a).grad;
      for (std::size_t i = 0; i < ga.data.size(); ++i) {
        ga.data[i] += n.grad.data[i] * ckeep.data[i];
      }
    });
  }

  Ref relu(Ref a) {
    Tensor<T> y = value(a);
    for (auto& v : y.data) v = v > T(0) ? v : T(0);
    return push(std::move(y), [a](Tape& t, const NodeRec& n) {
      const Tensor<T>& va = t.value(a);
      Tensor<T>& ga = t.node_mut(a).grad;
      for (std::size_t i = 0; i < ga.data.size(); ++i) {
        if (va.data[i] > T(0)) ga.data[i] += n.grad.data[i];
      }
    });
  }

  Ref sigmoid(Ref a) {
    Tensor<T> y = value(a);
    for (auto& v : y.data) v = T(1) / (T(1) + std::exp(-v));
    return push(std::move(y), [a](Tape& t, const NodeRec& n) {
      Tensor<T>& ga = t.node_mut(a).grad;
      for (std::size_t i = 0; i < ga.data.size(); ++i) {
        const T s = n.value.data[i];
        ga.data[i] += n.grad.data[i] * s * (T(1) - s);
      }
    });
  }

  Ref tanh_(Ref a) {
    Tensor<T> y = value(a);
    for (auto& v : y.data) v = std::tanh(v);
    return push(std::move(y), [a](Tape& t, const NodeRec& n) {
      Tensor<T>& ga = t.node_mut(a).grad;
      for (std::size_t i = 0; i < ga.data.size(); ++i) {
        const T th = n.value.data[i];
        ga.data[i] += n.grad.data[i] * (T(1) - th * th);
      }
    });
  }

  Ref log_(Ref a) {
    Tensor<T> y = value(a);
    for (auto& v : y.data) v = std::log(v);
    return push(std::move(y), [a](Tape& t, const NodeRec& n) {
      const Tensor<T>& va = t.value(a);
      Tensor<T>& ga = t.node_mut(a).grad;
      for (std::size_t i = 0; i < ga.data.size(); ++i) {
        ga.data[i] += n.grad.data[i] / va.data[i];
      }
    });
  }

  // Gradient passes wherever the input is inside [lo, hi] (boundary
  // included), zero where the clamp was active.
  Ref clamp(Ref a, T lo, T hi) {
    Tensor<T> y = value(a);
    for (auto& v : y.data) v = std::min(std::max(v, lo), hi);
    return push(std::move(y), [a, lo, hi](Tape& t, const NodeRec& n) {
      const Tensor<T>& va = t.value(a);
      Tensor<T>& ga = t.node_mut(a).grad;
      for (std::size_t i = 0; i < ga.data.size(); ++i) {
        if (va.data[i] >= lo && va.data[i] <= hi) ga.data[i] += n.grad.data[i];
      }
    });
  }

  // ---- reductions --------------------------------------------------------

  Ref sum_all(Ref a) {
    T s = T(0);
    for (T v : value(a).data) s += v;
    Tensor<T> y({1});
    y[0] = s;
    return push(std::move(y), [a](Tape& t, const NodeRec& n) {
      Tensor<T>& ga = t.node_mut(a).grad;
      for (auto& g : ga.data) g += n.grad[0];
    });
  }

  Ref mean_all(Ref a) {
    const std::int64_t count = value(a).numel();
    require(count > 0, "mean_all: empty tensor");
    T s = T(0);
    for (T v : value(a).data) s += v;
    Tensor<T> y({1});
    y[0] = s / static_cast<T>(count);
    return push(std::move(y), [a, count](Tape& t, const NodeRec& n) {
      Tensor<T>& ga = t.node_mut(a).grad;
      const T g = n.grad[0] / static_cast<T>(count);
      for (auto& v : ga.data) v += g;
    });
  }

  // ---- shape plumbing ----------------------------------------------------

  Ref concat_ch(Ref a, Ref b) {
    const Tensor<T>&va = value(a), &vb = value(b);
    require(va.rank() == 3 && vb.rank() == 3, "concat_ch: want CHW tensors");
    require(va.dim(1) == vb.dim(1) && va.dim(2) == vb.dim(2),
            "concat_ch: spatial mismatch");
    const std::int64_t ca = va.dim(0), cb = vb.dim(0);
    Tensor<T> y({ca + cb, va.dim(1), va.dim(2)});
    std::copy(va.data.begin(), va.data.end(), y.data.begin());
    std::copy(vb.data.begin(), vb.data.end(), y.data.begin() + va.numel());
    return push(std::move(y), [a, b](Tape& t, const NodeRec& n) {
      Tensor<T>&ga = t.node_mut(a).grad, &gb = t.node_mut(b).grad;
      for (std::size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += n.grad.data[i];
      for (std::size_t i = 0; i < gb.data.size(); ++i) {
        gb.data[i] += n.grad.data[i + ga.data.size()];
      }
    });
  }

  // Channels [c0, c1) of a CHW tensor.
  Ref slice_ch(Ref a, std::int64_t c0, std::int64_t c1) {
    const Tensor<T>& va = value(a);
    require(va.rank() == 3, "slice_ch: want CHW tensor");
    require(0 <= c0 && c0 < c1 && c1 <= va.dim(0), "slice_ch: bad channel range");
    const std::int64_t plane = va.dim(1) * va.dim(2);
    Tensor<T> y({c1 - c0, va.dim(1), va.dim(2)});
    std::copy_n(va.data.begin() + c0 * plane, (c1 - c0) * plane, y.data.begin());
    return push(std::move(y), [a, c0, plane](Tape& t, const NodeRec& n) {
      Tensor<T>& ga = t.node_mut(a).grad;
      for (std::size_t i = 0; i < n.grad.data.size(); ++i) {
        ga.data[static_cast<std::size_t>(c0 * plane) + i] += n.grad.data[i];
      }
    });
  }

  // Top-left crop of a CHW tensor to rows x cols.
  Ref crop2d(Ref a, std::int64_t rows, std::int64_t cols) {
    const Tensor<T>& va = value(a);
    require(va.rank() == 3, "crop2d: want CHW tensor");
    require(rows <= va.dim(1) && cols <= va.dim(2), "crop2d: crop larger than input");
    const std::int64_t c = va.dim(0), h = va.dim(1), w = va.dim(2);
    Tensor<T> y({c, rows, cols});
    for (std::int64_t ci = 0; ci < c; ++ci) {
      for (std::int64_t yy = 0; yy < rows; ++yy) {
        std::copy_n(va.data.begin() + (ci * h + yy) * w, cols,
                    y.data.begin() + (ci * rows + yy) * cols);
      }
    }
    return push(std::move(y), [a, rows, cols, h, w](Tape& t, const NodeRec& n) {
      Tensor<T>& ga = t.node_mut(a).grad;
      const std::int64_t c = n.value.dim(0);
      for (std::int64_t ci = 0; ci < c; ++ci) {
        for (std::int64_t yy = 0; yy < rows; ++yy) {
          const T* src = n.grad.data.data() + (ci * rows + yy) * cols;
          T* dst = ga.data.data() + (ci * h + yy) * w;
          for (std::int64_t xx = 0; xx < cols; ++xx) dst[xx] += src[xx];
        }
      }
    });
  }

  // ---- neural ops --------------------------------------------------------

  // Per-channel bias broadcast over the spatial plane.
  Ref add_bias_c(Ref x, Ref b) {
    const Tensor<T>&vx = value(x), &vb = value(b);
    require(vx.rank() == 3 && vb.rank() == 1 && vb.dim(0) == vx.dim(0),
            "add_bias_c: bias must have one entry per channel");
    const std::int64_t plane = vx.dim(1) * vx.dim(2);
    Tensor<T> y = vx;
    for (std::int64_t c = 0; c < vx.dim(0); ++c) {
      const T bias = vb[c];
      T* p = y.data.data() + c * plane;
      for (std::int64_t i = 0; i < plane; ++i) p[i] += bias;
    }
    return push(std::move(y), [x, b, plane](Tape& t, const NodeRec& n) {
      Tensor<T>&gx = t.node_mut(x).grad, &gb = t.node_mut(b).grad;
      const std::int64_t c = n.value.dim(0);
      for (std::int64_t ci = 0; ci < c; ++ci) {
        T s = T(0);
        const T* g = n.grad.data.data() + ci * plane;
        T* gxp = gx.data.data() + ci * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
          gxp[i] += g[i];
          s += g[i];
        }
        gb[ci] += s;
      }
    });
  }

  // 2D convolution, stride 1, square kernel, symmetric zero padding.
  // x: [Cin,H,W], w: [Cout,Cin,k,k] -> y: [Cout, H+2p-k+1, W+2p-k+1].
  Ref conv2d(Ref x, Ref w, std::int64_t pad) {
    const Tensor<T>&vx = value(x), &vw = value(w);
    require(vx.rank() == 3 && vw.rank() == 4, "conv2d: want CHW input, OIKK weights");
    require(vw.dim(1) == vx.dim(0), "conv2d: input channel mismatch");
    require(vw.dim(2) == vw.dim(3), "conv2d: kernel must be square");
    const std::int64_t cin = vx.dim(0), h = vx.dim(1), wd = vx.dim(2);
    const std::int64_t cout = vw.dim(0), k = vw.dim(2);
    const std::int64_t ho = h + 2 * pad - k + 1;
    const std::int64_t wo = wd + 2 * pad - k + 1;
    require(ho >= 1 && wo >= 1, "conv2d: kernel larger than padded input");

    std::vector<T> col;
    im2col(vx, k, pad, ho, wo, col);
    Tensor<T> y({cout, ho, wo});
    {
      ConstMatMap wm(vw.data.data(), cout, cin * k * k);
      ConstMatMap cm(col.data(), cin * k * k, ho * wo);
      MatMap ym(y.data.data(), cout, ho * wo);
      ym.noalias() = wm * cm;
    }
    return push(std::move(y), [x, w, pad, k](Tape& t, const NodeRec& n) {
      const Tensor<T>&vx2 = t.value(x), &vw2 = t.value(w);
      const std::int64_t cin = vx2.dim(0);
      const std::int64_t cout = vw2.dim(0);
      const std::int64_t ho = n.value.dim(1), wo = n.value.dim(2);
      std::vector<T> col;
      im2col(vx2, k, pad, ho, wo, col);
      ConstMatMap gym(n.grad.data.data(), cout, ho * wo);
      {
        // dW = dY * col^T
        ConstMatMap cm(col.data(), cin * k * k, ho * wo);
        MatMap gwm(t.node_mut(w).grad.data.data(), cout, cin * k * k);
        gwm.noalias() += gym * cm.transpose();
      }
      {
        // dX = col2im(W^T * dY)
        std::vector<T> gcol(static_cast<std::size_t>(cin * k * k * ho * wo));
        ConstMatMap wm(vw2.data.data(), cout, cin * k * k);
        MatMap gcm(gcol.data(), cin * k * k, ho * wo);
        gcm.noalias() = wm.transpose() * gym;
        col2im(gcol, k, pad, ho, wo, t.node_mut(x).grad);
      }
    });
  }

  // Transposed 2D convolution (fractionally strided). x: [Cin,H,W],
  // w: [Cin,Cout,k,k] -> y: [Cout, (H-1)s - 2p + k, ...]. Direct loops;
  // the upscaler's 4x4 stride-2 kernels are cheap next to the encoders.
  Ref conv_transpose2d(Ref x, Ref w, std::int64_t stride, std::int64_t pad) {
    const Tensor<T>&vx = value(x), &vw = value(w);
    require(vx.rank() == 3 && vw.rank() == 4, "conv_transpose2d: want CHW input, IOKK weights");
    require(vw.dim(0) == vx.dim(0), "conv_transpose2d: input channel mismatch");
    require(vw.dim(2) == vw.dim(3), "conv_transpose2d: kernel must be square");
    const std::int64_t cin = vx.dim(0), h = vx.dim(1), wd = vx.dim(2);
    const std::int64_t cout = vw.dim(1), k = vw.dim(2);
    const std::int64_t ho = (h - 1) * stride - 2 * pad + k;
    const std::int64_t wo = (wd - 1) * stride - 2 * pad + k;
    require(ho >= 1 && wo >= 1, "conv_transpose2d: degenerate output");

    Tensor<T> y({cout, ho, wo});
    for (std::int64_t ci = 0; ci < cin; ++ci) {
      for (std::int64_t iy = 0; iy < h; ++iy) {
        for (std::int64_t ix = 0; ix < wd; ++ix) {
          const T xv = vx.at(ci, iy, ix);
          if (xv == T(0)) continue;
          for (std::int64_t co = 0; co < cout; ++co) {
            for (std::int64_t ky = 0; ky < k; ++ky) {
              const std::int64_t oy = iy * stride - pad + ky;
              if (oy < 0 || oy >= ho) continue;
              for (std::int64_t kx = 0; kx < k; ++kx) {
                const std::int64_t ox = ix * stride - pad + kx;
                if (ox < 0 || ox >= wo) continue;
                y.at(co, oy, ox) += xv * vw.at(ci, co, ky, kx);
              }
            }
          }
        }
      }
    }
    return push(std::move(y), [x, w, stride, pad, k](Tape& t, const NodeRec& n) {
      const Tensor<T>&vx2 = t.value(x), &vw2 = t.value(w);
      Tensor<T>&gx = t.node_mut(x).grad, &gw = t.node_mut(w).grad;
      const std::int64_t cin = vx2.dim(0), h = vx2.dim(1), wd = vx2.dim(2);
      const std::int64_t cout = vw2.dim(1);
      const std::int64_t ho = n.value.dim(1), wo = n.value.dim(2);
      for (std::int64_t ci = 0; ci < cin; ++ci) {
        for (std::int64_t iy = 0; iy < h; ++iy) {
          for (std::int64_t ix = 0; ix < wd; ++ix) {
            const T xv = vx2.at(ci, iy, ix);
            T gxsum = T(0);
            for (std::int64_t co = 0; co < cout; ++co) {
              for (std::int64_t ky = 0; ky < k; ++ky) {
                const std::int64_t oy = iy * stride - pad + ky;
                if (oy < 0 || oy >= ho) continue;
                for (std::int64_t kx = 0; kx < k; ++kx) {
                  const std::int64_t ox = ix * stride - pad + kx;
                  if (ox < 0 || ox >= wo) continue;
                  const T g = n.grad.at(co, oy, ox);
                  gxsum += g * vw2.at(ci, co, ky, kx);
                  gw.at(ci, co, ky, kx) += g * xv;
                }
              }
            }
            gx.at(ci, iy, ix) += gxsum;
          }
        }
      }
    });
  }

  // 2x2 max pooling with implicit zero padding on odd edges, so the
  // output is always ceil(H/2) x ceil(W/2). A padded zero can win the max
  // (the window then routes no gradient); ties go to the first cell in
  // row-major window order.
  Ref maxpool2x2(Ref x) {
    const Tensor<T>& vx = value(x);
    require(vx.rank() == 3, "maxpool2x2: want CHW tensor");
    const std::int64_t c = vx.dim(0), h = vx.dim(1), w = vx.dim(2);
    const std::int64_t ho = (h + 1) / 2, wo = (w + 1) / 2;
    Tensor<T> y({c, ho, wo});
    std::vector<std::int64_t> arg(static_cast<std::size_t>(c * ho * wo), -1);
    for (std::int64_t ci = 0; ci < c; ++ci) {
      for (std::int64_t oy = 0; oy < ho; ++oy) {
        for (std::int64_t ox = 0; ox < wo; ++ox) {
          T best = -std::numeric_limits<T>::infinity();
          std::int64_t best_idx = -1;
          bool truncated = false;
          for (std::int64_t dy = 0; dy < 2; ++dy) {
            for (std::int64_t dx = 0; dx < 2; ++dx) {
              const std::int64_t iy = oy * 2 + dy, ix = ox * 2 + dx;
              if (iy >= h || ix >= w) {
                truncated = true;
                continue;
              }
              const T v = vx.at(ci, iy, ix);
              if (v > best) {
                best = v;
                best_idx = (ci * h + iy) * w + ix;
              }
            }
          }
          if (truncated && best < T(0)) {
            best = T(0);   // the implicit zero pad wins
            best_idx = -1; // and takes the (nonexistent) gradient
          }
          y.at(ci, oy, ox) = best;
          arg[static_cast<std::size_t>((ci * ho + oy) * wo + ox)] = best_idx;
        }
      }
    }
    return push(std::move(y), [x, arg = std::move(arg)](Tape& t, const NodeRec& n) {
      Tensor<T>& gx = t.node_mut(x).grad;
      for (std::size_t i = 0; i < arg.size(); ++i) {
        if (arg[i] >= 0) gx.data[static_cast<std::size_t>(arg[i])] += n.grad.data[i];
      }
    });
  }

  // Per-channel normalization over the spatial plane with learnable scale
  // and shift; population variance, epsilon inside the square root.
  Ref channel_norm(Ref x, Ref gamma, Ref beta, T eps = T(1e-5)) {
    const Tensor<T>&vx = value(x), &vg = value(gamma), &vb = value(beta);
    require(vx.rank() == 3, "channel_norm: want CHW tensor");
    require(vg.rank() == 1 && vb.rank() == 1 && vg.dim(0) == vx.dim(0) &&
                vb.dim(0) == vx.dim(0),
            "channel_norm: scale/shift must have one entry per channel");
    const std::int64_t c = vx.dim(0);
    const std::int64_t plane = vx.dim(1) * vx.dim(2);
    Tensor<T> y = vx;
    std::vector<T> mean(static_cast<std::size_t>(c)), inv_sd(static_cast<std::size_t>(c));
    for (std::int64_t ci = 0; ci < c; ++ci) {
      const T* p = vx.data.data() + ci * plane;
      T m = T(0);
      for (std::int64_t i = 0; i < plane; ++i) m += p[i];
      m /= static_cast<T>(plane);
      T var = T(0);
      for (std::int64_t i = 0; i < plane; ++i) {
        const T d = p[i] - m;
        var += d * d;
      }
      var /= static_cast<T>(plane);
      const T isd = T(1) / std::sqrt(var + eps);
      mean[static_cast<std::size_t>(ci)] = m;
      inv_sd[static_cast<std::size_t>(ci)] = isd;
      T* q = y.data.data() + ci * plane;
      for (std::int64_t i = 0; i < plane; ++i) {
        q[i] = vg[ci] * (p[i] - m) * isd + vb[ci];
      }
    }
    return push(std::move(y),
                [x, gamma, beta, plane, mean = std::move(mean),
                 inv_sd = std::move(inv_sd)](Tape& t, const NodeRec& n) {
      const Tensor<T>& vx2 = t.value(x);
      const Tensor<T>& vg2 = t.value(gamma);
      Tensor<T>& gx = t.node_mut(x).grad;
      Tensor<T>& gg = t.node_mut(gamma).grad;
      Tensor<T>& gb = t.node_mut(beta).grad;
      const std::int64_t c = vx2.dim(0);
      for (std::int64_t ci = 0; ci < c; ++ci) {
        const T m = mean[static_cast<std::size_t>(ci)];
        const T isd = inv_sd[static_cast<std::size_t>(ci)];
        const T* p = vx2.data.data() + ci * plane;
        const T* g = n.grad.data.data() + ci * plane;
        T sum_g = T(0), sum_gxhat = T(0);
        for (std::int64_t i = 0; i < plane; ++i) {
          const T xhat = (p[i] - m) * isd;
          sum_g += g[i];
          sum_gxhat += g[i] * xhat;
        }
        gg[ci] += sum_gxhat;
        gb[ci] += sum_g;
        const T inv_n = T(1) / static_cast<T>(plane);
        T* gxp = gx.data.data() + ci * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
          const T xhat = (p[i] - m) * isd;
          gxp[i] += vg2[ci] * isd *
                    (g[i] - sum_g * inv_n - xhat * sum_gxhat * inv_n);
        }
      }
    });
  }

 private:
  struct NodeRec {
    Tensor<T> value;
    Tensor<T> grad;
    std::function<void(Tape&, const NodeRec&)> back;
  };

  std::vector<NodeRec> nodes_;

  static void require(bool cond, const char* msg) {
    if (!cond) throw TrainError(msg);
  }

  Ref push(Tensor<T> v, std::function<void(Tape&, const NodeRec&)> back) {
    nodes_.push_back(NodeRec{std::move(v), Tensor<T>{}, std::move(back)});
    return Ref{static_cast<std::int32_t>(nodes_.size() - 1)};
  }

  const NodeRec& node(Ref r) const {
    if (!r.ok() || r.i >= static_cast<std::int32_t>(nodes_.size())) {
      throw TrainError("dangling tape reference");
    }
    return nodes_[static_cast<std::size_t>(r.i)];
  }
  NodeRec& node_mut(Ref r) {
    return const_cast<NodeRec&>(static_cast<const Tape*>(this)->node(r));
  }

  void accumulate(Ref r, const Tensor<T>& g) {
    Tensor<T>& dst = node_mut(r).grad;
    for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += g.data[i];
  }

  // col layout: [(ci*k + ky)*k + kx] x [oy*wo + ox], matching a row-major
  // [Cout, Cin*k*k] weight map so the GEMM needs no reshuffling.
  static void im2col(const Tensor<T>& x, std::int64_t k, std::int64_t pad,
                     std::int64_t ho, std::int64_t wo, std::vector<T>& col) {
    const std::int64_t cin = x.dim(0), h = x.dim(1), w = x.dim(2);
    col.assign(static_cast<std::size_t>(cin * k * k * ho * wo), T(0));
    for (std::int64_t ci = 0; ci < cin; ++ci) {
      for (std::int64_t ky = 0; ky < k; ++ky) {
        for (std::int64_t kx = 0; kx < k; ++kx) {
          T* dst_base = col.data() + ((ci * k + ky) * k + kx) * ho * wo;
          // Output x-range whose source column stays inside the image.
          const std::int64_t ox_lo = std::max<std::int64_t>(0, pad - kx);
          const std::int64_t ox_hi = std::min<std::int64_t>(wo, w + pad - kx);
          if (ox_lo >= ox_hi) continue;
          for (std::int64_t oy = 0; oy < ho; ++oy) {
            const std::int64_t iy = oy + ky - pad;
            if (iy < 0 || iy >= h) continue;
            const T* src = x.data.data() + (ci * h + iy) * w + (ox_lo + kx - pad);
            std::copy_n(src, ox_hi - ox_lo, dst_base + oy * wo + ox_lo);
          }
        }
      }
    }
  }

  static void col2im(const std::vector<T>& col, std::int64_t k,
                     std::int64_t pad, std::int64_t ho, std::int64_t wo,
                     Tensor<T>& gx) {
    const std::int64_t cin = gx.dim(0), h = gx.dim(1), w = gx.dim(2);
    for (std::int64_t ci = 0; ci < cin; ++ci) {
      for (std::int64_t ky = 0; ky < k; ++ky) {
        for (std::int64_t kx = 0; kx < k; ++kx) {
          const T* src_base = col.data() + ((ci * k + ky) * k + kx) * ho * wo;
          const std::int64_t ox_lo = std::max<std::int64_t>(0, pad - kx);
          const std::int64_t ox_hi = std::min<std::int64_t>(wo, w + pad - kx);
          if (ox_lo >= ox_hi) continue;
          for (std::int64_t oy = 0; oy < ho; ++oy) {
            const std::int64_t iy = oy + ky - pad;
            if (iy < 0 || iy >= h) continue;
            const T* src = src_base + oy * wo + ox_lo;
            T* dst = gx.data.data() + (ci * h + iy) * w + (ox_lo + kx - pad);
            for (std::int64_t i = 0; i < ox_hi - ox_lo; ++i) dst[i] += src[i];
          }
        }
      }
    }
  }
};

using TapeF = Tape<float>;
using TapeD = Tape<double>;

}  // namespace deeplight
