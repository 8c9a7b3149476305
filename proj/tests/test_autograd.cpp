#include <cmath>
#include <vector>

#include "deeplight/autograd.hpp"
#include "deeplight/rng.hpp"
#include "deeplight/tensor.hpp"
#include "doctest.h"

using namespace deeplight;

namespace {

TensorD random_tensor(Rng& rng, std::vector<std::int64_t> shape, double lo = -1.0,
                      double hi = 1.0) {
  TensorD t(std::move(shape));
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

// Central-difference check: builds the graph twice per probed entry and
// compares the analytic gradient of a scalar loss against (L+ - L-)/2d.
// The loss is a fixed random projection of the op output so every output
// element influences it; the projection is drawn once so both FD
// evaluations see the same function.
using Builder = std::function<TapeD::Ref(TapeD&, const std::vector<TapeD::Ref>&)>;

void check_gradients(const Builder& build_output, std::vector<TensorD> leaves,
                     Rng& rng, double delta = 1e-5, double tol = 1e-6) {
  TensorD proj;
  auto eval = [&](const std::vector<TensorD>& inputs) {
    TapeD tape;
    std::vector<TapeD::Ref> refs;
    refs.reserve(inputs.size());
    for (const auto& t : inputs) refs.push_back(tape.leaf(t));
    TapeD::Ref y = build_output(tape, refs);
    if (proj.data.empty()) {
      proj = TensorD(tape.value(y).shape);
      for (auto& v : proj.data) v = rng.uniform(-1.0, 1.0);
    }
    TapeD::Ref loss = tape.sum_all(tape.mul_const(y, proj));
    return std::make_pair(std::move(tape), loss);
  };

  auto [tape, loss] = eval(leaves);
  std::vector<TapeD::Ref> refs;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    refs.push_back(TapeD::Ref{static_cast<std::int32_t>(i)});
  }
  REQUIRE(tape.value(loss).numel() == 1);
  tape.backward(loss);

  for (std::size_t li = 0; li < leaves.size(); ++li) {
    const TensorD& analytic = tape.grad(refs[li]);
    const std::int64_t n = leaves[li].numel();
    // Probe every entry on small tensors, a random dozen on larger ones.
    std::vector<std::int64_t> probes;
    if (n <= 24) {
      for (std::int64_t i = 0; i < n; ++i) probes.push_back(i);
    } else {
      for (int i = 0; i < 12; ++i) {
        probes.push_back(static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(n))));
      }
    }
    for (std::int64_t i : probes) {
      std::vector<TensorD> bumped = leaves;
      bumped[li][i] += delta;
      auto [tp, lp] = eval(bumped);
      bumped[li][i] -= 2 * delta;
      auto [tm, lm] = eval(bumped);
      const double fd = (tp.value(lp)[0] - tm.value(lm)[0]) / (2 * delta);
      const double got = analytic[i];
      const double err = std::abs(fd - got) / std::max({std::abs(fd), std::abs(got), 1.0});
      INFO("leaf ", li, " entry ", i, " fd=", fd, " analytic=", got);
      CHECK(err < tol);
    }
  }
}

// Direct convolution used as the oracle for the im2col+GEMM path.
TensorD conv2d_reference(const TensorD& x, const TensorD& w, std::int64_t pad) {
  const std::int64_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const std::int64_t cout = w.dim(0), k = w.dim(2);
  TensorD y({cout, h + 2 * pad - k + 1, wd + 2 * pad - k + 1});
  for (std::int64_t co = 0; co < cout; ++co) {
    for (std::int64_t oy = 0; oy < y.dim(1); ++oy) {
      for (std::int64_t ox = 0; ox < y.dim(2); ++ox) {
        double acc = 0.0;
        for (std::int64_t ci = 0; ci < cin; ++ci) {
          for (std::int64_t ky = 0; ky < k; ++ky) {
            for (std::int64_t kx = 0; kx < k; ++kx) {
              const std::int64_t iy = oy + ky - pad, ix = ox + kx - pad;
              if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
              acc += x.at(ci, iy, ix) * w.at(co, ci, ky, kx);
            }
          }
        }
        y.at(co, oy, ox) = acc;
      }
    }
  }
  return y;
}

}  // namespace

TEST_CASE("elementwise ops match finite differences") {
  Rng rng(101);
  auto shape = std::vector<std::int64_t>{2, 3, 4};

  check_gradients(
      [&](TapeD& t, const std::vector<TapeD::Ref>& in) {
        return t.add(in[0], in[1]);
      },
      {random_tensor(rng, shape), random_tensor(rng, shape)}, rng);

  check_gradients(
      [&](TapeD& t, const std::vector<TapeD::Ref>& in) {
        return t.sub(in[0], in[1]);
      },
      {random_tensor(rng, shape), random_tensor(rng, shape)}, rng);

  check_gradients(
      [&](TapeD& t, const std::vector<TapeD::Ref>& in) {
        return t.mul(in[0], in[1]);
      },
      {random_tensor(rng, shape), random_tensor(rng, shape)}, rng);

  check_gradients(
      [&](TapeD& t, const std::vector<TapeD::Ref>& in) {
        return t.affine(in[0], -2.5, 0.75);
      },
      {random_tensor(rng, shape)}, rng);

  TensorD c = random_tensor(rng, shape);
  check_gradients(
      [&](TapeD& t, const std::vector<TapeD::Ref>& in) {
        return t.mul_const(in[0], c);
      },
      {random_tensor(rng, shape)}, rng);
}

TEST_CASE("activations match finite differences") {
  Rng rng(102);
  auto shape = std::vector<std::int64_t>{2, 3, 3};

  // Keep relu inputs away from the kink at zero.
  TensorD xr = random_tensor(rng, shape);
  for (auto& v : xr.data) {
    if (std::abs(v) < 0.05) v = v < 0 ? -0.1 : 0.1;
  }
  check_gradients(
      [&](TapeD& t, const std::vector<TapeD::Ref>& in) {
        return t.relu(in[0]);
      },
      {xr}, rng);

  check_gradients(
      [&](TapeD& t, const std::vector<TapeD::Ref>& in) {
        return t.sigmoid(in[0]);
      },
      {random_tensor(rng, shape, -3.0, 3.0)}, rng);

  check_gradients(
      [&](TapeD& t, const std::vector<TapeD::Ref>& in) {
        return t.tanh_(in[0]);
      },
      {random_tensor(rng, shape, -2.0, 2.0)}, rng);

  check_gradients(
      [&](TapeD& t, const std::vector<TapeD::Ref>& in) {
        return t.log_(in[0]);
      },
      {random_tensor(rng, shape, 0.2, 3.0)}, rng);

  // Clamp: inputs either safely inside or safely outside the band.
  TensorD xc = random_tensor(rng, shape, -2.0, 2.0);
  for (auto& v : xc.data) {
    if (std::abs(std::abs(v) - 1.0) < 0.05) v *= 1.2;
  }
  check_gradients(
      [&](TapeD& t, const std::vector<TapeD::Ref>& in) {
        return t.clamp(in[0], -1.0, 1.0);
      },
      {xc}, rng);
}

TEST_CASE("clamp forward pins values and blocks gradient outside the band") {
  TapeD t;
  TensorD x({4});
  x.data = {-2.0, -0.5, 0.5, 2.0};
  auto xr = t.leaf(x);
  auto y = t.clamp(xr, -1.0, 1.0);
  CHECK(t.value(y).data == std::vector<double>{-1.0, -0.5, 0.5, 1.0});
  auto loss = t.sum_all(y);
  t.backward(loss);
  CHECK(t.grad(xr).data == std::vector<double>{0.0, 1.0, 1.0, 0.0});
}

TEST_CASE("reductions and shape ops match finite differences") {
  Rng rng(103);
  check_gradients(
      [&](TapeD& t, const std::vector<TapeD::Ref>& in) {
        return t.mean_all(in[0]);
      },
      {random_tensor(rng, {3, 4, 5})}, rng);

  check_gradients(
      [&](TapeD& t, const std::vector<TapeD::Ref>& in) {
        return t.concat_ch(in[0], in[1]);
      },
      {random_tensor(rng, {2, 3, 4}), random_tensor(rng, {3, 3, 4})}, rng);

  check_gradients(
      [&](TapeD& t, const std::vector<TapeD::Ref>& in) {
        return t.slice_ch(in[0], 1, 3);
      },
      {random_tensor(rng, {4, 3, 3})}, rng);

  check_gradients(
      [&](TapeD& t, const std::vector<TapeD::Ref>& in) {
        return t.crop2d(in[0], 3, 2);
      },
      {random_tensor(rng, {2, 5, 4})}, rng);

  check_gradients(
      [&](TapeD& t, const std::vector<TapeD::Ref>& in) {
        return t.add_bias_c(in[0], in[1]);
      },
      {random_tensor(rng, {3, 4, 4}), random_tensor(rng, {3})}, rng);
}

TEST_CASE("slice of concat returns the original parts") {
  Rng rng(104);
  TapeD t;
  TensorD a = random_tensor(rng, {2, 3, 3});
  TensorD b = random_tensor(rng, {1, 3, 3});
  auto cat = t.concat_ch(t.leaf(a), t.leaf(b));
  CHECK(max_abs_diff(t.value(t.slice_ch(cat, 0, 2)), a) == 0.0);
  CHECK(max_abs_diff(t.value(t.slice_ch(cat, 2, 3)), b) == 0.0);
}

TEST_CASE("conv2d forward matches the direct-loop oracle") {
  Rng rng(105);
  for (int iter = 0; iter < 30; ++iter) {
    const std::int64_t cin = 1 + static_cast<std::int64_t>(rng.uniform_int(3));
    const std::int64_t cout = 1 + static_cast<std::int64_t>(rng.uniform_int(3));
    const std::int64_t k = std::vector<std::int64_t>{1, 3, 5, 7, 11}[rng.uniform_int(5)];
    const std::int64_t pad = k / 2;
    const std::int64_t h = k + static_cast<std::int64_t>(rng.uniform_int(6));
    const std::int64_t w = k + static_cast<std::int64_t>(rng.uniform_int(6));
    TensorD x = random_tensor(rng, {cin, h, w});
    TensorD wt = random_tensor(rng, {cout, cin, k, k});
    TapeD t;
    auto y = t.conv2d(t.leaf(x), t.leaf(wt), pad);
    TensorD want = conv2d_reference(x, wt, pad);
    CHECK(t.value(y).shape == want.shape);
    CHECK(max_abs_diff(t.value(y), want) < 1e-12);
  }
}

TEST_CASE("conv2d gradients match finite differences") {
  Rng rng(106);
  for (std::int64_t k : {1, 3, 5}) {
    check_gradients(
        [&, k](TapeD& t, const std::vector<TapeD::Ref>& in) {
          return t.conv2d(in[0], in[1], k / 2);
        },
        {random_tensor(rng, {2, 5, 6}), random_tensor(rng, {3, 2, k, k})},
        rng);
  }
}

TEST_CASE("conv_transpose2d inverts shapes and matches finite differences") {
  Rng rng(107);
  TapeD t;
  TensorD x = random_tensor(rng, {2, 5, 7});
  TensorD w = random_tensor(rng, {2, 3, 4, 4});
  auto y = t.conv_transpose2d(t.leaf(x), t.leaf(w), 2, 1);
  // k=4, s=2, p=1 exactly doubles the spatial size.
  CHECK(t.value(y).shape == std::vector<std::int64_t>{3, 10, 14});

  check_gradients(
      [&](TapeD& tp, const std::vector<TapeD::Ref>& in) {
        return tp.conv_transpose2d(in[0], in[1], 2, 1);
      },
      {random_tensor(rng, {2, 3, 4}), random_tensor(rng, {2, 2, 4, 4})}, rng);
}

TEST_CASE("conv_transpose2d agrees with the adjoint of conv2d") {
  // For stride 1 and matching padding, <conv(x), y> == <x, convT(y)> with
  // the same kernel; checking the inner products pins the transpose
  // convention without duplicating loops.
  Rng rng(108);
  TensorD x = random_tensor(rng, {2, 6, 6});
  TensorD w = random_tensor(rng, {3, 2, 3, 3});  // [Cout,Cin,k,k]
  TapeD t;
  auto cx = t.conv2d(t.leaf(x), t.leaf(w), 1);
  TensorD y = random_tensor(rng, {3, 6, 6});
  double lhs = 0.0;
  for (std::int64_t i = 0; i < y.numel(); ++i) lhs += t.value(cx)[i] * y[i];

  // convT reads the same [3,2,k,k] block as [Cin,Cout,k,k], which is
  // exactly the adjoint pairing; no axis shuffle is needed.
  auto cty = t.conv_transpose2d(t.leaf(y), t.leaf(w), 1, 1);
  double rhs = 0.0;
  for (std::int64_t i = 0; i < x.numel(); ++i) rhs += x[i] * t.value(cty)[i];
  CHECK(std::abs(lhs - rhs) < 1e-10);
}

TEST_CASE("maxpool2x2 handles odd edges with a zero pad") {
  TapeD t;
  TensorD x({1, 3, 3});
  x.data = {1, 2, -1, 4, 3, -2, -5, -6, -7};
  auto xr = t.leaf(x);
  auto y = t.maxpool2x2(xr);
  REQUIRE(t.value(y).shape == std::vector<std::int64_t>{1, 2, 2});
  CHECK(t.value(y).at(0, 0, 0) == 4.0);
  // Every truncated window here holds only negative real values, so the
  // implicit zero pad wins in all three edge cells.
  CHECK(t.value(y).at(0, 0, 1) == 0.0);
  CHECK(t.value(y).at(0, 1, 0) == 0.0);
  CHECK(t.value(y).at(0, 1, 1) == 0.0);

  auto loss = t.sum_all(y);
  t.backward(loss);
  // Zero-pad winners route no gradient anywhere; only the 4 gets one.
  std::vector<double> want = {0, 0, 0, 1, 0, 0, 0, 0, 0};
  CHECK(t.grad(xr).data == want);
}

TEST_CASE("maxpool2x2 matches finite differences away from ties") {
  Rng rng(109);
  // Distinct-valued input so the argmax is stable under the FD bump.
  TensorD x({2, 5, 6});
  std::vector<double> vals(static_cast<std::size_t>(x.numel()));
  for (std::size_t i = 0; i < vals.size(); ++i) {
    vals[i] = 0.1 * static_cast<double>(i) + rng.uniform(0.0, 0.05) + 0.1;
  }
  // Shuffle deterministically.
  for (std::size_t i = vals.size(); i > 1; --i) {
    std::swap(vals[i - 1], vals[rng.uniform_int(i)]);
  }
  x.data = vals;
  check_gradients(
      [&](TapeD& t, const std::vector<TapeD::Ref>& in) {
        return t.maxpool2x2(in[0]);
      },
      {x}, rng);
}

TEST_CASE("channel_norm standardizes each channel") {
  Rng rng(110);
  TapeD t;
  TensorD x = random_tensor(rng, {3, 4, 5}, -2.0, 5.0);
  TensorD gamma({3}, 1.0);
  TensorD beta({3}, 0.0);
  auto y = t.channel_norm(t.leaf(x), t.leaf(gamma), t.leaf(beta));
  for (std::int64_t c = 0; c < 3; ++c) {
    double m = 0.0, v = 0.0;
    for (std::int64_t i = 0; i < 20; ++i) m += t.value(y).data[static_cast<std::size_t>(c * 20 + i)];
    m /= 20.0;
    for (std::int64_t i = 0; i < 20; ++i) {
      const double d = t.value(y).data[static_cast<std::size_t>(c * 20 + i)] - m;
      v += d * d;
    }
    v /= 20.0;
    CHECK(std::abs(m) < 1e-12);
    CHECK(std::abs(v - 1.0) < 1e-4);  // eps shrinks the variance slightly
  }
}

TEST_CASE("channel_norm gradients match finite differences") {
  Rng rng(111);
  check_gradients(
      [&](TapeD& t, const std::vector<TapeD::Ref>& in) {
        return t.channel_norm(in[0], in[1], in[2]);
      },
      {random_tensor(rng, {2, 3, 4}), random_tensor(rng, {2}, 0.5, 1.5),
       random_tensor(rng, {2})},
      rng, 1e-5, 1e-5);
}

TEST_CASE("gradients accumulate when a node fans out") {
  Rng rng(112);
  check_gradients(
      [&](TapeD& t, const std::vector<TapeD::Ref>& in) {
        auto a = t.sigmoid(in[0]);
        auto b = t.tanh_(in[0]);
        return t.mul(a, b);
      },
      {random_tensor(rng, {2, 2, 3})}, rng);
}

TEST_CASE("backward demands a scalar loss") {
  TapeD t;
  auto x = t.leaf(TensorD({2, 2}, 1.0));
  CHECK_THROWS_AS(t.backward(x), TrainError);
}
