#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "deeplight/autograd.hpp"
#include "deeplight/dataset.hpp"
#include "deeplight/errors.hpp"
#include "deeplight/grid.hpp"
#include "deeplight/rng.hpp"
#include "deeplight/tensor.hpp"

namespace deeplight {

// Architecture hyperparameters. The latent spatial size (and with it the
// elementwise peephole shapes) follows from rows/cols and cstem_stages,
// so parameters are created for one grid geometry.
struct ModelConfig {
  int s = 6;  // input history length
  int h = 6;  // forecast horizon
  std::int64_t rows = 32;
  std::int64_t cols = 32;
  int c_branch = 8;       // channels per multi-branch conv branch
  int c_hidden = 32;      // ConvLSTM state channels
  int cstem_stages = 2;   // each stage: multi-branch block then 2x2 pool
  std::vector<int> branch_kernels = {3, 5, 7, 11};
  // Feature-group ablation masks; a disabled group is zeroed without
  // changing the channel layout.
  bool use_lightning = true;
  bool use_radar = true;
  bool use_cloud = true;

  int stem_out() const { return 2 * c_branch; }

  std::int64_t latent_rows() const { return pooled(rows); }
  std::int64_t latent_cols() const { return pooled(cols); }

  void validate() const {
    if (s < 1 || h < 1) throw ConfigError("s and h must be >= 1");
    if (rows < 1 || cols < 1) throw ConfigError("grid must be non-empty");
    if (c_branch < 1 || c_hidden < 1) throw ConfigError("channel counts must be >= 1");
    if (cstem_stages < 1) throw ConfigError("cstem_stages must be >= 1");
    if (branch_kernels.empty()) throw ConfigError("need at least one branch kernel");
    for (int k : branch_kernels) {
      if (k < 1 || k % 2 == 0) throw ConfigError("branch kernels must be odd");
    }
    int ch = c_hidden;
    for (int i = 0; i < cstem_stages; ++i) {
      if (ch % 2 != 0) throw ConfigError("c_hidden must halve cleanly through the upscaler");
      ch /= 2;
    }
    if (latent_rows() < 1 || latent_cols() < 1) {
      throw ConfigError("too many cstem stages for this grid");
    }
  }

 private:
  std::int64_t pooled(std::int64_t n) const {
    for (int i = 0; i < cstem_stages; ++i) n = (n + 1) / 2;
    return n;
  }
};

// Named parameter tensors in a fixed creation order; the order is the
// checkpoint blob layout.
template <typename T>
struct ParamStoreT {
  std::vector<std::string> order;
  std::map<std::string, Tensor<T>> tensors;

  void add(const std::string& name, Tensor<T> t) {
    if (tensors.count(name)) throw ConfigError("duplicate parameter " + name);
    order.push_back(name);
    tensors.emplace(name, std::move(t));
  }
  Tensor<T>& at(const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ConfigError("unknown parameter " + name);
    return it->second;
  }
  const Tensor<T>& at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ConfigError("unknown parameter " + name);
    return it->second;
  }
  std::int64_t total_size() const {
    std::int64_t n = 0;
    for (const auto& [k, v] : tensors) n += v.numel();
    return n;
  }
};

using ParamStore = ParamStoreT<float>;

template <typename U, typename T>
ParamStoreT<U> cast_store(const ParamStoreT<T>& src) {
  ParamStoreT<U> dst;
  for (const auto& name : src.order) {
    const Tensor<T>& t = src.tensors.at(name);
    Tensor<U> u(t.shape);
    for (std::size_t i = 0; i < t.data.size(); ++i) {
      u.data[i] = static_cast<U>(t.data[i]);
    }
    dst.add(name, std::move(u));
  }
  return dst;
}

// He-uniform conv weights, zero biases except a forget-gate bias of 1
// (standard LSTM trick so early training does not flush the cell state),
// zero peepholes, unit batch-norm scale. Deterministic in the seed.
ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed);

enum class MBMode { cstem, lstm };

// Builds the forward graph for one sample on a caller-owned tape. All
// parameters are bound as leaves up front; after backward() their
// gradients are read back through param_ref.
template <typename T>
class NetGraph {
 public:
  using Ref = typename Tape<T>::Ref;
  struct State {
    Ref h, c;
  };

  NetGraph(Tape<T>& tape, const ModelConfig& cfg, const ParamStoreT<T>& store)
      : tape_(tape), cfg_(cfg) {
    cfg.validate();
    for (const auto& name : store.order) {
      refs_[name] = tape_.leaf(store.tensors.at(name));
    }
  }

  Ref param_ref(const std::string& name) const {
    auto it = refs_.find(name);
    if (it == refs_.end()) throw ConfigError("unknown parameter " + name);
    return it->second;
  }

  // One multi-branch block: per-branch conv (+norm in cstem mode) + ReLU,
  // channel concat, 1x1 fuse. The fuse conv carries a bias only in cstem
  // mode; in lstm mode the gate biases are the only additive terms.
  Ref multibranch_conv(Ref x, const std::string& prefix, MBMode mode) {
    Ref cat{};
    bool first = true;
    for (int k : cfg_.branch_kernels) {
      const std::string base = prefix + ".k" + std::to_string(k);
      Ref b = tape_.conv2d(x, param_ref(base + ".w"), k / 2);
      if (mode == MBMode::cstem) {
        b = tape_.channel_norm(b, param_ref(base + ".gamma"), param_ref(base + ".beta"));
      }
      b = tape_.relu(b);
      cat = first ? b : tape_.concat_ch(cat, b);
      first = false;
    }
    Ref fused = tape_.conv2d(cat, param_ref(prefix + ".fuse.w"), 0);
    if (mode == MBMode::cstem) {
      fused = tape_.add_bias_c(fused, param_ref(prefix + ".fuse.b"));
    }
    return fused;
  }

  // cstem_stages repetitions of multi-branch block + 2x2 max pool; odd
  // sizes are zero padded by the pool, giving ceil-division shapes.
  Ref cstem_forward(Ref x, const std::string& enc) {
    for (int i = 0; i < cfg_.cstem_stages; ++i) {
      x = multibranch_conv(x, enc + ".stem" + std::to_string(i), MBMode::cstem);
      x = tape_.maxpool2x2(x);
    }
    return x;
  }

  State mbconvlstm_step(Ref x, State prev, const std::string& cell) {
    const std::int64_t ch = cfg_.c_hidden;
    Ref xb = multibranch_conv(x, cell + ".x", MBMode::lstm);
    Ref hb = multibranch_conv(prev.h, cell + ".h", MBMode::lstm);
    if (tape_.value(xb).dim(0) != 4 * ch) {
      throw ConfigError("gate pre-activation channels must split into four parts");
    }
    auto part = [&](Ref t, int g) {
      return tape_.slice_ch(t, g * ch, (g + 1) * ch);
    };
    Ref f = tape_.sigmoid(tape_.add_bias_c(
        tape_.add(tape_.add(part(xb, 0), part(hb, 0)),
                  tape_.mul(param_ref(cell + ".w_cf"), prev.c)),
        param_ref(cell + ".b_f")));
    Ref i = tape_.sigmoid(tape_.add_bias_c(
        tape_.add(tape_.add(part(xb, 1), part(hb, 1)),
                  tape_.mul(param_ref(cell + ".w_ci"), prev.c)),
        param_ref(cell + ".b_i")));
    Ref c_tilde = tape_.tanh_(tape_.add_bias_c(
        tape_.add(part(xb, 2), part(hb, 2)), param_ref(cell + ".b_c")));
    Ref c = tape_.add(tape_.mul(f, prev.c), tape_.mul(i, c_tilde));
    Ref o = tape_.sigmoid(tape_.add_bias_c(
        tape_.add(tape_.add(part(xb, 3), part(hb, 3)),
                  tape_.mul(param_ref(cell + ".w_co"), c)),
        param_ref(cell + ".b_o")));
    Ref h = tape_.mul(o, tape_.tanh_(c));
    return State{h, c};
  }

  State zero_state() {
    Tensor<T> z({cfg_.c_hidden, cfg_.latent_rows(), cfg_.latent_cols()});
    return State{tape_.leaf(z), tape_.leaf(z)};
  }

  // frames: one CHW leaf per timestep, oldest first.
  State encode(const std::vector<Ref>& frames, const std::string& enc) {
    State st = zero_state();
    for (Ref f : frames) {
      Ref latent = cstem_forward(f, enc);
      st = mbconvlstm_step(latent, st, enc + ".cell");
    }
    return st;
  }

  State fuse_states(State light, State aux) {
    Ref c = tape_.relu(tape_.add_bias_c(
        tape_.conv2d(tape_.concat_ch(light.c, aux.c), param_ref("fusion.c.w"), 0),
        param_ref("fusion.c.b")));
    Ref h = tape_.relu(tape_.add_bias_c(
        tape_.conv2d(tape_.concat_ch(light.h, aux.h), param_ref("fusion.h.w"), 0),
        param_ref("fusion.h.b")));
    return State{h, c};
  }

  // Latent H back to a full-resolution logit map: stride-2 4x4 transposed
  // convs halving channels (ReLU between), 1x1 head, crop to the grid.
  Ref upscale(Ref h) {
    Ref x = h;
    for (int i = 0; i < cfg_.cstem_stages; ++i) {
      const std::string base = "up" + std::to_string(i);
      x = tape_.conv_transpose2d(x, param_ref(base + ".w"), 2, 1);
      x = tape_.add_bias_c(x, param_ref(base + ".b"));
      x = tape_.relu(x);
    }
    x = tape_.conv2d(x, param_ref("head.w"), 0);
    x = tape_.add_bias_c(x, param_ref("head.b"));
    return tape_.crop2d(x, cfg_.rows, cfg_.cols);
  }

  // Autoregressive decoder: starts from the fused state and the last
  // observed occurrence frame; each predicted probability frame becomes
  // the next step's input. Probabilities are nudged off the exact 0/1
  // endpoints so downstream logs are always finite.
  std::vector<Ref> decode(State fused, Ref first_frame) {
    std::vector<Ref> out;
    State st = fused;
    Ref frame = first_frame;
    for (int t = 0; t < cfg_.h; ++t) {
      Ref latent = cstem_forward(frame, "dec");
      st = mbconvlstm_step(latent, st, "dec.cell");
      Ref logits = upscale(st.h);
      Ref prob = tape_.clamp(tape_.sigmoid(logits), T(1e-7), T(1) - T(1e-7));
      out.push_back(prob);
      frame = prob;
    }
    return out;
  }

  // Whole pipeline for one window; returns the h probability frames.
  std::vector<Ref> forward(const SampleWindow& window) {
    const std::int64_t r = cfg_.rows, c = cfg_.cols;
    if (window.light_in.dim(0) != cfg_.s || window.light_in.dim(2) != r ||
        window.light_in.dim(3) != c) {
      throw ConfigError("window shape does not match model config");
    }
    std::vector<Ref> light, aux;
    for (int t = 0; t < cfg_.s; ++t) {
      light.push_back(tape_.leaf(timestep(window.light_in, t, !cfg_.use_lightning, false)));
      aux.push_back(tape_.leaf(timestep(window.aux_in, t, false, true)));
    }
    State l = encode(light, "light");
    State a = encode(aux, "aux");
    State fused = fuse_states(l, a);

    // Seed frame: last observed occurrence map, subject to the same mask
    // as the lightning group.
    Tensor<T> seed({1, r, c});
    if (cfg_.use_lightning) {
      const std::int64_t plane = r * c;
      const float* src = window.light_in.data.data() +
                         (static_cast<std::int64_t>(cfg_.s - 1) * 3) * plane;
      for (std::int64_t i = 0; i < plane; ++i) seed.data[static_cast<std::size_t>(i)] = static_cast<T>(src[i]);
    }
    return decode(fused, tape_.leaf(seed));
  }

 private:
  Tape<T>& tape_;
  const ModelConfig& cfg_;
  std::map<std::string, Ref> refs_;

  // Extracts timestep t of an [s,C,R,C] window tensor as a CHW tensor,
  // applying the feature-group masks.
  Tensor<T> timestep(const TensorF& seq, int t, bool mask_all, bool is_aux) const {
    const std::int64_t ch = seq.dim(1), r = seq.dim(2), c = seq.dim(3);
    Tensor<T> out({ch, r, c});
    const std::int64_t plane = r * c;
    for (std::int64_t ci = 0; ci < ch; ++ci) {
      bool masked = mask_all;
      if (is_aux) {
        if (ci == 0 && !cfg_.use_radar) masked = true;
        if (ci >= 1 && !cfg_.use_cloud) masked = true;
      }
      if (masked) continue;  // stays zero
      const float* src = seq.data.data() + (static_cast<std::int64_t>(t) * ch + ci) * plane;
      T* dst = out.data.data() + ci * plane;
      for (std::int64_t i = 0; i < plane; ++i) dst[i] = static_cast<T>(src[i]);
    }
    return out;
  }
};

// Convenience wrapper: runs the graph and stacks the h probability frames
// into an h x rows x cols tensor.
TensorF deeplight_forward(const SampleWindow& window, const ModelConfig& cfg,
                          const ParamStore& params);

}  // namespace deeplight
