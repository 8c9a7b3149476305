#include "deeplight/network.hpp"

#include <cmath>

namespace deeplight {

namespace {

TensorF he_uniform(Rng& rng, std::vector<std::int64_t> shape,
                   std::int64_t fan_in) {
  TensorF w(std::move(shape));
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (auto& v : w.data) v = static_cast<float>(rng.uniform(-limit, limit));
  return w;
}

void add_multibranch(ParamStore& ps, Rng& rng, const std::string& prefix,
                     const ModelConfig& cfg, std::int64_t in_ch,
                     std::int64_t out_ch, MBMode mode) {
  for (int k : cfg.branch_kernels) {
    const std::string base = prefix + ".k" + std::to_string(k);
    ps.add(base + ".w",
           he_uniform(rng, {cfg.c_branch, in_ch, k, k}, in_ch * k * k));
    if (mode == MBMode::cstem) {
      ps.add(base + ".gamma", TensorF({cfg.c_branch}, 1.0f));
      ps.add(base + ".beta", TensorF({cfg.c_branch}, 0.0f));
    }
  }
  const std::int64_t cat = static_cast<std::int64_t>(cfg.branch_kernels.size()) * cfg.c_branch;
  ps.add(prefix + ".fuse.w", he_uniform(rng, {out_ch, cat, 1, 1}, cat));
  if (mode == MBMode::cstem) {
    ps.add(prefix + ".fuse.b", TensorF({out_ch}, 0.0f));
  }
}

void add_encoder(ParamStore& ps, Rng& rng, const std::string& enc,
                 const ModelConfig& cfg, std::int64_t in_ch) {
  std::int64_t ch = in_ch;
  for (int i = 0; i < cfg.cstem_stages; ++i) {
    add_multibranch(ps, rng, enc + ".stem" + std::to_string(i), cfg, ch,
                    cfg.stem_out(), MBMode::cstem);
    ch = cfg.stem_out();
  }
  add_multibranch(ps, rng, enc + ".cell.x", cfg, cfg.stem_out(),
                  4 * cfg.c_hidden, MBMode::lstm);
  add_multibranch(ps, rng, enc + ".cell.h", cfg, cfg.c_hidden,
                  4 * cfg.c_hidden, MBMode::lstm);
  const std::int64_t lr = cfg.latent_rows(), lc = cfg.latent_cols();
  ps.add(enc + ".cell.w_cf", TensorF({cfg.c_hidden, lr, lc}, 0.0f));
  ps.add(enc + ".cell.w_ci", TensorF({cfg.c_hidden, lr, lc}, 0.0f));
  ps.add(enc + ".cell.w_co", TensorF({cfg.c_hidden, lr, lc}, 0.0f));
  // Forget gate starts open so the cell can carry state before any
  // learning has happened.
  ps.add(enc + ".cell.b_f", TensorF({cfg.c_hidden}, 1.0f));
  ps.add(enc + ".cell.b_i", TensorF({cfg.c_hidden}, 0.0f));
  ps.add(enc + ".cell.b_c", TensorF({cfg.c_hidden}, 0.0f));
  ps.add(enc + ".cell.b_o", TensorF({cfg.c_hidden}, 0.0f));
}

}  // namespace

ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  ParamStore ps;
  add_encoder(ps, rng, "light", cfg, 3);
  add_encoder(ps, rng, "aux", cfg, 4);
  add_encoder(ps, rng, "dec", cfg, 1);
  ps.add("fusion.c.w",
         he_uniform(rng, {cfg.c_hidden, 2 * cfg.c_hidden, 1, 1}, 2 * cfg.c_hidden));
  ps.add("fusion.c.b", TensorF({cfg.c_hidden}, 0.0f));
  ps.add("fusion.h.w",
         he_uniform(rng, {cfg.c_hidden, 2 * cfg.c_hidden, 1, 1}, 2 * cfg.c_hidden));
  ps.add("fusion.h.b", TensorF({cfg.c_hidden}, 0.0f));
  std::int64_t ch = cfg.c_hidden;
  for (int i = 0; i < cfg.cstem_stages; ++i) {
    ps.add("up" + std::to_string(i) + ".w",
           he_uniform(rng, {ch, ch / 2, 4, 4}, ch * 16));
    ps.add("up" + std::to_string(i) + ".b", TensorF({ch / 2}, 0.0f));
    ch /= 2;
  }
  ps.add("head.w", he_uniform(rng, {1, ch, 1, 1}, ch));
  ps.add("head.b", TensorF({1}, 0.0f));
  return ps;
}

TensorF deeplight_forward(const SampleWindow& window, const ModelConfig& cfg,
                          const ParamStore& params) {
  TapeF tape;
  NetGraph<float> graph(tape, cfg, params);
  std::vector<TapeF::Ref> frames = graph.forward(window);
  TensorF out({cfg.h, cfg.rows, cfg.cols});
  const std::int64_t plane = cfg.rows * cfg.cols;
  for (int t = 0; t < cfg.h; ++t) {
    const TensorF& f = tape.value(frames[static_cast<std::size_t>(t)]);
    std::copy(f.data.begin(), f.data.end(),
              out.data.begin() + static_cast<std::int64_t>(t) * plane);
  }
  return out;
}

}  // namespace deeplight
