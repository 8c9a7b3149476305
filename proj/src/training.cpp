#include "deeplight/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <thread>

#include "deeplight/rng.hpp"
#include "deeplight/serialize.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace deeplight {

namespace {

// Runs fn(0..n-1) across up to `threads` workers. Exceptions are captured
// per index and the lowest-index one is rethrown, so failures are as
// deterministic as the single-threaded path.
template <typename Fn>
void parallel_for(int n, int threads, Fn&& fn) {
  threads = std::max(1, std::min(threads, n));
  if (threads <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(threads));
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      for (int i = t; i < n; i += threads) {
        try {
          fn(i);
        } catch (...) {
          errors[static_cast<std::size_t>(i)] = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::vector<int> eval_horizons(int h) {
  std::vector<int> out;
  for (int k : {1, 3, 6}) {
    if (k <= h) out.push_back(k);
  }
  return out;
}

struct SampleGrad {
  double loss = 0.0;
  std::vector<TensorF> grads;  // store order
};

SampleGrad sample_gradient(const SampleWindow& window, const ModelConfig& model,
                           const ParamStore& params, const LossConfig& loss_cfg,
                           const BlurKernel3D& kernel) {
  TapeF tape;
  NetGraph<float> graph(tape, model, params);
  auto frames = graph.forward(window);
  auto pred = frames[0];
  for (std::size_t t = 1; t < frames.size(); ++t) {
    pred = tape.concat_ch(pred, frames[t]);
  }
  auto loss = total_loss_graph(tape, pred, window.target, kernel, loss_cfg);
  SampleGrad out;
  out.loss = static_cast<double>(tape.value(loss).data[0]);
  tape.backward(loss);
  out.grads.reserve(params.order.size());
  for (const auto& name : params.order) {
    out.grads.push_back(tape.grad(graph.param_ref(name)));
  }
  return out;
}

double strict_1h_ets(const std::vector<SampleWindow>& windows,
                     const ModelConfig& model, const ParamStore& params,
                     double threshold, int threads) {
  std::vector<ConfusionCounts> per(windows.size());
  parallel_for(static_cast<int>(windows.size()), threads, [&](int i) {
    const auto pred = deeplight_forward(windows[static_cast<std::size_t>(i)],
                                        model, params);
    per[static_cast<std::size_t>(i)] =
        horizon_counts(pred, windows[static_cast<std::size_t>(i)].target, 1,
                       CountMode::strict, threshold);
  });
  ConfusionCounts total;
  for (const auto& c : per) total += c;
  return ets(total);
}

struct Adam {
  ParamStore m, v;
  std::int64_t step = 0;
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  explicit Adam(const ParamStore& params) {
    for (const auto& name : params.order) {
      m.add(name, TensorF(params.tensors.at(name).shape));
      v.add(name, TensorF(params.tensors.at(name).shape));
    }
  }

  void update(ParamStore& params, const std::vector<TensorF>& grads, double lr) {
    ++step;
    const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
    for (std::size_t p = 0; p < params.order.size(); ++p) {
      const std::string& name = params.order[p];
      TensorF& theta = params.tensors.at(name);
      TensorF& mm = m.tensors.at(name);
      TensorF& vv = v.tensors.at(name);
      const TensorF& g = grads[p];
      for (std::size_t i = 0; i < theta.data.size(); ++i) {
        const double gi = g.data[i];
        const double mi = kBeta1 * mm.data[i] + (1.0 - kBeta1) * gi;
        const double vi = kBeta2 * vv.data[i] + (1.0 - kBeta2) * gi * gi;
        mm.data[i] = static_cast<float>(mi);
        vv.data[i] = static_cast<float>(vi);
        const double step_i = lr * (mi / bc1) / (std::sqrt(vi / bc2) + kEps);
        theta.data[i] = static_cast<float>(theta.data[i] - step_i);
      }
    }
  }
};

}  // namespace

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_hazy: return "no_hazy";
    case Variant::no_multibranch: return "no_multibranch";
    case Variant::inception_block: return "inception_block";
    case Variant::minus_D: return "minus_D";
    case Variant::minus_R: return "minus_R";
    case Variant::minus_L: return "minus_L";
  }
  throw ConfigError("unknown variant");
}

Variant variant_from_name(const std::string& name) {
  for (Variant v : {Variant::full, Variant::no_hazy, Variant::no_multibranch,
                    Variant::inception_block, Variant::minus_D, Variant::minus_R,
                    Variant::minus_L}) {
    if (variant_name(v) == name) return v;
  }
  throw ConfigError("unknown variant '" + name + "'");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (learning_rate < 0.0) throw ConfigError("learning_rate must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (stride < 1) throw ConfigError("stride must be >= 1");
  if (threads < 1) throw ConfigError("threads must be >= 1");
  if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be positive");
  if (!(threshold > 0.0) || !(threshold < 1.0)) {
    throw ConfigError("threshold must lie in (0,1)");
  }
  loss.validate();
  model.validate();
}

TrainConfig ablate(const TrainConfig& base, Variant v) {
  TrainConfig cfg = base;
  cfg.variant = v;
  switch (v) {
    case Variant::full:
      break;
    case Variant::no_hazy:
      cfg.loss.use_hazy = false;
      break;
    case Variant::no_multibranch:
      cfg.model.branch_kernels = {3};
      break;
    case Variant::inception_block:
      throw ConfigError("inception_block variant is reserved and not implemented");
    case Variant::minus_D:
      cfg.model.use_cloud = false;
      break;
    case Variant::minus_R:
      cfg.model.use_radar = false;
      break;
    case Variant::minus_L:
      cfg.model.use_lightning = false;
      break;
  }
  cfg.validate();
  return cfg;
}

TrainOutcome train_in_memory(const TrainConfig& cfg, const Dataset& ds,
                             const EpochCallback& on_epoch) {
  cfg.validate();
  const NormStats stats = ds.manifest.normalization.empty()
                              ? compute_normalization(ds)
                              : ds.manifest.normalization;

  const auto all_windows = build_windows(ds, cfg.model.s, cfg.model.h, cfg.stride);
  std::vector<SampleWindow> train_w, val_w;
  for (const auto& w : all_windows) {
    if (w.split == Split::train) {
      train_w.push_back(normalize_window(w, stats));
    } else if (w.split == Split::val) {
      val_w.push_back(normalize_window(w, stats));
    }
  }
  if (train_w.empty()) throw ConfigError("training split yields no windows");

  ParamStore params = init_params(cfg.model, cfg.seed);
  Adam opt(params);
  const BlurKernel3D kernel = gaussian_kernel_3d(cfg.loss);
  Rng shuffle_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);

  TrainOutcome out;
  out.best_params = params;
  out.best_val_ets = -1e300;

  std::vector<std::size_t> order(train_w.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[shuffle_rng.uniform_int(i)]);
    }

    double epoch_loss = 0.0;
    int steps = 0;
    int clip_events = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const int n = static_cast<int>(std::min<std::size_t>(
          static_cast<std::size_t>(cfg.batch_size), order.size() - start));
      std::vector<SampleGrad> samples(static_cast<std::size_t>(n));
      parallel_for(n, cfg.threads, [&](int i) {
        samples[static_cast<std::size_t>(i)] = sample_gradient(
            train_w[order[start + static_cast<std::size_t>(i)]], cfg.model,
            params, cfg.loss, kernel);
      });

      double batch_loss = 0.0;
      for (int i = 0; i < n; ++i) {
        batch_loss += samples[static_cast<std::size_t>(i)].loss;
      }
      batch_loss /= n;
      if (!std::isfinite(batch_loss)) {
        throw TrainError("non-finite loss at epoch " + std::to_string(epoch) +
                         " batch " + std::to_string(steps));
      }

      // Mean gradient over the batch, reduced in sample order so reruns
      // are bit-identical regardless of thread scheduling.
      std::vector<TensorF> grad = std::move(samples[0].grads);
      for (int i = 1; i < n; ++i) {
        for (std::size_t p = 0; p < grad.size(); ++p) {
          const auto& src = samples[static_cast<std::size_t>(i)].grads[p];
          for (std::size_t k = 0; k < grad[p].data.size(); ++k) {
            grad[p].data[k] += src.data[k];
          }
        }
      }
      double sq_norm = 0.0;
      for (auto& g : grad) {
        for (auto& x : g.data) {
          x /= static_cast<float>(n);
          sq_norm += static_cast<double>(x) * static_cast<double>(x);
        }
      }
      const double norm = std::sqrt(sq_norm);
      if (norm > cfg.clip_norm) {
        const float scale = static_cast<float>(cfg.clip_norm / norm);
        for (auto& g : grad) {
          for (auto& x : g.data) x *= scale;
        }
        ++clip_events;
      }
      opt.update(params, grad, cfg.learning_rate);
      epoch_loss += batch_loss;
      ++steps;
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.train_loss = epoch_loss / std::max(1, steps);
    entry.clip_events = clip_events;
    entry.val_ets = val_w.empty() ? 0.0
                                  : strict_1h_ets(val_w, cfg.model, params,
                                                  cfg.threshold, cfg.threads);
    out.log.push_back(entry);
    if (on_epoch) on_epoch(entry);

    if (entry.val_ets > out.best_val_ets) {
      out.best_val_ets = entry.val_ets;
      out.best_epoch = epoch;
      out.best_params = params;
    }
  }
  out.last_params = std::move(params);
  return out;
}

TrainResult train(const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (cfg.dataset_dir.empty()) throw ConfigError("dataset_dir is required");
  if (cfg.out_dir.empty()) throw ConfigError("out_dir is required");
  const Dataset ds = load_dataset(cfg.dataset_dir);
  TrainOutcome outcome = train_in_memory(cfg, ds, on_epoch);

  fs::create_directories(cfg.out_dir);
  const std::string best_prefix = (fs::path(cfg.out_dir) / "best").string();
  const std::string last_prefix = (fs::path(cfg.out_dir) / "last").string();

  json meta;
  meta["optimizer"] = {{"name", "adam"},
                       {"beta1", 0.9},
                       {"beta2", 0.999},
                       {"eps", 1e-8},
                       {"clip_norm", cfg.clip_norm}};
  meta["selection_metric"] = "strict 1h-cumulative ETS on val";
  meta["train_config"] = train_to_json(cfg);
  meta["epochs_run"] = cfg.epochs;

  json best_meta = meta;
  best_meta["checkpoint"] = "best";
  best_meta["epoch"] = outcome.best_epoch;
  best_meta["val_ets"] = outcome.best_val_ets;
  save_checkpoint(best_prefix, cfg.model, outcome.best_params, best_meta);

  json last_meta = meta;
  last_meta["checkpoint"] = "last";
  last_meta["epoch"] = cfg.epochs;
  last_meta["val_ets"] = outcome.log.empty() ? 0.0 : outcome.log.back().val_ets;
  save_checkpoint(last_prefix, cfg.model, outcome.last_params, last_meta);

  const std::string log_path = (fs::path(cfg.out_dir) / "train_log.jsonl").string();
  std::ofstream log(log_path, std::ios::trunc);
  if (!log) throw StorageError("cannot write " + log_path);
  for (const auto& e : outcome.log) {
    log << epoch_log_to_json(e).dump() << "\n";
  }

  TrainResult result;
  result.best_checkpoint = best_prefix;
  result.last_checkpoint = last_prefix;
  result.log_path = log_path;
  result.log = std::move(outcome.log);
  result.best_epoch = outcome.best_epoch;
  result.best_val_ets = outcome.best_val_ets;
  return result;
}

namespace {

EvalReport score_forecasts(const std::vector<SampleWindow>& windows, int h,
                           double threshold, CumulativeMode pooling, int threads,
                           const std::function<TensorF(const SampleWindow&)>& fc) {
  EvalReport report;
  report.threshold = threshold;
  report.pooling = pooling;
  report.windows = static_cast<int>(windows.size());
  const auto horizons = eval_horizons(h);

  struct Cell {
    ConfusionCounts strict, neigh;
  };
  std::vector<std::vector<Cell>> per(windows.size());
  parallel_for(static_cast<int>(windows.size()), threads, [&](int i) {
    const auto& w = windows[static_cast<std::size_t>(i)];
    const TensorF pred = fc(w);
    auto& cells = per[static_cast<std::size_t>(i)];
    cells.resize(horizons.size());
    for (std::size_t k = 0; k < horizons.size(); ++k) {
      cells[k].strict = horizon_counts(pred, w.target, horizons[k],
                                       CountMode::strict, threshold, pooling);
      cells[k].neigh = horizon_counts(pred, w.target, horizons[k],
                                      CountMode::neighborhood, threshold, pooling);
    }
  });

  for (CountMode mode : {CountMode::strict, CountMode::neighborhood}) {
    for (std::size_t k = 0; k < horizons.size(); ++k) {
      ConfusionCounts total;
      for (const auto& cells : per) {
        total += mode == CountMode::strict ? cells[k].strict : cells[k].neigh;
      }
      MetricRow row;
      row.mode = mode;
      row.horizon = horizons[k];
      row.counts = total;
      row.scores = compute_scores(total);
      report.rows.push_back(row);
    }
  }
  return report;
}

std::vector<SampleWindow> split_windows(const Dataset& ds, int s, int h,
                                        int stride, Split split) {
  std::vector<SampleWindow> out;
  for (auto& w : build_windows(ds, s, h, stride)) {
    if (w.split == split) out.push_back(std::move(w));
  }
  return out;
}

}  // namespace

EvalReport evaluate_model(const std::vector<SampleWindow>& windows,
                          const NormStats& stats, const ModelConfig& cfg,
                          const ParamStore& params, double threshold,
                          CumulativeMode pooling, int threads) {
  return score_forecasts(windows, cfg.h, threshold, pooling, threads,
                         [&](const SampleWindow& w) {
                           return deeplight_forward(normalize_window(w, stats),
                                                    cfg, params);
                         });
}

EvalReport evaluate_persistence(const std::vector<SampleWindow>& windows, int h,
                                double threshold, CumulativeMode pooling) {
  return score_forecasts(windows, h, threshold, pooling, 1,
                         [](const SampleWindow& w) {
                           return persistence_forecast(w);
                         });
}

EvalReport evaluate_checkpoint_file(const std::string& ckpt_path,
                                    const std::string& dataset_dir, Split split,
                                    int stride, double threshold,
                                    CumulativeMode pooling, int threads) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const Dataset ds = load_dataset(dataset_dir);
  if (ckpt.model.rows != ds.manifest.grid.rows ||
      ckpt.model.cols != ds.manifest.grid.cols) {
    throw ConfigError("checkpoint grid does not match the dataset grid");
  }
  const NormStats stats = ds.manifest.normalization.empty()
                              ? compute_normalization(ds)
                              : ds.manifest.normalization;
  auto windows = split_windows(ds, ckpt.model.s, ckpt.model.h, stride, split);
  auto report = evaluate_model(windows, stats, ckpt.model, ckpt.params,
                               threshold, pooling, threads);
  report.split = split_name(split);
  return report;
}

EvalReport evaluate_persistence_split(const std::string& dataset_dir, Split split,
                                      int s, int h, int stride, double threshold,
                                      CumulativeMode pooling) {
  const Dataset ds = load_dataset(dataset_dir);
  auto windows = split_windows(ds, s, h, stride, split);
  auto report = evaluate_persistence(windows, h, threshold, pooling);
  report.split = split_name(split);
  return report;
}

}  // namespace deeplight
