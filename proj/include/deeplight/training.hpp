#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "deeplight/checkpoint.hpp"
#include "deeplight/dataset.hpp"
#include "deeplight/loss.hpp"
#include "deeplight/metrics.hpp"
#include "deeplight/network.hpp"

namespace deeplight {

// Ablation arms. inception_block is reserved and rejected.
enum class Variant {
  full,
  no_hazy,
  no_multibranch,
  inception_block,
  minus_D,
  minus_R,
  minus_L
};

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& name);

struct TrainConfig {
  int epochs = 200;
  double learning_rate = 1e-4;
  int batch_size = 4;
  int stride = 1;   // window anchor stride over the training split
  int threads = 4;  // batch members processed in parallel
  std::uint64_t seed = 0;
  double clip_norm = 1.0;   // global-norm gradient clip
  double threshold = 0.5;   // binarization for the selection metric
  LossConfig loss;
  ModelConfig model;
  std::string dataset_dir;
  std::string out_dir;
  Variant variant = Variant::full;

  // learning_rate 0 is allowed and leaves parameters untouched, which
  // the no-op update test relies on; only negative rates are rejected.
  void validate() const;
};

// Derives the arm's config from a base config.
TrainConfig ablate(const TrainConfig& base, Variant v);

struct EpochLog {
  int epoch = 0;          // 1-based
  double train_loss = 0.0;  // mean over the epoch's optimizer steps
  double val_ets = 0.0;     // strict 1h-cumulative ETS on the val split
  int clip_events = 0;      // batches whose gradient hit the clip
};

// Everything train produces in memory; file outputs are written only when
// out_dir is set.
struct TrainOutcome {
  ParamStore best_params;
  ParamStore last_params;
  std::vector<EpochLog> log;
  int best_epoch = 0;  // 1-based, first epoch attaining the max val ETS
  double best_val_ets = 0.0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

TrainOutcome train_in_memory(const TrainConfig& cfg, const Dataset& ds,
                             const EpochCallback& on_epoch = {});

struct TrainResult {
  std::string best_checkpoint;  // prefix path (".bin"/".json" appended)
  std::string last_checkpoint;
  std::string log_path;
  std::vector<EpochLog> log;
  int best_epoch = 0;
  double best_val_ets = 0.0;
};

// Loads cfg.dataset_dir, trains, writes best/last checkpoints and the
// line-delimited JSON log under cfg.out_dir.
TrainResult train(const TrainConfig& cfg, const EpochCallback& on_epoch = {});

struct EvalReport {
  std::string split;
  double threshold = 0.5;
  CumulativeMode pooling = CumulativeMode::count_pool;
  int windows = 0;
  std::vector<MetricRow> rows;  // strict rows first, then neighborhood
};

// Scores a forecaster over raw (unnormalized) windows; counts pool across
// windows before scores are computed. Horizons are {1,3,6} clipped to h.
EvalReport evaluate_model(const std::vector<SampleWindow>& windows,
                          const NormStats& stats, const ModelConfig& cfg,
                          const ParamStore& params, double threshold,
                          CumulativeMode pooling, int threads);

EvalReport evaluate_persistence(const std::vector<SampleWindow>& windows,
                                int h, double threshold, CumulativeMode pooling);

// File-level drivers used by the CLI.
EvalReport evaluate_checkpoint_file(const std::string& ckpt_path,
                                    const std::string& dataset_dir, Split split,
                                    int stride, double threshold,
                                    CumulativeMode pooling, int threads);
EvalReport evaluate_persistence_split(const std::string& dataset_dir,
                                      Split split, int s, int h, int stride,
                                      double threshold, CumulativeMode pooling);

}  // namespace deeplight
