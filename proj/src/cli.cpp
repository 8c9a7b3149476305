#include "deeplight/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "deeplight/errors.hpp"
#include "deeplight/ingest.hpp"
#include "deeplight/plot.hpp"
#include "deeplight/serialize.hpp"
#include "deeplight/synthetic.hpp"
#include "deeplight/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace deeplight {

namespace {

void refuse_existing(const std::string& path, bool force) {
  if (!force && fs::exists(path)) {
    throw StorageError(path + " already exists (pass --force to overwrite)");
  }
}

GridSpec square_grid(std::int64_t n, double lat_min, double lon_min,
                     double cell_deg) {
  return GridSpec{n,
                  n,
                  lat_min,
                  lat_min + cell_deg * static_cast<double>(n),
                  lon_min,
                  lon_min + cell_deg * static_cast<double>(n),
                  cell_deg * 111.0 / 1.0};
}

void print_report(const EvalReport& report) {
  std::printf("split=%s windows=%d threshold=%.3f pooling=%s\n",
              report.split.c_str(), report.windows, report.threshold,
              pooling_name(report.pooling));
  std::printf(
      "mode\thorizon\ttp\tfp\tfn\ttn\tpod\tfar\tets\tmicro_f1\tmacro_f1\n");
  for (const auto& row : report.rows) {
    std::printf("%s\t%d\t%lld\t%lld\t%lld\t%lld\t%.4f\t%.4f\t%.4f\t%.4f\t%.4f\n",
                count_mode_name(row.mode), row.horizon,
                static_cast<long long>(row.counts.tp),
                static_cast<long long>(row.counts.fp),
                static_cast<long long>(row.counts.fn),
                static_cast<long long>(row.counts.tn), row.scores.pod,
                row.scores.far, row.scores.ets, row.scores.micro_f1,
                row.scores.macro_f1);
  }
}

void write_report(const EvalReport& report, const std::string& out,
                  bool force) {
  if (out.empty()) return;
  refuse_existing(out, force);
  std::ofstream f(out, std::ios::trunc);
  if (!f) throw StorageError("cannot write " + out);
  f << report_to_json(report).dump(2) << "\n";
  std::printf("wrote %s\n", out.c_str());
}

// predict: slice the s input hours out of a stored dataset
SampleWindow window_at_anchor(const Dataset& ds, const ModelConfig& model,
                              std::int64_t anchor_idx) {
  const auto& m = ds.manifest;
  const std::int64_t rows = m.grid.rows;
  const std::int64_t cols = m.grid.cols;
  SampleWindow w;
  w.anchor_time = m.hours[static_cast<std::size_t>(anchor_idx)];
  w.light_in = TensorF({model.s, 3, rows, cols});
  w.aux_in = TensorF({model.s, 4, rows, cols});
  w.target = TensorF({model.h, rows, cols});  // unused by the forward pass

  const FeatureId light[3] = {FeatureId::occurrence, FeatureId::flash_count,
                              FeatureId::flash_energy};
  const FeatureId aux[4] = {FeatureId::reflectivity, FeatureId::cloud_top_height,
                            FeatureId::cloud_top_pressure,
                            FeatureId::cloud_optical_depth};
  for (int t = 0; t < model.s; ++t) {
    const std::int64_t hour = anchor_idx - model.s + t;
    for (FeatureId f : m.features) {
      if (m.is_gap(f, hour)) {
        throw ConfigError("input hour " +
                          m.hours[static_cast<std::size_t>(hour)] +
                          " is gap-marked for " + feature_name(f));
      }
    }
    for (int ch = 0; ch < 3; ++ch) {
      const auto& frame = ds.frame(light[ch], hour);
      for (std::int64_t r = 0; r < rows; ++r) {
        for (std::int64_t c = 0; c < cols; ++c) {
          w.light_in.at(t, ch, r, c) = frame.at(r, c);
        }
      }
    }
    for (int ch = 0; ch < 4; ++ch) {
      const auto& frame = ds.frame(aux[ch], hour);
      for (std::int64_t r = 0; r < rows; ++r) {
        for (std::int64_t c = 0; c < cols; ++c) {
          w.aux_in.at(t, ch, r, c) = frame.at(r, c);
        }
      }
    }
  }
  return w;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{
      "deeplight: lightning occurrence forecasting on an hourly grid.\n"
      "Raw product downloads cache under $" +
      std::string(kCacheEnvVar) + " (default .cache/deeplight)."};
  app.require_subcommand(1);

  // ---- synth ----
  auto* synth = app.add_subcommand(
      "synth", "Generate a synthetic storm dataset in the container format");
  std::int64_t sy_grid = 32;
  int sy_hours = 400;
  std::uint64_t sy_seed = 0;
  std::string sy_out;
  bool sy_force = false;
  StormParams sy_params;
  synth->add_option("--grid", sy_grid, "grid size N (NxN cells)")
      ->capture_default_str();
  synth->add_option("--hours", sy_hours, "hours to generate")
      ->capture_default_str();
  synth->add_option("--seed", sy_seed, "scene seed")->capture_default_str();
  synth->add_option("--out", sy_out, "output dataset directory")->required();
  synth->add_option("--storms", sy_params.n_storms, "number of storms")
      ->capture_default_str();
  synth->add_option("--blob-sigma", sy_params.blob_sigma, "storm size, cells")
      ->capture_default_str();
  synth->add_option("--drift-y", sy_params.drift[0], "drift, cells/hour")
      ->capture_default_str();
  synth->add_option("--drift-x", sy_params.drift[1], "drift, cells/hour")
      ->capture_default_str();
  synth->add_option("--lifetime", sy_params.lifetime, "storm lifetime, hours")
      ->capture_default_str();
  synth->add_option("--cloud-lead", sy_params.cloud_lead,
                    "hours the cloud signal precedes lightning")
      ->capture_default_str();
  synth->add_option("--base-rate", sy_params.base_rate,
                    "background occurrence probability")
      ->capture_default_str();
  synth->add_option("--gain", sy_params.gain,
                    "occurrence probability per unit intensity")
      ->capture_default_str();
  synth->add_flag("--force", sy_force, "overwrite an existing dataset");
  synth->callback([&] {
    sy_params.seed = sy_seed;
    const auto ds = generate_dataset(square_grid(sy_grid, 30.0, -100.0, 0.04),
                                     sy_hours, sy_params);
    save_dataset(ds, sy_out, sy_force);
    std::int64_t positives = 0, cells = 0;
    for (const auto& f : ds.frames.at(FeatureId::occurrence)) {
      for (float v : f.data) positives += v > 0.0f;
      cells += static_cast<std::int64_t>(f.data.size());
    }
    std::printf("wrote %s: %d hours on %lldx%lld, occurrence rate %.4f%%\n",
                sy_out.c_str(), sy_hours,
                static_cast<long long>(sy_grid),
                static_cast<long long>(sy_grid),
                100.0 * static_cast<double>(positives) /
                    static_cast<double>(cells));
  });

  // ---- ingest ----
  auto* ingest = app.add_subcommand(
      "ingest", "Fetch raw products and grid them into a dataset");
  std::string in_source = "all";
  std::string in_start, in_end, in_out;
  std::string in_cache;
  IngestOptions in_opts;
  std::int64_t in_grid = 159;
  double in_lat_min = 29.667, in_lon_min = -100.032, in_cell = 0.04;
  bool in_force = false;
  ingest->add_option("--source", in_source, "which remote source to pull")
      ->check(CLI::IsMember({"goes", "nexrad", "all"}))
      ->capture_default_str();
  ingest->add_option("--start", in_start, "first hour, e.g. 2022-06-01T00")
      ->required();
  ingest->add_option("--end", in_end, "last hour, inclusive")->required();
  ingest->add_option("--station", in_opts.nexrad.station, "NEXRAD station id")
      ->capture_default_str();
  ingest->add_option("--out", in_out, "output dataset directory")->required();
  ingest->add_option("--grid", in_grid, "grid size N (NxN cells)")
      ->capture_default_str();
  ingest->add_option("--lat-min", in_lat_min, "south edge, degrees")
      ->capture_default_str();
  ingest->add_option("--lon-min", in_lon_min, "west edge, degrees")
      ->capture_default_str();
  ingest->add_option("--cell-deg", in_cell, "cell size, degrees")
      ->capture_default_str();
  ingest->add_option("--goes-url", in_opts.goes.base_url,
                     "override the GOES object store");
  ingest->add_option("--nexrad-url", in_opts.nexrad.base_url,
                     "override the NEXRAD object store");
  ingest->add_option("--cache", in_cache, "raw-product cache directory");
  ingest->add_flag("--offline", in_opts.offline,
                   "use only already-cached products");
  ingest->add_flag("--force", in_force, "overwrite an existing dataset");
  ingest->callback([&] {
    in_opts.grid = square_grid(in_grid, in_lat_min, in_lon_min, in_cell);
    in_opts.start_iso = in_start;
    in_opts.end_iso = in_end;
    in_opts.fetch_goes = in_source != "nexrad";
    in_opts.fetch_nexrad = in_source != "goes";
    if (!in_cache.empty()) {
      in_opts.goes.cache_dir = in_cache;
      in_opts.nexrad.cache_dir = in_cache;
    }
    const auto ds = ingest_hours(in_opts);
    save_dataset(ds, in_out, in_force);
    std::int64_t gap_slots = 0;
    for (const auto& [f, idx] : ds.manifest.gaps) {
      (void)f;
      gap_slots += static_cast<std::int64_t>(idx.size());
    }
    std::printf("wrote %s: %lld hours, %lld gap slots\n", in_out.c_str(),
                static_cast<long long>(ds.manifest.hour_count()),
                static_cast<long long>(gap_slots));
  });

  // ---- train ----
  auto* train_cmd = app.add_subcommand("train", "Train a forecaster");
  std::string tr_data, tr_out, tr_config, tr_variant;
  TrainConfig tr_cfg;
  bool tr_force = false;
  train_cmd->add_option("--data", tr_data, "dataset directory")->required();
  train_cmd->add_option("--out", tr_out, "run output directory")->required();
  train_cmd->add_option("--config", tr_config,
                        "JSON train config (flags override it)");
  auto* o_epochs =
      train_cmd->add_option("--epochs", tr_cfg.epochs, "training epochs");
  auto* o_lr = train_cmd->add_option("--lr", tr_cfg.learning_rate,
                                     "Adam learning rate");
  auto* o_batch =
      train_cmd->add_option("--batch", tr_cfg.batch_size, "windows per step");
  auto* o_stride =
      train_cmd->add_option("--stride", tr_cfg.stride, "window anchor stride");
  auto* o_threads =
      train_cmd->add_option("--threads", tr_cfg.threads, "worker threads");
  auto* o_seed = train_cmd->add_option("--seed", tr_cfg.seed, "run seed");
  auto* o_s = train_cmd->add_option("--window", tr_cfg.model.s, "input hours");
  auto* o_h = train_cmd->add_option("--horizon", tr_cfg.model.h, "forecast hours");
  auto* o_cb = train_cmd->add_option("--c-branch", tr_cfg.model.c_branch,
                                     "channels per stem branch");
  auto* o_ch = train_cmd->add_option("--c-hidden", tr_cfg.model.c_hidden,
                                     "recurrent hidden channels");
  auto* o_thr = train_cmd->add_option("--threshold", tr_cfg.threshold,
                                      "binarization threshold for selection");
  train_cmd->add_option("--variant", tr_variant, "ablation arm")
      ->check(CLI::IsMember({"full", "no_hazy", "no_multibranch", "minus_D",
                             "minus_R", "minus_L"}))
      ->capture_default_str();
  train_cmd->add_flag("--force", tr_force, "overwrite an existing run");
  train_cmd->callback([&] {
    TrainConfig cfg;
    if (!tr_config.empty()) {
      std::ifstream f(tr_config);
      if (!f) throw StorageError("cannot read " + tr_config);
      json j;
      try {
        f >> j;
      } catch (const json::exception& e) {
        throw ConfigError("malformed config " + tr_config + ": " + e.what());
      }
      cfg = train_from_json(j);
    }
    if (o_epochs->count()) cfg.epochs = tr_cfg.epochs;
    if (o_lr->count()) cfg.learning_rate = tr_cfg.learning_rate;
    if (o_batch->count()) cfg.batch_size = tr_cfg.batch_size;
    if (o_stride->count()) cfg.stride = tr_cfg.stride;
    if (o_threads->count()) cfg.threads = tr_cfg.threads;
    if (o_seed->count()) cfg.seed = tr_cfg.seed;
    if (o_s->count()) cfg.model.s = tr_cfg.model.s;
    if (o_h->count()) cfg.model.h = tr_cfg.model.h;
    if (o_cb->count()) cfg.model.c_branch = tr_cfg.model.c_branch;
    if (o_ch->count()) cfg.model.c_hidden = tr_cfg.model.c_hidden;
    if (o_thr->count()) cfg.threshold = tr_cfg.threshold;
    // Re-apply the effective variant so a "variant" field in --config takes
    // effect too, not just the flag.
    const Variant v = tr_variant.empty() ? cfg.variant : variant_from_name(tr_variant);
    cfg = ablate(cfg, v);

    const auto manifest = load_manifest(tr_data);
    cfg.model.rows = manifest.grid.rows;
    cfg.model.cols = manifest.grid.cols;
    cfg.dataset_dir = tr_data;
    cfg.out_dir = tr_out;
    refuse_existing((fs::path(tr_out) / "train_log.jsonl").string(), tr_force);

    const auto result = train(cfg, [](const EpochLog& e) {
      std::printf("epoch %3d  train_loss %.6f  val_ets %.4f  clips %d\n",
                  e.epoch, e.train_loss, e.val_ets, e.clip_events);
      std::fflush(stdout);
    });
    std::printf("best epoch %d (val_ets %.4f)\ncheckpoints: %s %s\nlog: %s\n",
                result.best_epoch, result.best_val_ets,
                result.best_checkpoint.c_str(), result.last_checkpoint.c_str(),
                result.log_path.c_str());
  });

  // ---- eval ----
  auto* eval_cmd =
      app.add_subcommand("eval", "Score a checkpoint or a baseline");
  std::string ev_data, ev_ckpt, ev_baseline, ev_out;
  std::string ev_split = "test", ev_pooling = "count_pool";
  int ev_stride = 1, ev_threads = 4, ev_s = 6, ev_h = 6;
  double ev_threshold = 0.5;
  bool ev_force = false;
  eval_cmd->add_option("--data", ev_data, "dataset directory")->required();
  eval_cmd->add_option("--ckpt", ev_ckpt, "checkpoint prefix or file");
  eval_cmd->add_option("--baseline", ev_baseline, "baseline forecaster")
      ->check(CLI::IsMember({"persistence"}));
  eval_cmd->add_option("--split", ev_split, "split to score")
      ->check(CLI::IsMember({"train", "val", "test"}))
      ->capture_default_str();
  eval_cmd->add_option("--out", ev_out, "write the report as JSON");
  eval_cmd->add_option("--stride", ev_stride, "window anchor stride")
      ->capture_default_str();
  eval_cmd->add_option("--threshold", ev_threshold, "binarization threshold")
      ->capture_default_str();
  eval_cmd->add_option("--pooling", ev_pooling, "cumulative pooling rule")
      ->check(CLI::IsMember({"count_pool", "collapse_max"}))
      ->capture_default_str();
  eval_cmd->add_option("--threads", ev_threads, "worker threads")
      ->capture_default_str();
  eval_cmd->add_option("--window", ev_s, "input hours (baseline only)")
      ->capture_default_str();
  eval_cmd->add_option("--horizon", ev_h, "forecast hours (baseline only)")
      ->capture_default_str();
  eval_cmd->add_flag("--force", ev_force, "overwrite an existing report");
  eval_cmd->callback([&] {
    if (ev_ckpt.empty() == ev_baseline.empty()) {
      throw ConfigError("pass exactly one of --ckpt or --baseline");
    }
    EvalReport report;
    if (!ev_baseline.empty()) {
      report = evaluate_persistence_split(ev_data, split_from_name(ev_split),
                                          ev_s, ev_h, ev_stride, ev_threshold,
                                          pooling_from_name(ev_pooling));
    } else {
      report = evaluate_checkpoint_file(ev_ckpt, ev_data,
                                        split_from_name(ev_split), ev_stride,
                                        ev_threshold,
                                        pooling_from_name(ev_pooling),
                                        ev_threads);
    }
    print_report(report);
    write_report(report, ev_out, ev_force);
  });

  // ---- predict ----
  auto* predict = app.add_subcommand(
      "predict", "Forecast probability frames from an anchor hour");
  std::string pr_ckpt, pr_data, pr_anchor, pr_out;
  bool pr_force = false;
  predict->add_option("--ckpt", pr_ckpt, "checkpoint prefix or file")
      ->required();
  predict->add_option("--data", pr_data, "dataset directory")->required();
  predict->add_option("--anchor", pr_anchor,
                      "first forecast hour, e.g. 2022-06-01T14")
      ->required();
  predict->add_option("--out", pr_out, "output container directory")
      ->required();
  predict->add_flag("--force", pr_force, "overwrite an existing container");
  predict->callback([&] {
    const Checkpoint ckpt = load_checkpoint(pr_ckpt);
    const Dataset ds = load_dataset(pr_data);
    const auto& m = ds.manifest;
    if (ckpt.model.rows != m.grid.rows || ckpt.model.cols != m.grid.cols) {
      throw ConfigError("checkpoint grid does not match the dataset grid");
    }
    const std::int64_t anchor_hour = parse_hour_iso(pr_anchor);
    const std::string anchor_iso = format_hour_iso(anchor_hour);
    const auto it = std::find(m.hours.begin(), m.hours.end(), anchor_iso);
    const std::int64_t idx = it - m.hours.begin();
    if (it == m.hours.end() || idx < ckpt.model.s) {
      throw ConfigError("anchor " + anchor_iso + " needs " +
                        std::to_string(ckpt.model.s) +
                        " stored hours of history");
    }
    const NormStats stats = m.normalization.empty() ? compute_normalization(ds)
                                                    : m.normalization;
    const auto window = window_at_anchor(ds, ckpt.model, idx);
    const TensorF pred = deeplight_forward(normalize_window(window, stats),
                                           ckpt.model, ckpt.params);

    Dataset out;
    out.manifest.grid = m.grid;
    out.manifest.features = {FeatureId::occurrence};
    auto& frames = out.manifest.hours;
    for (int t = 0; t < ckpt.model.h; ++t) {
      frames.push_back(format_hour_iso(anchor_hour + t));
      out.manifest.split_tags.push_back(Split::test);
      TensorF plane({m.grid.rows, m.grid.cols});
      for (std::int64_t r = 0; r < m.grid.rows; ++r) {
        for (std::int64_t c = 0; c < m.grid.cols; ++c) {
          plane.at(r, c) = pred.at(t, r, c);
        }
      }
      out.frames[FeatureId::occurrence].push_back(std::move(plane));
    }
    save_dataset(out, pr_out, pr_force);
    std::printf("wrote %d probability frames to %s (anchor %s)\n",
                ckpt.model.h, pr_out.c_str(), anchor_iso.c_str());
  });

  // ---- plot ----
  auto* plot = app.add_subcommand(
      "plot", "Render truth vs probability panels for each lead time");
  std::string pl_pred, pl_truth, pl_out;
  int pl_scale = 8;
  bool pl_force = false;
  plot->add_option("--pred", pl_pred, "prediction container directory")
      ->required();
  plot->add_option("--truth", pl_truth, "dataset directory with truth")
      ->required();
  plot->add_option("--out", pl_out, "output PNG path")->required();
  plot->add_option("--scale", pl_scale, "pixels per cell")
      ->capture_default_str();
  plot->add_flag("--force", pl_force, "overwrite an existing image");
  plot->callback([&] {
    refuse_existing(pl_out, pl_force);
    const Dataset pred_ds = load_dataset(pl_pred);
    const Dataset truth_ds = load_dataset(pl_truth);
    const auto& hours = pred_ds.manifest.hours;
    const std::int64_t leads = pred_ds.manifest.hour_count();
    const std::int64_t rows = pred_ds.manifest.grid.rows;
    const std::int64_t cols = pred_ds.manifest.grid.cols;
    if (truth_ds.manifest.grid.rows != rows ||
        truth_ds.manifest.grid.cols != cols) {
      throw ConfigError("prediction and truth grids differ");
    }
    TensorF pred({leads, rows, cols});
    TensorF truth({leads, rows, cols});
    for (std::int64_t t = 0; t < leads; ++t) {
      const auto& pf = pred_ds.frame(FeatureId::occurrence, t);
      const auto& th = truth_ds.manifest.hours;
      const auto it = std::find(th.begin(), th.end(),
                                hours[static_cast<std::size_t>(t)]);
      if (it == th.end()) {
        throw ConfigError("truth dataset lacks hour " +
                          hours[static_cast<std::size_t>(t)]);
      }
      const auto& tf =
          truth_ds.frame(FeatureId::occurrence, it - th.begin());
      for (std::int64_t r = 0; r < rows; ++r) {
        for (std::int64_t c = 0; c < cols; ++c) {
          pred.at(t, r, c) = pf.at(r, c);
          truth.at(t, r, c) = tf.at(r, c);
        }
      }
    }
    write_forecast_png(pl_out, pred, truth, pl_scale);
    const auto img = render_forecast(pred, truth, pl_scale);
    std::printf("wrote %s (%lldx%lld px, %lld lead times)\n", pl_out.c_str(),
                static_cast<long long>(img.width),
                static_cast<long long>(img.height),
                static_cast<long long>(leads));
  });

  try {
    app.parse(argc, argv);
    return 0;
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);  // prints help or the usage error
    return rc == 0 ? 0 : 1;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}

}  // namespace deeplight
