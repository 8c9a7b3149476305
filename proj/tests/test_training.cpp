#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "deeplight/serialize.hpp"
#include "deeplight/synthetic.hpp"
#include "deeplight/training.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace deeplight;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

GridSpec desk_grid(std::int64_t n) {
  return GridSpec{n, n, 30.0, 30.0 + 0.04 * static_cast<double>(n),
                  -100.0, -100.0 + 0.04 * static_cast<double>(n), 4.0};
}

// Small but non-degenerate scene; every split yields a handful of windows.
Dataset fixture_dataset() {
  StormParams p;
  p.n_storms = 8;
  p.lifetime = 16;
  p.seed = 3;
  return generate_dataset(desk_grid(16), 80, p);
}

TrainConfig fixture_config() {
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.learning_rate = 1e-3;
  cfg.batch_size = 4;
  cfg.threads = 2;
  cfg.seed = 5;
  cfg.model.s = 3;
  cfg.model.h = 3;
  cfg.model.rows = 16;
  cfg.model.cols = 16;
  cfg.model.c_branch = 2;
  cfg.model.c_hidden = 4;
  cfg.model.branch_kernels = {3, 5};
  return cfg;
}

bool stores_identical(const ParamStore& a, const ParamStore& b) {
  if (a.order != b.order) return false;
  for (const auto& name : a.order) {
    const auto& ta = a.tensors.at(name);
    const auto& tb = b.tensors.at(name);
    if (ta.shape != tb.shape) return false;
    for (std::size_t i = 0; i < ta.data.size(); ++i) {
      if (ta.data[i] != tb.data[i]) return false;
    }
  }
  return true;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("deeplight_" + tag + "_" +
                                        std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("variant names round trip and bad names are rejected") {
  for (Variant v : {Variant::full, Variant::no_hazy, Variant::no_multibranch,
                    Variant::inception_block, Variant::minus_D, Variant::minus_R,
                    Variant::minus_L}) {
    CHECK(variant_from_name(variant_name(v)) == v);
  }
  CHECK(variant_name(Variant::minus_D) == "minus_D");
  CHECK_THROWS_AS(variant_from_name("bogus"), ConfigError);
  CHECK_THROWS_AS(variant_from_name(""), ConfigError);
}

TEST_CASE("ablate changes exactly the arm's knob") {
  const TrainConfig base = fixture_config();

  const auto full = ablate(base, Variant::full);
  CHECK(full.loss.use_hazy);
  CHECK(full.model.branch_kernels == base.model.branch_kernels);

  const auto nh = ablate(base, Variant::no_hazy);
  CHECK_FALSE(nh.loss.use_hazy);
  CHECK(nh.model.branch_kernels == base.model.branch_kernels);
  CHECK(nh.variant == Variant::no_hazy);

  const auto nm = ablate(base, Variant::no_multibranch);
  CHECK(nm.model.branch_kernels == std::vector<int>{3});
  CHECK(nm.loss.use_hazy);

  CHECK_FALSE(ablate(base, Variant::minus_D).model.use_cloud);
  CHECK_FALSE(ablate(base, Variant::minus_R).model.use_radar);
  CHECK_FALSE(ablate(base, Variant::minus_L).model.use_lightning);
  CHECK(ablate(base, Variant::minus_D).model.use_radar);
  CHECK(ablate(base, Variant::minus_L).model.use_cloud);

  CHECK_THROWS_AS(ablate(base, Variant::inception_block), ConfigError);
  CHECK(base.model.use_cloud);  // base untouched
}

TEST_CASE("config validation rejects bad knobs, lr 0 is allowed") {
  TrainConfig cfg = fixture_config();
  CHECK_NOTHROW(cfg.validate());
  cfg.learning_rate = 0.0;
  CHECK_NOTHROW(cfg.validate());
  cfg.learning_rate = -1e-4;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = fixture_config();
  cfg.epochs = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = fixture_config();
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = fixture_config();
  cfg.threshold = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = fixture_config();
  cfg.clip_norm = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("learning rate zero leaves every parameter bit-identical") {
  const Dataset ds = fixture_dataset();
  TrainConfig cfg = fixture_config();
  cfg.epochs = 1;
  cfg.learning_rate = 0.0;
  const auto out = train_in_memory(cfg, ds);
  const ParamStore fresh = init_params(cfg.model, cfg.seed);
  CHECK(stores_identical(out.last_params, fresh));
  CHECK(out.log.size() == 1);
  CHECK(std::isfinite(out.log[0].train_loss));
}

TEST_CASE("same seed reproduces the run bit for bit across thread counts") {
  const Dataset ds = fixture_dataset();
  TrainConfig cfg = fixture_config();

  auto a = train_in_memory(cfg, ds);
  auto b = train_in_memory(cfg, ds);
  TrainConfig wide = cfg;
  wide.threads = 4;
  auto c = train_in_memory(wide, ds);

  REQUIRE(a.log.size() == b.log.size());
  REQUIRE(a.log.size() == c.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    CHECK(a.log[i].train_loss == b.log[i].train_loss);
    CHECK(a.log[i].val_ets == b.log[i].val_ets);
    CHECK(a.log[i].clip_events == b.log[i].clip_events);
    CHECK(a.log[i].train_loss == c.log[i].train_loss);
    CHECK(a.log[i].val_ets == c.log[i].val_ets);
  }
  CHECK(stores_identical(a.last_params, b.last_params));
  CHECK(stores_identical(a.last_params, c.last_params));

  TrainConfig other = cfg;
  other.seed = 6;
  auto d = train_in_memory(other, ds);
  CHECK_FALSE(stores_identical(a.last_params, d.last_params));
}

TEST_CASE("training reduces the loss on the fixture scene") {
  const Dataset ds = fixture_dataset();
  TrainConfig cfg = fixture_config();
  cfg.epochs = 3;
  const auto out = train_in_memory(cfg, ds);
  REQUIRE(out.log.size() == 3);
  for (const auto& e : out.log) CHECK(std::isfinite(e.train_loss));
  CHECK(out.log.back().train_loss < out.log.front().train_loss);
}

TEST_CASE("best checkpoint is the first maximum of the val metric") {
  const Dataset ds = fixture_dataset();
  TrainConfig cfg = fixture_config();
  cfg.epochs = 3;
  const auto out = train_in_memory(cfg, ds);

  double best = -1e300;
  int first_argmax = 0;
  for (const auto& e : out.log) {
    if (e.val_ets > best) {
      best = e.val_ets;
      first_argmax = e.epoch;
    }
  }
  CHECK(out.best_val_ets == best);
  CHECK(out.best_epoch == first_argmax);

  // Rerunning with epochs truncated at the best epoch must land on the
  // same parameters the full run selected.
  TrainConfig trunc = cfg;
  trunc.epochs = out.best_epoch;
  const auto short_run = train_in_memory(trunc, ds);
  CHECK(stores_identical(short_run.last_params, out.best_params));
}

TEST_CASE("non-finite loss aborts with epoch and batch diagnostics") {
  Dataset ds = fixture_dataset();
  ds.frames[FeatureId::occurrence][10].at(5, 5) =
      std::numeric_limits<float>::quiet_NaN();
  TrainConfig cfg = fixture_config();
  cfg.epochs = 1;
  try {
    train_in_memory(cfg, ds);
    FAIL("expected TrainError");
  } catch (const TrainError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("non-finite loss") != std::string::npos);
    CHECK(msg.find("epoch 1") != std::string::npos);
    CHECK(msg.find("batch") != std::string::npos);
  }
}

TEST_CASE("checkpoints round trip through files") {
  TempDir tmp("ckpt");
  const TrainConfig cfg = fixture_config();
  const ParamStore params = init_params(cfg.model, 11);
  json meta;
  meta["note"] = "fixture";
  meta["epoch"] = 4;
  const std::string prefix = (tmp.path / "model").string();
  save_checkpoint(prefix, cfg.model, params, meta);
  CHECK(fs::exists(prefix + ".bin"));
  CHECK(fs::exists(prefix + ".json"));

  for (const std::string& entry :
       {prefix, prefix + ".bin", prefix + ".json"}) {
    const Checkpoint ckpt = load_checkpoint(entry);
    CHECK(stores_identical(ckpt.params, params));
    CHECK(ckpt.model.rows == cfg.model.rows);
    CHECK(ckpt.model.c_hidden == cfg.model.c_hidden);
    CHECK(ckpt.model.branch_kernels == cfg.model.branch_kernels);
    CHECK(ckpt.metadata.at("note") == "fixture");
    CHECK(ckpt.metadata.at("epoch") == 4);
  }
}

TEST_CASE("corrupt checkpoints are rejected") {
  TempDir tmp("badckpt");
  const TrainConfig cfg = fixture_config();
  const ParamStore params = init_params(cfg.model, 11);
  const std::string prefix = (tmp.path / "model").string();
  save_checkpoint(prefix, cfg.model, params, json::object());

  SUBCASE("truncated blob") {
    fs::resize_file(prefix + ".bin", fs::file_size(prefix + ".bin") - 5);
    CHECK_THROWS_AS(load_checkpoint(prefix), StorageError);
  }
  SUBCASE("trailing bytes") {
    std::ofstream app(prefix + ".bin", std::ios::binary | std::ios::app);
    const float junk = 0.0f;
    app.write(reinterpret_cast<const char*>(&junk), sizeof(junk));
    app.close();
    CHECK_THROWS_AS(load_checkpoint(prefix), StorageError);
  }
  SUBCASE("unsupported version") {
    json side;
    {
      std::ifstream in(prefix + ".json");
      in >> side;
    }
    side["format_version"] = 2;
    std::ofstream out(prefix + ".json", std::ios::trunc);
    out << side.dump();
    out.close();
    CHECK_THROWS_AS(load_checkpoint(prefix), StorageError);
  }
  SUBCASE("garbage sidecar") {
    std::ofstream out(prefix + ".json", std::ios::trunc);
    out << "{ not json";
    out.close();
    CHECK_THROWS_AS(load_checkpoint(prefix), StorageError);
  }
  SUBCASE("missing blob") {
    fs::remove(prefix + ".bin");
    CHECK_THROWS_AS(load_checkpoint(prefix), StorageError);
  }
  SUBCASE("missing sidecar") {
    fs::remove(prefix + ".json");
    CHECK_THROWS_AS(load_checkpoint(prefix), StorageError);
  }
}

TEST_CASE("train writes checkpoints and a parsable line log") {
  TempDir data("traindata");
  TempDir run("trainrun");
  save_dataset(fixture_dataset(), data.path.string());

  TrainConfig cfg = fixture_config();
  cfg.dataset_dir = data.path.string();
  cfg.out_dir = run.path.string();
  const TrainResult result = train(cfg);

  CHECK(fs::exists(result.best_checkpoint + ".bin"));
  CHECK(fs::exists(result.last_checkpoint + ".bin"));
  CHECK(fs::exists(result.log_path));
  REQUIRE(result.log.size() == 2);

  std::ifstream log(result.log_path);
  std::string line;
  int rows = 0;
  while (std::getline(log, line)) {
    const json j = json::parse(line);
    CHECK(j.at("epoch") == result.log[static_cast<std::size_t>(rows)].epoch);
    CHECK(j.at("train_loss") ==
          result.log[static_cast<std::size_t>(rows)].train_loss);
    CHECK(j.at("val_ets") == result.log[static_cast<std::size_t>(rows)].val_ets);
    CHECK(j.contains("clip_events"));
    ++rows;
  }
  CHECK(rows == 2);

  const Checkpoint best = load_checkpoint(result.best_checkpoint);
  CHECK(best.metadata.at("checkpoint") == "best");
  CHECK(best.metadata.at("epoch") == result.best_epoch);
  CHECK(best.metadata.at("val_ets") == result.best_val_ets);
  // the embedded config must survive a round trip
  const TrainConfig echoed = train_from_json(best.metadata.at("train_config"));
  CHECK(echoed.seed == cfg.seed);
  CHECK(echoed.model.c_hidden == cfg.model.c_hidden);

  const Checkpoint last = load_checkpoint(result.last_checkpoint);
  CHECK(last.metadata.at("epoch") == cfg.epochs);

  // the best checkpoint reproduces the recorded val metric
  const Dataset ds = load_dataset(cfg.dataset_dir);
  std::vector<SampleWindow> val;
  for (auto& w : build_windows(ds, cfg.model.s, cfg.model.h, 1)) {
    if (w.split == Split::val) val.push_back(std::move(w));
  }
  const auto report =
      evaluate_model(val, ds.manifest.normalization, best.model, best.params,
                     cfg.threshold, CumulativeMode::count_pool, 2);
  REQUIRE(!report.rows.empty());
  CHECK(report.rows[0].mode == CountMode::strict);
  CHECK(report.rows[0].horizon == 1);
  CHECK(report.rows[0].scores.ets == doctest::Approx(result.best_val_ets).epsilon(1e-12));
}

TEST_CASE("evaluation reports are deterministic and thread-count independent") {
  const Dataset ds = fixture_dataset();
  const TrainConfig cfg = fixture_config();
  const ParamStore params = init_params(cfg.model, 13);
  std::vector<SampleWindow> test_w;
  for (auto& w : build_windows(ds, cfg.model.s, cfg.model.h, 1)) {
    if (w.split == Split::test) test_w.push_back(std::move(w));
  }
  REQUIRE(!test_w.empty());

  const auto r1 = evaluate_model(test_w, ds.manifest.normalization, cfg.model,
                                 params, 0.5, CumulativeMode::count_pool, 1);
  const auto r3 = evaluate_model(test_w, ds.manifest.normalization, cfg.model,
                                 params, 0.5, CumulativeMode::count_pool, 3);
  REQUIRE(r1.rows.size() == r3.rows.size());
  // strict rows first, then neighborhood, horizons ascending within each
  REQUIRE(r1.rows.size() == 4);
  CHECK(r1.rows[0].mode == CountMode::strict);
  CHECK(r1.rows[1].mode == CountMode::strict);
  CHECK(r1.rows[2].mode == CountMode::neighborhood);
  CHECK(r1.rows[0].horizon == 1);
  CHECK(r1.rows[1].horizon == 3);
  for (std::size_t i = 0; i < r1.rows.size(); ++i) {
    CHECK(r1.rows[i].counts.tp == r3.rows[i].counts.tp);
    CHECK(r1.rows[i].counts.fp == r3.rows[i].counts.fp);
    CHECK(r1.rows[i].counts.fn == r3.rows[i].counts.fn);
    CHECK(r1.rows[i].counts.tn == r3.rows[i].counts.tn);
    CHECK(r1.rows[i].scores.ets == r3.rows[i].scores.ets);
  }
  // count closure on every row
  for (const auto& row : r1.rows) {
    CHECK(row.counts.tp + row.counts.fp + row.counts.fn + row.counts.tn ==
          row.counts.n_total);
  }
}

TEST_CASE("persistence evaluation needs no checkpoint") {
  TempDir data("persistdata");
  save_dataset(fixture_dataset(), data.path.string());

  const auto report = evaluate_persistence_split(
      data.path.string(), Split::test, 3, 3, 1, 0.5,
      CumulativeMode::count_pool);
  CHECK(report.split == "test");
  CHECK(report.windows > 0);
  REQUIRE(report.rows.size() == 4);
  for (const auto& row : report.rows) {
    CHECK(std::isfinite(row.scores.ets));
    CHECK(row.counts.n_total > 0);
  }

  // must agree with scoring the same windows in memory
  const Dataset ds = load_dataset(data.path.string());
  std::vector<SampleWindow> test_w;
  for (auto& w : build_windows(ds, 3, 3, 1)) {
    if (w.split == Split::test) test_w.push_back(std::move(w));
  }
  const auto direct =
      evaluate_persistence(test_w, 3, 0.5, CumulativeMode::count_pool);
  REQUIRE(direct.rows.size() == report.rows.size());
  for (std::size_t i = 0; i < direct.rows.size(); ++i) {
    CHECK(direct.rows[i].counts.tp == report.rows[i].counts.tp);
    CHECK(direct.rows[i].counts.fp == report.rows[i].counts.fp);
  }
}

TEST_CASE("train config round trips through json") {
  TrainConfig cfg = fixture_config();
  cfg.epochs = 7;
  cfg.learning_rate = 3e-4;
  cfg.seed = 42;
  cfg.variant = Variant::minus_R;
  cfg.model.use_radar = false;
  cfg.loss.use_hazy = false;
  cfg.dataset_dir = "/data/somewhere";

  const json j = train_to_json(cfg);
  const TrainConfig back = train_from_json(j);
  CHECK(back.epochs == cfg.epochs);
  CHECK(back.learning_rate == cfg.learning_rate);
  CHECK(back.batch_size == cfg.batch_size);
  CHECK(back.stride == cfg.stride);
  CHECK(back.threads == cfg.threads);
  CHECK(back.seed == cfg.seed);
  CHECK(back.clip_norm == cfg.clip_norm);
  CHECK(back.threshold == cfg.threshold);
  CHECK(back.variant == Variant::minus_R);
  CHECK_FALSE(back.model.use_radar);
  CHECK_FALSE(back.loss.use_hazy);
  CHECK(back.dataset_dir == cfg.dataset_dir);
  CHECK(back.model.branch_kernels == cfg.model.branch_kernels);

  json typo = j;
  typo["learnig_rate"] = 1e-3;
  CHECK_THROWS_AS(train_from_json(typo), ConfigError);

  json nested_typo = j;
  nested_typo["model"]["c_brnch"] = 4;
  CHECK_THROWS_AS(train_from_json(nested_typo), ConfigError);

  json bad_type = j;
  bad_type["epochs"] = "ten";
  CHECK_THROWS_AS(train_from_json(bad_type), ConfigError);

  json bad_variant = j;
  bad_variant["variant"] = "psychic";
  CHECK_THROWS_AS(train_from_json(bad_variant), ConfigError);

  // defaults fill in for absent fields
  const TrainConfig sparse = train_from_json(json{{"epochs", 3}});
  CHECK(sparse.epochs == 3);
  CHECK(sparse.batch_size == TrainConfig{}.batch_size);
}

TEST_CASE("schema checker flags violations") {
  const json schema = json::parse(R"({
    "type": "object",
    "required": ["count", "status"],
    "additionalProperties": false,
    "properties": {
      "count": {"type": "integer", "minimum": 1},
      "status": {"type": "string", "enum": ["ok", "bad"]},
      "ratio": {"type": "number", "maximum": 1.0},
      "tags": {"type": "array", "items": {"type": "string"}}
    }
  })");

  CHECK(schema_violations(schema, json{{"count", 2}, {"status", "ok"}}).empty());
  CHECK(schema_violations(schema, json{{"count", 2},
                                       {"status", "ok"},
                                       {"ratio", 0.4},
                                       {"tags", json::array({"a", "b"})}})
            .empty());

  CHECK(!schema_violations(schema, json{{"count", 2}}).empty());
  CHECK(!schema_violations(schema, json{{"count", 0}, {"status", "ok"}}).empty());
  CHECK(!schema_violations(schema, json{{"count", 2}, {"status", "odd"}}).empty());
  CHECK(!schema_violations(schema, json{{"count", 2},
                                        {"status", "ok"},
                                        {"extra", 1}})
             .empty());
  CHECK(!schema_violations(schema, json{{"count", 2},
                                        {"status", "ok"},
                                        {"ratio", 2.0}})
             .empty());
  CHECK(!schema_violations(schema, json{{"count", 2},
                                        {"status", "ok"},
                                        {"tags", json::array({"a", 3})}})
             .empty());
  CHECK(!schema_violations(schema, json::array()).empty());

  TempDir tmp("schema");
  const std::string path = (tmp.path / "s.json").string();
  {
    std::ofstream out(path);
    out << schema.dump();
  }
  CHECK_NOTHROW(require_schema(path, json{{"count", 2}, {"status", "ok"}}));
  CHECK_THROWS_AS(require_schema(path, json{{"count", 0}, {"status", "ok"}}),
                  ConfigError);
  CHECK_THROWS_AS(require_schema((tmp.path / "missing.json").string(),
                                 json::object()),
                  ConfigError);
}
