#include "deeplight/serialize.hpp"

#include <fstream>
#include <set>

#include "deeplight/errors.hpp"

using json = nlohmann::json;

namespace deeplight {

namespace {

void reject_unknown_keys(const json& j, const std::set<std::string>& known,
                         const char* what) {
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) {
      throw ConfigError(std::string(what) + ": unknown field '" + key + "'");
    }
  }
}

template <typename T>
T get_field(const json& j, const char* key, const T& fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("field '") + key + "' has the wrong type");
  }
}

}  // namespace

json model_to_json(const ModelConfig& cfg) {
  return json{{"s", cfg.s},
              {"h", cfg.h},
              {"rows", cfg.rows},
              {"cols", cfg.cols},
              {"c_branch", cfg.c_branch},
              {"c_hidden", cfg.c_hidden},
              {"cstem_stages", cfg.cstem_stages},
              {"branch_kernels", cfg.branch_kernels},
              {"use_lightning", cfg.use_lightning},
              {"use_radar", cfg.use_radar},
              {"use_cloud", cfg.use_cloud}};
}

ModelConfig model_from_json(const json& j) {
  reject_unknown_keys(j,
                      {"s", "h", "rows", "cols", "c_branch", "c_hidden",
                       "cstem_stages", "branch_kernels", "use_lightning",
                       "use_radar", "use_cloud"},
                      "model config");
  ModelConfig cfg;
  cfg.s = get_field(j, "s", cfg.s);
  cfg.h = get_field(j, "h", cfg.h);
  cfg.rows = get_field(j, "rows", cfg.rows);
  cfg.cols = get_field(j, "cols", cfg.cols);
  cfg.c_branch = get_field(j, "c_branch", cfg.c_branch);
  cfg.c_hidden = get_field(j, "c_hidden", cfg.c_hidden);
  cfg.cstem_stages = get_field(j, "cstem_stages", cfg.cstem_stages);
  cfg.branch_kernels = get_field(j, "branch_kernels", cfg.branch_kernels);
  cfg.use_lightning = get_field(j, "use_lightning", cfg.use_lightning);
  cfg.use_radar = get_field(j, "use_radar", cfg.use_radar);
  cfg.use_cloud = get_field(j, "use_cloud", cfg.use_cloud);
  cfg.validate();
  return cfg;
}

json loss_to_json(const LossConfig& cfg) {
  return json{{"spatial_value", cfg.spatial_value},
              {"temporal_value", cfg.temporal_value},
              {"value_is_variance", cfg.value_is_variance},
              {"pos_weight", cfg.pos_weight},
              {"eps", cfg.eps},
              {"use_hazy", cfg.use_hazy}};
}

LossConfig loss_from_json(const json& j) {
  reject_unknown_keys(j,
                      {"spatial_value", "temporal_value", "value_is_variance",
                       "pos_weight", "eps", "use_hazy"},
                      "loss config");
  LossConfig cfg;
  cfg.spatial_value = get_field(j, "spatial_value", cfg.spatial_value);
  cfg.temporal_value = get_field(j, "temporal_value", cfg.temporal_value);
  cfg.value_is_variance = get_field(j, "value_is_variance", cfg.value_is_variance);
  cfg.pos_weight = get_field(j, "pos_weight", cfg.pos_weight);
  cfg.eps = get_field(j, "eps", cfg.eps);
  cfg.use_hazy = get_field(j, "use_hazy", cfg.use_hazy);
  cfg.validate();
  return cfg;
}

json storm_to_json(const StormParams& p) {
  return json{{"n_storms", p.n_storms},
              {"blob_sigma", p.blob_sigma},
              {"drift", p.drift},
              {"lifetime", p.lifetime},
              {"cloud_lead", p.cloud_lead},
              {"base_rate", p.base_rate},
              {"gain", p.gain},
              {"seed", p.seed}};
}

StormParams storm_from_json(const json& j) {
  reject_unknown_keys(j,
                      {"n_storms", "blob_sigma", "drift", "lifetime",
                       "cloud_lead", "base_rate", "gain", "seed"},
                      "storm params");
  StormParams p;
  p.n_storms = get_field(j, "n_storms", p.n_storms);
  p.blob_sigma = get_field(j, "blob_sigma", p.blob_sigma);
  p.drift = get_field(j, "drift", p.drift);
  p.lifetime = get_field(j, "lifetime", p.lifetime);
  p.cloud_lead = get_field(j, "cloud_lead", p.cloud_lead);
  p.base_rate = get_field(j, "base_rate", p.base_rate);
  p.gain = get_field(j, "gain", p.gain);
  p.seed = get_field(j, "seed", p.seed);
  p.validate();
  return p;
}

json train_to_json(const TrainConfig& cfg) {
  return json{{"epochs", cfg.epochs},
              {"learning_rate", cfg.learning_rate},
              {"batch_size", cfg.batch_size},
              {"stride", cfg.stride},
              {"threads", cfg.threads},
              {"seed", cfg.seed},
              {"clip_norm", cfg.clip_norm},
              {"threshold", cfg.threshold},
              {"loss", loss_to_json(cfg.loss)},
              {"model", model_to_json(cfg.model)},
              {"dataset_dir", cfg.dataset_dir},
              {"out_dir", cfg.out_dir},
              {"variant", variant_name(cfg.variant)}};
}

TrainConfig train_from_json(const json& j) {
  reject_unknown_keys(j,
                      {"epochs", "learning_rate", "batch_size", "stride",
                       "threads", "seed", "clip_norm", "threshold", "loss",
                       "model", "dataset_dir", "out_dir", "variant"},
                      "train config");
  TrainConfig cfg;
  cfg.epochs = get_field(j, "epochs", cfg.epochs);
  cfg.learning_rate = get_field(j, "learning_rate", cfg.learning_rate);
  cfg.batch_size = get_field(j, "batch_size", cfg.batch_size);
  cfg.stride = get_field(j, "stride", cfg.stride);
  cfg.threads = get_field(j, "threads", cfg.threads);
  cfg.seed = get_field(j, "seed", cfg.seed);
  cfg.clip_norm = get_field(j, "clip_norm", cfg.clip_norm);
  cfg.threshold = get_field(j, "threshold", cfg.threshold);
  if (j.contains("loss")) cfg.loss = loss_from_json(j.at("loss"));
  if (j.contains("model")) cfg.model = model_from_json(j.at("model"));
  cfg.dataset_dir = get_field<std::string>(j, "dataset_dir", cfg.dataset_dir);
  cfg.out_dir = get_field<std::string>(j, "out_dir", cfg.out_dir);
  if (j.contains("variant")) {
    cfg.variant = variant_from_name(j.at("variant").get<std::string>());
  }
  cfg.validate();
  return cfg;
}

const char* count_mode_name(CountMode m) {
  return m == CountMode::strict ? "strict" : "neighborhood";
}

CountMode count_mode_from_name(const std::string& name) {
  if (name == "strict") return CountMode::strict;
  if (name == "neighborhood") return CountMode::neighborhood;
  throw ConfigError("unknown count mode '" + name + "'");
}

const char* pooling_name(CumulativeMode m) {
  return m == CumulativeMode::count_pool ? "count_pool" : "collapse_max";
}

CumulativeMode pooling_from_name(const std::string& name) {
  if (name == "count_pool") return CumulativeMode::count_pool;
  if (name == "collapse_max") return CumulativeMode::collapse_max;
  throw ConfigError("unknown pooling mode '" + name + "'");
}

json report_to_json(const EvalReport& report) {
  json rows = json::array();
  for (const auto& row : report.rows) {
    rows.push_back({{"mode", count_mode_name(row.mode)},
                    {"horizon", row.horizon},
                    {"tp", row.counts.tp},
                    {"fp", row.counts.fp},
                    {"fn", row.counts.fn},
                    {"tn", row.counts.tn},
                    {"n", row.counts.n_total},
                    {"pod", row.scores.pod},
                    {"far", row.scores.far},
                    {"ets", row.scores.ets},
                    {"micro_f1", row.scores.micro_f1},
                    {"macro_f1", row.scores.macro_f1}});
  }
  return json{{"split", report.split},
              {"threshold", report.threshold},
              {"pooling", pooling_name(report.pooling)},
              {"windows", report.windows},
              {"rows", rows}};
}

json epoch_log_to_json(const EpochLog& e) {
  return json{{"epoch", e.epoch},
              {"train_loss", e.train_loss},
              {"val_ets", e.val_ets},
              {"clip_events", e.clip_events}};
}

namespace {

bool type_matches(const std::string& type, const json& v) {
  if (type == "object") return v.is_object();
  if (type == "array") return v.is_array();
  if (type == "string") return v.is_string();
  if (type == "number") return v.is_number();
  if (type == "integer") return v.is_number_integer() || v.is_number_unsigned();
  if (type == "boolean") return v.is_boolean();
  if (type == "null") return v.is_null();
  return false;
}

void check_node(const json& schema, const json& doc, const std::string& where,
                std::vector<std::string>& out) {
  if (schema.contains("type")) {
    const auto type = schema.at("type").get<std::string>();
    if (!type_matches(type, doc)) {
      out.push_back(where + ": expected " + type);
      return;
    }
  }
  if (schema.contains("enum")) {
    bool hit = false;
    for (const auto& v : schema.at("enum")) hit = hit || v == doc;
    if (!hit) out.push_back(where + ": value not in enum");
  }
  if (doc.is_number()) {
    const double x = doc.get<double>();
    if (schema.contains("minimum") && x < schema.at("minimum").get<double>()) {
      out.push_back(where + ": below minimum");
    }
    if (schema.contains("exclusiveMinimum") &&
        x <= schema.at("exclusiveMinimum").get<double>()) {
      out.push_back(where + ": not above exclusiveMinimum");
    }
    if (schema.contains("maximum") && x > schema.at("maximum").get<double>()) {
      out.push_back(where + ": above maximum");
    }
  }
  if (doc.is_object()) {
    if (schema.contains("required")) {
      for (const auto& k : schema.at("required")) {
        if (!doc.contains(k.get<std::string>())) {
          out.push_back(where + ": missing required '" + k.get<std::string>() + "'");
        }
      }
    }
    const json props = schema.value("properties", json::object());
    for (const auto& [key, val] : doc.items()) {
      if (props.contains(key)) {
        check_node(props.at(key), val, where + "/" + key, out);
      } else if (schema.value("additionalProperties", json(true)) == json(false)) {
        out.push_back(where + ": unexpected field '" + key + "'");
      }
    }
  }
  if (doc.is_array() && schema.contains("items")) {
    for (std::size_t i = 0; i < doc.size(); ++i) {
      check_node(schema.at("items"), doc[i], where + "[" + std::to_string(i) + "]",
                 out);
    }
  }
}

}  // namespace

std::vector<std::string> schema_violations(const json& schema, const json& doc) {
  std::vector<std::string> out;
  check_node(schema, doc, "$", out);
  return out;
}

void require_schema(const std::string& schema_path, const json& doc) {
  std::ifstream in(schema_path);
  if (!in) throw ConfigError("missing schema file " + schema_path);
  json schema;
  try {
    in >> schema;
  } catch (const json::exception& e) {
    throw ConfigError("malformed schema " + schema_path + ": " + e.what());
  }
  const auto violations = schema_violations(schema, doc);
  if (!violations.empty()) {
    std::string msg = "document does not conform to " + schema_path + ":";
    for (const auto& v : violations) msg += "\n  " + v;
    throw ConfigError(msg);
  }
}

}  // namespace deeplight
