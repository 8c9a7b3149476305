#pragma once

#include <string>

#include "json.hpp"

#include "deeplight/loss.hpp"
#include "deeplight/network.hpp"
#include "deeplight/synthetic.hpp"
#include "deeplight/training.hpp"

namespace deeplight {

// JSON round trips for every config consumed or produced by the CLI.
// from_* throws ConfigError on missing or ill-typed fields; unknown keys
// are rejected so typos in config files fail loudly.

nlohmann::json model_to_json(const ModelConfig& cfg);
ModelConfig model_from_json(const nlohmann::json& j);

nlohmann::json loss_to_json(const LossConfig& cfg);
LossConfig loss_from_json(const nlohmann::json& j);

nlohmann::json storm_to_json(const StormParams& p);
StormParams storm_from_json(const nlohmann::json& j);

nlohmann::json train_to_json(const TrainConfig& cfg);
TrainConfig train_from_json(const nlohmann::json& j);

const char* count_mode_name(CountMode m);
CountMode count_mode_from_name(const std::string& name);
const char* pooling_name(CumulativeMode m);
CumulativeMode pooling_from_name(const std::string& name);

nlohmann::json report_to_json(const EvalReport& report);
nlohmann::json epoch_log_to_json(const EpochLog& e);

// Minimal JSON-schema checker covering the subset the shipped schemas
// use: type, properties, required, additionalProperties, items, enum,
// minimum/exclusiveMinimum, maximum. Returns every violation found.
std::vector<std::string> schema_violations(const nlohmann::json& schema,
                                           const nlohmann::json& doc);

// Loads a schema file and throws ConfigError listing the violations when
// the document does not conform.
void require_schema(const std::string& schema_path, const nlohmann::json& doc);

}  // namespace deeplight
