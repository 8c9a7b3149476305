#pragma once

#include <string>

#include "json.hpp"

#include "deeplight/network.hpp"

namespace deeplight {

// A checkpoint is <prefix>.bin holding every parameter tensor's float32
// values little-endian, concatenated in store order, plus <prefix>.json
// describing the model config, the tensor table (name + shape, in blob
// order), and free-form training metadata.
void save_checkpoint(const std::string& prefix, const ModelConfig& cfg,
                     const ParamStore& params, const nlohmann::json& metadata);

struct Checkpoint {
  ModelConfig model;
  ParamStore params;
  nlohmann::json metadata;
};

// Accepts the bare prefix or either file's path.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace deeplight
