#include "deeplight/checkpoint.hpp"

#include <bit>
#include <filesystem>
#include <fstream>

#include "deeplight/errors.hpp"
#include "deeplight/serialize.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs assume a little-endian host");

namespace deeplight {

namespace {

std::string strip_extension(const std::string& path) {
  if (path.size() > 4 && (path.ends_with(".bin") || path.ends_with(".json"))) {
    return path.substr(0, path.rfind('.'));
  }
  return path;
}

}  // namespace

void save_checkpoint(const std::string& prefix, const ModelConfig& cfg,
                     const ParamStore& params, const json& metadata) {
  const fs::path dir = fs::path(prefix).parent_path();
  if (!dir.empty()) fs::create_directories(dir);

  std::ofstream blob(prefix + ".bin", std::ios::binary | std::ios::trunc);
  if (!blob) throw StorageError("cannot write " + prefix + ".bin");
  json table = json::array();
  for (const auto& name : params.order) {
    const TensorF& t = params.tensors.at(name);
    blob.write(reinterpret_cast<const char*>(t.data.data()),
               static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    table.push_back({{"name", name}, {"shape", t.shape}});
  }
  blob.close();
  if (!blob) throw StorageError("short write on " + prefix + ".bin");

  json side;
  side["format_version"] = 1;
  side["model"] = model_to_json(cfg);
  side["params"] = std::move(table);
  side["metadata"] = metadata;
  std::ofstream out(prefix + ".json", std::ios::trunc);
  if (!out) throw StorageError("cannot write " + prefix + ".json");
  out << side.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::string& path) {
  const std::string prefix = strip_extension(path);
  std::ifstream in(prefix + ".json");
  if (!in) throw StorageError("missing checkpoint sidecar " + prefix + ".json");
  json side;
  try {
    in >> side;
  } catch (const json::exception& e) {
    throw StorageError("malformed checkpoint sidecar: " + std::string(e.what()));
  }

  Checkpoint ckpt;
  try {
    if (side.at("format_version").get<int>() != 1) {
      throw StorageError("unsupported checkpoint format version");
    }
    ckpt.model = model_from_json(side.at("model"));
    ckpt.metadata = side.value("metadata", json::object());

    std::ifstream blob(prefix + ".bin", std::ios::binary);
    if (!blob) throw StorageError("missing checkpoint blob " + prefix + ".bin");
    std::int64_t expected = 0;
    for (const auto& entry : side.at("params")) {
      const auto name = entry.at("name").get<std::string>();
      const auto shape = entry.at("shape").get<std::vector<std::int64_t>>();
      TensorF t(shape);
      blob.read(reinterpret_cast<char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(float)));
      if (blob.gcount() !=
          static_cast<std::streamsize>(t.data.size() * sizeof(float))) {
        throw StorageError("checkpoint blob truncated at " + name);
      }
      expected += t.numel();
      ckpt.params.add(name, std::move(t));
    }
    blob.peek();
    if (!blob.eof()) throw StorageError("checkpoint blob has trailing bytes");
    const auto file_size = fs::file_size(prefix + ".bin");
    if (file_size != static_cast<std::uintmax_t>(expected) * sizeof(float)) {
      throw StorageError("checkpoint blob size mismatch");
    }
  } catch (const json::exception& e) {
    throw StorageError("invalid checkpoint sidecar: " + std::string(e.what()));
  }
  return ckpt;
}

}  // namespace deeplight
