#include "deeplight/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "deeplight/errors.hpp"
#include "json.hpp"

// Frames are written as raw little-endian float32; the loaders below read
// them back with plain memcpy-style IO.
static_assert(std::endian::native == std::endian::little,
              "storage format assumes a little-endian host");

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace deeplight {

namespace {

Transform transform_for(FeatureId f) {
  switch (f) {
    case FeatureId::occurrence:
      return Transform::raw;
    case FeatureId::flash_count:
    case FeatureId::flash_energy:
      return Transform::log1p_standardize;
    default:
      return Transform::standardize;
  }
}

const char* transform_name(Transform t) {
  switch (t) {
    case Transform::raw: return "raw";
    case Transform::standardize: return "standardize";
    case Transform::log1p_standardize: return "log1p_standardize";
  }
  throw ConfigError("unknown transform");
}

Transform transform_from_name(const std::string& name) {
  if (name == "raw") return Transform::raw;
  if (name == "standardize") return Transform::standardize;
  if (name == "log1p_standardize") return Transform::log1p_standardize;
  throw ManifestError("unknown transform name: " + name);
}

constexpr double kStdevFloor = 1e-6;

float apply_transform(float x, const FeatureStats& st) {
  switch (st.transform) {
    case Transform::raw:
      return x;
    case Transform::standardize:
      return static_cast<float>((x - st.mean) / std::max(st.stdev, kStdevFloor));
    case Transform::log1p_standardize:
      return static_cast<float>((std::log1p(static_cast<double>(x)) - st.mean) /
                                std::max(st.stdev, kStdevFloor));
  }
  return x;
}

}  // namespace

bool DatasetManifest::is_gap(FeatureId f, std::int64_t hour_index) const {
  auto it = gaps.find(f);
  return it != gaps.end() && it->second.count(hour_index) > 0;
}

bool DatasetManifest::hour_complete(std::int64_t hour_index) const {
  for (FeatureId f : features) {
    if (is_gap(f, hour_index)) return false;
  }
  return true;
}

std::string DatasetManifest::storage_file(FeatureId f, Split s) const {
  auto fit = files.find(f);
  if (fit != files.end()) {
    auto sit = fit->second.find(s);
    if (sit != fit->second.end()) return sit->second;
  }
  return std::string(feature_name(f)) + "." + split_name(s) + ".f32";
}

std::int64_t DatasetManifest::split_ordinal(std::int64_t hour_index) const {
  const Split tag = split_tags.at(static_cast<std::size_t>(hour_index));
  std::int64_t ordinal = 0;
  for (std::int64_t i = 0; i < hour_index; ++i) {
    if (split_tags[static_cast<std::size_t>(i)] == tag) ++ordinal;
  }
  return ordinal;
}

void DatasetManifest::validate() const {
  grid.validate();
  if (features.empty()) throw ManifestError("manifest lists no features");
  if (hours.size() != split_tags.size()) {
    throw ManifestError("manifest split tags do not cover every hour");
  }
  std::int64_t prev = 0;
  for (std::size_t i = 0; i < hours.size(); ++i) {
    const std::int64_t t = parse_hour_iso(hours[i]);
    if (i > 0 && t <= prev) throw ManifestError("manifest hours must be strictly ascending");
    prev = t;
  }
  for (const auto& [f, idx] : gaps) {
    (void)f;
    for (std::int64_t i : idx) {
      if (i < 0 || i >= hour_count()) throw ManifestError("gap index out of range");
    }
  }
}

const TensorF& Dataset::frame(FeatureId f, std::int64_t hour_index) const {
  auto it = frames.find(f);
  if (it == frames.end()) throw StorageError(std::string("no frames loaded for ") + feature_name(f));
  return it->second.at(static_cast<std::size_t>(hour_index));
}

namespace {

json grid_to_json(const GridSpec& g) {
  return json{{"rows", g.rows},       {"cols", g.cols},
              {"lat_min", g.lat_min}, {"lat_max", g.lat_max},
              {"lon_min", g.lon_min}, {"lon_max", g.lon_max},
              {"cell_km", g.cell_km}};
}

GridSpec grid_from_json(const json& j) {
  GridSpec g;
  g.rows = j.at("rows").get<std::int64_t>();
  g.cols = j.at("cols").get<std::int64_t>();
  g.lat_min = j.at("lat_min").get<double>();
  g.lat_max = j.at("lat_max").get<double>();
  g.lon_min = j.at("lon_min").get<double>();
  g.lon_max = j.at("lon_max").get<double>();
  g.cell_km = j.at("cell_km").get<double>();
  return g;
}

}  // namespace

void save_dataset(const Dataset& ds, const std::string& dir, bool force) {
  const DatasetManifest& m = ds.manifest;
  m.validate();
  fs::create_directories(dir);
  const fs::path manifest_path = fs::path(dir) / "manifest.json";
  if (fs::exists(manifest_path) && !force) {
    throw StorageError("refusing to overwrite " + manifest_path.string() +
                       " (pass force)");
  }

  const std::int64_t cells = m.grid.rows * m.grid.cols;
  DatasetManifest out = m;
  out.root = dir;
  for (FeatureId f : m.features) {
    const auto& seq = ds.frames.at(f);
    if (static_cast<std::int64_t>(seq.size()) != m.hour_count()) {
      throw StorageError(std::string("frame sequence for ") + feature_name(f) +
                         " does not cover every manifest hour");
    }
    for (Split sp : {Split::train, Split::val, Split::test}) {
      const std::string name = m.storage_file(f, sp);
      std::ofstream fh(fs::path(dir) / name, std::ios::binary | std::ios::trunc);
      if (!fh) throw StorageError("cannot open " + name + " for writing");
      bool any = false;
      for (std::int64_t i = 0; i < m.hour_count(); ++i) {
        if (m.split_tags[static_cast<std::size_t>(i)] != sp) continue;
        any = true;
        const TensorF& fr = seq[static_cast<std::size_t>(i)];
        if (fr.numel() != cells) {
          throw StorageError(std::string("frame shape mismatch for ") +
                             feature_name(f) + " at hour " + m.hours[i]);
        }
        fh.write(reinterpret_cast<const char*>(fr.data.data()),
                 static_cast<std::streamsize>(cells * sizeof(float)));
      }
      fh.close();
      if (!any) {
        fs::remove(fs::path(dir) / name);  // no hours in this split
      } else {
        out.files[f][sp] = name;
      }
    }
  }

  json j;
  j["format_version"] = 1;
  j["grid"] = grid_to_json(m.grid);
  for (FeatureId f : m.features) j["features"].push_back(feature_name(f));
  j["hours"] = m.hours;
  for (Split sp : m.split_tags) j["split_tags"].push_back(split_name(sp));
  j["gaps"] = json::object();
  for (const auto& [f, idx] : m.gaps) {
    j["gaps"][feature_name(f)] = std::vector<std::int64_t>(idx.begin(), idx.end());
  }
  j["normalization"] = json::object();
  for (const auto& [f, st] : m.normalization) {
    j["normalization"][feature_name(f)] = {{"transform", transform_name(st.transform)},
                                           {"mean", st.mean},
                                           {"stdev", st.stdev}};
  }
  j["files"] = json::object();
  for (const auto& [f, by_split] : out.files) {
    for (const auto& [sp, name] : by_split) {
      j["files"][feature_name(f)][split_name(sp)] = name;
    }
  }
  std::ofstream mh(manifest_path, std::ios::trunc);
  if (!mh) throw StorageError("cannot write " + manifest_path.string());
  mh << j.dump(2) << "\n";
}

DatasetManifest load_manifest(const std::string& dir) {
  const fs::path manifest_path = fs::path(dir) / "manifest.json";
  std::ifstream fh(manifest_path);
  if (!fh) throw ManifestError("cannot open " + manifest_path.string());
  json j;
  try {
    fh >> j;
  } catch (const json::exception& e) {
    throw ManifestError("malformed manifest.json: " + std::string(e.what()));
  }

  DatasetManifest m;
  m.root = dir;
  try {
    m.grid = grid_from_json(j.at("grid"));
    for (const auto& name : j.at("features")) {
      m.features.push_back(feature_from_name(name.get<std::string>()));
    }
    for (const auto& h : j.at("hours")) m.hours.push_back(h.get<std::string>());
    for (const auto& t : j.at("split_tags")) {
      m.split_tags.push_back(split_from_name(t.get<std::string>()));
    }
    if (j.contains("gaps")) {
      for (auto it = j["gaps"].begin(); it != j["gaps"].end(); ++it) {
        auto& dst = m.gaps[feature_from_name(it.key())];
        for (const auto& i : it.value()) dst.insert(i.get<std::int64_t>());
      }
    }
    if (j.contains("normalization")) {
      for (auto it = j["normalization"].begin(); it != j["normalization"].end(); ++it) {
        FeatureStats st;
        st.transform = transform_from_name(it.value().at("transform").get<std::string>());
        st.mean = it.value().at("mean").get<double>();
        st.stdev = it.value().at("stdev").get<double>();
        m.normalization[feature_from_name(it.key())] = st;
      }
    }
    if (j.contains("files")) {
      for (auto it = j["files"].begin(); it != j["files"].end(); ++it) {
        for (auto s = it.value().begin(); s != it.value().end(); ++s) {
          m.files[feature_from_name(it.key())][split_from_name(s.key())] =
              s.value().get<std::string>();
        }
      }
    }
  } catch (const json::exception& e) {
    throw ManifestError("manifest.json missing required field: " +
                        std::string(e.what()));
  }
  try {
    m.validate();
  } catch (const Error& e) {
    throw ManifestError(std::string("invalid manifest: ") + e.what());
  }
  return m;
}

namespace {

// Shared by load_dataset and load_frame: reads the split file for one
// feature and checks its size against the manifest before any frame is
// trusted.
std::vector<float> read_split_file(const DatasetManifest& m, FeatureId f,
                                   Split sp, std::int64_t n_hours) {
  const std::int64_t cells = m.grid.rows * m.grid.cols;
  const fs::path path = fs::path(m.root) / m.storage_file(f, sp);
  std::ifstream fh(path, std::ios::binary | std::ios::ate);
  if (!fh) throw StorageError("missing storage file " + path.string());
  const std::int64_t bytes = static_cast<std::int64_t>(fh.tellg());
  const std::int64_t want = n_hours * cells * static_cast<std::int64_t>(sizeof(float));
  if (bytes != want) {
    throw StorageError("storage file " + path.string() + " holds " +
                       std::to_string(bytes) + " bytes, manifest expects " +
                       std::to_string(want));
  }
  std::vector<float> buf(static_cast<std::size_t>(n_hours * cells));
  fh.seekg(0);
  fh.read(reinterpret_cast<char*>(buf.data()), want);
  if (!fh) throw StorageError("short read from " + path.string());
  return buf;
}

std::int64_t hours_in_split(const DatasetManifest& m, Split sp) {
  return std::count(m.split_tags.begin(), m.split_tags.end(), sp);
}

}  // namespace

Dataset load_dataset(const std::string& dir) {
  Dataset ds;
  ds.manifest = load_manifest(dir);
  const DatasetManifest& m = ds.manifest;
  const std::int64_t cells = m.grid.rows * m.grid.cols;

  for (FeatureId f : m.features) {
    auto& seq = ds.frames[f];
    seq.assign(static_cast<std::size_t>(m.hour_count()),
               TensorF({m.grid.rows, m.grid.cols}));
    for (Split sp : {Split::train, Split::val, Split::test}) {
      const std::int64_t n = hours_in_split(m, sp);
      if (n == 0) continue;
      const std::vector<float> buf = read_split_file(m, f, sp, n);
      std::int64_t ordinal = 0;
      for (std::int64_t i = 0; i < m.hour_count(); ++i) {
        if (m.split_tags[static_cast<std::size_t>(i)] != sp) continue;
        TensorF& fr = seq[static_cast<std::size_t>(i)];
        std::copy_n(buf.begin() + ordinal * cells, cells, fr.data.begin());
        ++ordinal;
      }
    }
  }
  return ds;
}

FeatureFrame load_frame(const DatasetManifest& manifest, FeatureId f,
                        const std::string& hour_iso) {
  auto it = std::find(manifest.hours.begin(), manifest.hours.end(), hour_iso);
  if (it == manifest.hours.end()) {
    throw StorageError("hour " + hour_iso + " not listed in manifest");
  }
  const std::int64_t index = it - manifest.hours.begin();
  FeatureFrame out;
  out.feature = f;
  out.timestamp = hour_iso;
  out.values = TensorF({manifest.grid.rows, manifest.grid.cols});
  if (manifest.is_gap(f, index)) {
    out.valid = false;
    return out;
  }
  const Split sp = manifest.split_tags[static_cast<std::size_t>(index)];
  const std::vector<float> buf =
      read_split_file(manifest, f, sp, hours_in_split(manifest, sp));
  const std::int64_t cells = manifest.grid.rows * manifest.grid.cols;
  const std::int64_t ordinal = manifest.split_ordinal(index);
  std::copy_n(buf.begin() + ordinal * cells, cells, out.values.data.begin());
  out.valid = true;
  return out;
}

NormStats compute_normalization(const Dataset& ds) {
  const DatasetManifest& m = ds.manifest;
  NormStats stats;
  for (FeatureId f : m.features) {
    FeatureStats st;
    st.transform = transform_for(f);
    if (st.transform == Transform::raw) {
      stats[f] = st;
      continue;
    }
    double sum = 0.0, sumsq = 0.0;
    std::int64_t n = 0;
    for (std::int64_t i = 0; i < m.hour_count(); ++i) {
      if (m.split_tags[static_cast<std::size_t>(i)] != Split::train) continue;
      if (m.is_gap(f, i)) continue;
      for (float v : ds.frame(f, i).data) {
        const double x = st.transform == Transform::log1p_standardize
                             ? std::log1p(static_cast<double>(v))
                             : static_cast<double>(v);
        sum += x;
        sumsq += x * x;
        ++n;
      }
    }
    if (n > 0) {
      st.mean = sum / static_cast<double>(n);
      const double var = std::max(0.0, sumsq / static_cast<double>(n) - st.mean * st.mean);
      st.stdev = std::max(std::sqrt(var), kStdevFloor);
    }
    stats[f] = st;
  }
  return stats;
}

std::vector<SampleWindow> build_windows(const Dataset& ds, int s, int h,
                                        int stride) {
  if (s < 1 || h < 1 || stride < 1) {
    throw ConfigError("window parameters s, h, stride must all be >= 1");
  }
  const DatasetManifest& m = ds.manifest;
  m.validate();
  const std::int64_t n = m.hour_count();
  const std::int64_t rows = m.grid.rows, cols = m.grid.cols;
  const std::int64_t cells = rows * cols;

  std::vector<std::int64_t> hour_int(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    hour_int[static_cast<std::size_t>(i)] = parse_hour_iso(m.hours[static_cast<std::size_t>(i)]);
  }

  std::vector<SampleWindow> windows;
  for (std::int64_t a = s; a + h <= n; a += stride) {
    const std::int64_t lo = a - s;
    const std::int64_t hi = a + h;  // exclusive
    bool ok = true;
    const Split tag = m.split_tags[static_cast<std::size_t>(a)];
    for (std::int64_t i = lo; i < hi && ok; ++i) {
      if (m.split_tags[static_cast<std::size_t>(i)] != tag) ok = false;
      if (!m.hour_complete(i)) ok = false;
      if (i > lo &&
          hour_int[static_cast<std::size_t>(i)] !=
              hour_int[static_cast<std::size_t>(i - 1)] + 1) {
        ok = false;  // listed hours jump in time
      }
    }
    if (!ok) continue;

    SampleWindow w;
    w.anchor_time = m.hours[static_cast<std::size_t>(a)];
    w.split = tag;
    w.light_in = TensorF({s, 3, rows, cols});
    w.aux_in = TensorF({s, 4, rows, cols});
    w.target = TensorF({h, rows, cols});
    for (std::int64_t t = 0; t < s; ++t) {
      const std::int64_t hour = lo + t;
      for (std::size_t c = 0; c < kLightningFeatures.size(); ++c) {
        const TensorF& fr = ds.frame(kLightningFeatures[c], hour);
        std::copy_n(fr.data.begin(), cells,
                    w.light_in.data.begin() + ((t * 3 + static_cast<std::int64_t>(c)) * cells));
      }
      for (std::size_t c = 0; c < kAuxFeatures.size(); ++c) {
        const TensorF& fr = ds.frame(kAuxFeatures[c], hour);
        std::copy_n(fr.data.begin(), cells,
                    w.aux_in.data.begin() + ((t * 4 + static_cast<std::int64_t>(c)) * cells));
      }
    }
    for (std::int64_t t = 0; t < h; ++t) {
      const TensorF& fr = ds.frame(FeatureId::occurrence, a + t);
      for (std::int64_t i = 0; i < cells; ++i) {
        w.target.data[static_cast<std::size_t>(t * cells + i)] =
            fr.data[static_cast<std::size_t>(i)] > 0.0f ? 1.0f : 0.0f;
      }
    }
    windows.push_back(std::move(w));
  }
  return windows;
}

SampleWindow normalize_window(const SampleWindow& w, const NormStats& stats) {
  auto stat_for = [&](FeatureId f) -> const FeatureStats& {
    auto it = stats.find(f);
    if (it == stats.end()) {
      throw ConfigError(std::string("no normalization stats for ") + feature_name(f));
    }
    return it->second;
  };

  SampleWindow out = w;
  const std::int64_t s = w.light_in.dim(0);
  const std::int64_t cells = w.light_in.dim(2) * w.light_in.dim(3);
  for (std::int64_t t = 0; t < s; ++t) {
    for (std::size_t c = 0; c < kLightningFeatures.size(); ++c) {
      const FeatureStats& st = stat_for(kLightningFeatures[c]);
      float* p = out.light_in.data.data() + (t * 3 + static_cast<std::int64_t>(c)) * cells;
      for (std::int64_t i = 0; i < cells; ++i) p[i] = apply_transform(p[i], st);
    }
    for (std::size_t c = 0; c < kAuxFeatures.size(); ++c) {
      const FeatureStats& st = stat_for(kAuxFeatures[c]);
      float* p = out.aux_in.data.data() + (t * 4 + static_cast<std::int64_t>(c)) * cells;
      for (std::int64_t i = 0; i < cells; ++i) p[i] = apply_transform(p[i], st);
    }
  }
  return out;
}

}  // namespace deeplight
