#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "deeplight/tensor.hpp"

namespace deeplight {

// Equirectangular raster: row 0 sits at the lat_min edge, column 0 at the
// lon_min edge, cells are half-open [edge, edge + step) intervals.
struct GridSpec {
  std::int64_t rows = 0;
  std::int64_t cols = 0;
  double lat_min = 0.0;
  double lat_max = 0.0;
  double lon_min = 0.0;
  double lon_max = 0.0;
  double cell_km = 0.0;

  void validate() const;

  double lat_step() const { return (lat_max - lat_min) / static_cast<double>(rows); }
  double lon_step() const { return (lon_max - lon_min) / static_cast<double>(cols); }

  // Cell index for a point, or false if it falls outside the footprint.
  bool locate(double lat, double lon, std::int64_t& row, std::int64_t& col) const;
};

enum class FeatureId {
  occurrence,
  flash_count,
  flash_energy,
  reflectivity,
  cloud_top_height,
  cloud_top_pressure,
  cloud_optical_depth,
};

inline constexpr std::array<FeatureId, 7> kAllFeatures = {
    FeatureId::occurrence,        FeatureId::flash_count,
    FeatureId::flash_energy,      FeatureId::reflectivity,
    FeatureId::cloud_top_height,  FeatureId::cloud_top_pressure,
    FeatureId::cloud_optical_depth,
};

// The three lightning channels feed one encoder, the four others feed the
// auxiliary encoder, in these orders.
inline constexpr std::array<FeatureId, 3> kLightningFeatures = {
    FeatureId::occurrence, FeatureId::flash_count, FeatureId::flash_energy};
inline constexpr std::array<FeatureId, 4> kAuxFeatures = {
    FeatureId::reflectivity, FeatureId::cloud_top_height,
    FeatureId::cloud_top_pressure, FeatureId::cloud_optical_depth};

const char* feature_name(FeatureId id);
FeatureId feature_from_name(const std::string& name);

enum class Split { train, val, test };

const char* split_name(Split s);
Split split_from_name(const std::string& name);

struct FeatureFrame {
  FeatureId feature = FeatureId::occurrence;
  std::string timestamp;  // ISO-8601 UTC hour, e.g. "2021-06-01T05:00Z"
  TensorF values;         // rows x cols
  bool valid = true;      // false for gap-marked hours
};

// One training/eval sample: s input hours ending just before anchor_time,
// h target hours starting at anchor_time. Tensors are raw feature values
// until normalize_window is applied.
struct SampleWindow {
  TensorF light_in;  // s x 3 x rows x cols (occurrence, flash_count, flash_energy)
  TensorF aux_in;    // s x 4 x rows x cols (reflectivity, CTH, CTP, COD)
  TensorF target;    // h x rows x cols, binary
  std::string anchor_time;
  Split split = Split::train;
};

// Hour arithmetic on ISO strings. Hours are whole UTC hours; the integer
// form counts hours since the Unix epoch so window spans are plain ranges.
std::int64_t parse_hour_iso(const std::string& iso);
std::string format_hour_iso(std::int64_t epoch_hours);

}  // namespace deeplight
