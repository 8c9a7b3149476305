#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "deeplight/grid.hpp"
#include "deeplight/tensor.hpp"

namespace deeplight {

enum class Transform { raw, standardize, log1p_standardize };

struct FeatureStats {
  Transform transform = Transform::raw;
  double mean = 0.0;
  double stdev = 1.0;
};

using NormStats = std::map<FeatureId, FeatureStats>;

// On-disk layout: manifest.json next to one raw file per (feature, split)
// of little-endian float32 frames in row-major [hour][row][col] order. A
// file holds a slot for every hour of its split in manifest order, so the
// offset of a frame is just its per-split ordinal; gap-marked hours keep a
// zero-filled slot and are listed in `gaps`.
struct DatasetManifest {
  GridSpec grid;
  std::vector<FeatureId> features;
  std::vector<std::string> hours;          // ISO hour strings, sorted ascending
  std::vector<Split> split_tags;           // one per hour
  std::map<FeatureId, std::set<std::int64_t>> gaps;  // hour indices per feature
  NormStats normalization;
  // Recorded storage file names per (feature, split); filled with the
  // default naming on save but honored as-is on load.
  std::map<FeatureId, std::map<Split, std::string>> files;
  std::string root;  // directory the manifest was loaded from / saved to

  std::int64_t hour_count() const { return static_cast<std::int64_t>(hours.size()); }
  bool is_gap(FeatureId f, std::int64_t hour_index) const;
  // True when every feature has a stored frame for the hour.
  bool hour_complete(std::int64_t hour_index) const;
  std::string storage_file(FeatureId f, Split s) const;
  // Ordinal of the hour within its split's storage file.
  std::int64_t split_ordinal(std::int64_t hour_index) const;
  void validate() const;
};

// Fully loaded container. Frames are indexed [feature][hour index]; gap
// slots hold zeros and are identified through the manifest.
struct Dataset {
  DatasetManifest manifest;
  std::map<FeatureId, std::vector<TensorF>> frames;

  const TensorF& frame(FeatureId f, std::int64_t hour_index) const;
};

void save_dataset(const Dataset& ds, const std::string& dir, bool force = false);
Dataset load_dataset(const std::string& dir);
DatasetManifest load_manifest(const std::string& dir);

// Reads one frame straight from storage (no full load). Gap-marked hours
// come back flagged invalid with zero values.
FeatureFrame load_frame(const DatasetManifest& manifest, FeatureId f,
                        const std::string& hour_iso);

// Per-feature statistics from training-split hours only; gap hours are
// excluded since their zero fill is a placeholder, not an observation.
// Count/energy stats are taken after log1p, matching how they are applied.
NormStats compute_normalization(const Dataset& ds);

// Every window whose s input hours and h target hours are stored for all
// features, anchors stepping by stride. A window takes the split of its
// anchor hour and is dropped if its span touches another split or a gap.
std::vector<SampleWindow> build_windows(const Dataset& ds, int s, int h,
                                        int stride);

SampleWindow normalize_window(const SampleWindow& w, const NormStats& stats);

}  // namespace deeplight
