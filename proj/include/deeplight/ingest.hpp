#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "deeplight/dataset.hpp"
#include "deeplight/grid.hpp"
#include "deeplight/tensor.hpp"

namespace deeplight {

struct PointObservation {
  double lat = 0.0;
  double lon = 0.0;
  double value = 0.0;
  bool missing = false;
};

struct FlashEvent {
  double lat = 0.0;
  double lon = 0.0;
  double energy = 0.0;           // joules
  std::int64_t epoch_second = 0;  // UTC
};

// Scattered observations onto cell centers: piecewise-linear over a
// Delaunay triangulation of the usable points, nearest-neighbor outside
// the convex hull (and for degenerate point sets with no interior).
// Points are canonically sorted by (lat, lon) first, so the result does
// not depend on input order. Throws CoverageError when no usable point
// remains after dropping missing/non-finite values.
TensorF interpolate_to_grid(const std::vector<PointObservation>& points,
                            const GridSpec& grid);

// Negative reflectivity carries no lightning signal; clamp it to zero.
TensorF cap_reflectivity(const TensorF& frame);

struct FlashFrames {
  TensorF occurrence;
  TensorF flash_count;
  TensorF flash_energy;
  std::int64_t dropped = 0;  // events outside the grid footprint
};

// Bins the hour's flashes into half-open grid cells. Events outside
// [hour, hour+1) are ignored; events off the footprint are dropped and
// counted. occurrence = indicator(flash_count > 0).
FlashFrames rasterize_flashes(const std::vector<FlashEvent>& events,
                              const GridSpec& grid, std::int64_t epoch_hour);

// Raw product tables are CSV. Point products: header "lat,lon,value",
// one observation per row; an empty or nan value column marks a missing
// observation. Flash products: header "lat,lon,energy,time" with time as
// ISO-8601 UTC seconds (e.g. 2022-06-01T14:03:59Z).
std::vector<PointObservation> parse_point_csv(const std::string& path);
std::vector<FlashEvent> parse_flash_csv(const std::string& path);

std::int64_t parse_instant_iso(const std::string& iso);  // epoch seconds

enum class SourceKind { goes, nexrad };

// Raw object layout under a base URL: <base>/<product>/<YYYYMMDDTHH>Z.csv
// with product one of ABI-L2-ACHA, ABI-L2-CTP, ABI-L2-COD, GLM-L2-LCFA,
// NEXRAD-L3-<station>. The cache directory mirrors that layout.
struct FetchConfig {
  std::string base_url;   // default kGoesBaseUrl / kNexradBaseUrl per source
  std::string cache_dir;  // default $DEEPLIGHT_CACHE_DIR, else ".cache/deeplight"
  std::string station = "TDAL";
  int max_attempts = 3;   // per object, transient failures only
  int backoff_ms = 250;   // doubled after each failed attempt
};

inline constexpr const char* kGoesBaseUrl =
    "http://noaa-goes16.s3.amazonaws.com";
inline constexpr const char* kNexradBaseUrl =
    "http://unidata-nexrad-level3.s3.amazonaws.com";
inline constexpr const char* kCacheEnvVar = "DEEPLIGHT_CACHE_DIR";

std::string default_cache_dir();
std::vector<std::string> products_for(SourceKind source,
                                      const std::string& station);
std::string product_object_path(const std::string& product,
                                std::int64_t epoch_hour);

struct FetchOutcome {
  std::vector<std::string> downloaded;  // local paths fetched this call
  std::vector<std::string> skipped;     // already cached with matching size
  std::vector<std::string> gaps;        // "<product>/<hour>" absent upstream
};

// Downloads every product file for the inclusive hour range. A file
// already cached with the remote's size is not re-requested. Transient
// errors retry with bounded backoff and then raise FetchError; a missing
// remote object is a gap, not an error.
FetchOutcome fetch_products(SourceKind source, const std::string& start_iso,
                            const std::string& end_iso, const FetchConfig& cfg);

struct IngestOptions {
  GridSpec grid;
  std::string start_iso;  // first hour, inclusive
  std::string end_iso;    // last hour, inclusive
  FetchConfig goes;
  FetchConfig nexrad;
  bool offline = false;      // never touch the network, cache only
  bool fetch_goes = true;    // pull GOES products when online
  bool fetch_nexrad = true;  // pull NEXRAD products when online
};

// Full raw-to-container pipeline: fetch (unless offline), parse, grid
// every feature for every hour, mark gaps where a product is absent or
// unusable, tag hours chronologically 70/15/15, and precompute
// normalization stats. Returns the in-memory dataset; the caller decides
// where to save it.
Dataset ingest_hours(const IngestOptions& opts);

}  // namespace deeplight
