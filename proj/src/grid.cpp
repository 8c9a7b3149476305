#include "deeplight/grid.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>

#include "deeplight/errors.hpp"

namespace deeplight {

void GridSpec::validate() const {
  if (rows < 1 || cols < 1) throw ConfigError("grid must have at least one row and column");
  if (!(lat_min < lat_max)) throw ConfigError("grid lat_min must be below lat_max");
  if (!(lon_min < lon_max)) throw ConfigError("grid lon_min must be below lon_max");
  if (!(cell_km > 0.0)) throw ConfigError("grid cell_km must be positive");
}

bool GridSpec::locate(double lat, double lon, std::int64_t& row,
                      std::int64_t& col) const {
  if (lat < lat_min || lat >= lat_max || lon < lon_min || lon >= lon_max) {
    return false;
  }
  row = static_cast<std::int64_t>(std::floor((lat - lat_min) / lat_step()));
  col = static_cast<std::int64_t>(std::floor((lon - lon_min) / lon_step()));
  // Floating point can nudge a point on the last interior edge up to the
  // boundary; clamp so in-range points always land in a real cell.
  if (row >= rows) row = rows - 1;
  if (col >= cols) col = cols - 1;
  return true;
}

const char* feature_name(FeatureId id) {
  switch (id) {
    case FeatureId::occurrence: return "occurrence";
    case FeatureId::flash_count: return "flash_count";
    case FeatureId::flash_energy: return "flash_energy";
    case FeatureId::reflectivity: return "reflectivity";
    case FeatureId::cloud_top_height: return "cloud_top_height";
    case FeatureId::cloud_top_pressure: return "cloud_top_pressure";
    case FeatureId::cloud_optical_depth: return "cloud_optical_depth";
  }
  throw ConfigError("unknown feature id");
}

FeatureId feature_from_name(const std::string& name) {
  for (FeatureId id : kAllFeatures) {
    if (name == feature_name(id)) return id;
  }
  throw ConfigError("unknown feature name: " + name);
}

const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  throw ConfigError("unknown split");
}

Split split_from_name(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw ConfigError("unknown split name: " + name);
}

std::int64_t parse_hour_iso(const std::string& iso) {
  int y = 0, mo = 0, d = 0, h = 0;
  int n = std::sscanf(iso.c_str(), "%d-%d-%dT%d", &y, &mo, &d, &h);
  if (n != 4 || mo < 1 || mo > 12 || d < 1 || d > 31 || h < 0 || h > 23) {
    throw ConfigError("bad hour timestamp: " + iso);
  }
  using namespace std::chrono;
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)},
                           day{static_cast<unsigned>(d)}};
  if (!ymd.ok()) throw ConfigError("bad calendar date: " + iso);
  const sys_days days{ymd};
  return static_cast<std::int64_t>(days.time_since_epoch().count()) * 24 + h;
}

std::string format_hour_iso(std::int64_t epoch_hours) {
  using namespace std::chrono;
  std::int64_t d = epoch_hours / 24;
  std::int64_t h = epoch_hours % 24;
  if (h < 0) {
    h += 24;
    d -= 1;
  }
  const year_month_day ymd{sys_days{days{d}}};
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02uT%02d:00Z",
                static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()),
                static_cast<unsigned>(ymd.day()), static_cast<int>(h));
  return buf;
}

}  // namespace deeplight
