#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <thread>

#include "httplib.h"

#include "deeplight/errors.hpp"
#include "deeplight/ingest.hpp"

namespace fs = std::filesystem;

namespace deeplight {

namespace {

struct UrlParts {
  std::string origin;  // scheme://host[:port]
  std::string prefix;  // path under the origin, no trailing slash
};

UrlParts split_base_url(const std::string& base) {
  const auto scheme = base.find("://");
  if (scheme == std::string::npos) {
    throw ConfigError("base url needs a scheme: " + base);
  }
  const auto slash = base.find('/', scheme + 3);
  if (slash == std::string::npos) return {base, ""};
  std::string prefix = base.substr(slash);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {base.substr(0, slash), prefix};
}

std::string hour_stamp(std::int64_t epoch_hour) {
  const std::string iso = format_hour_iso(epoch_hour);  // YYYY-MM-DDTHH:00Z
  std::string out;
  for (char c : iso.substr(0, 13)) {
    if (c != '-' && c != ':') out += c;
  }
  return out + "Z";  // YYYYMMDDTHHZ
}

// One object with bounded retries. Returns false for a remote 404 (a gap);
// throws FetchError when attempts run out.
bool fetch_object(httplib::Client& cli, const std::string& path,
                  const std::string& local, const FetchConfig& cfg) {
  for (int attempt = 0; attempt < cfg.max_attempts; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(
          std::chrono::milliseconds(cfg.backoff_ms << (attempt - 1)));
    }
    auto res = cli.Get(path);
    if (!res) continue;  // transport error, retry
    if (res->status == 404) return false;
    if (res->status != 200) continue;  // transient upstream trouble
    fs::create_directories(fs::path(local).parent_path());
    const std::string tmp = local + ".part";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw StorageError("cannot write " + tmp);
      out.write(res->body.data(),
                static_cast<std::streamsize>(res->body.size()));
      if (!out) throw StorageError("short write on " + tmp);
    }
    fs::rename(tmp, local);
    return true;
  }
  throw FetchError("giving up on " + path + " after " +
                   std::to_string(cfg.max_attempts) + " attempts");
}

}  // namespace

std::string default_cache_dir() {
  if (const char* env = std::getenv(kCacheEnvVar); env && *env) return env;
  return ".cache/deeplight";
}

std::vector<std::string> products_for(SourceKind source,
                                      const std::string& station) {
  if (source == SourceKind::goes) {
    return {"ABI-L2-ACHA", "ABI-L2-CTP", "ABI-L2-COD", "GLM-L2-LCFA"};
  }
  return {"NEXRAD-L3-" + station};
}

std::string product_object_path(const std::string& product,
                                std::int64_t epoch_hour) {
  return "/" + product + "/" + hour_stamp(epoch_hour) + ".csv";
}

FetchOutcome fetch_products(SourceKind source, const std::string& start_iso,
                            const std::string& end_iso, const FetchConfig& cfg) {
  const std::int64_t h0 = parse_hour_iso(start_iso);
  const std::int64_t h1 = parse_hour_iso(end_iso);
  if (h1 < h0) throw ConfigError("end hour precedes start hour");
  if (cfg.max_attempts < 1) throw ConfigError("max_attempts must be >= 1");

  const std::string base = !cfg.base_url.empty()
                               ? cfg.base_url
                               : (source == SourceKind::goes ? kGoesBaseUrl
                                                             : kNexradBaseUrl);
  const std::string cache =
      !cfg.cache_dir.empty() ? cfg.cache_dir : default_cache_dir();
  const auto url = split_base_url(base);
  httplib::Client cli(url.origin);
  cli.set_connection_timeout(10, 0);
  cli.set_read_timeout(30, 0);

  FetchOutcome outcome;
  for (const auto& product : products_for(source, cfg.station)) {
    for (std::int64_t h = h0; h <= h1; ++h) {
      const std::string object = product_object_path(product, h);
      const std::string local = cache + object;
      // a cached non-empty file satisfies the request with no network call
      std::error_code ec;
      const auto size = fs::file_size(local, ec);
      if (!ec && size > 0) {
        outcome.skipped.push_back(local);
        continue;
      }
      if (fetch_object(cli, url.prefix + object, local, cfg)) {
        outcome.downloaded.push_back(local);
      } else {
        outcome.gaps.push_back(product + "/" + format_hour_iso(h));
      }
    }
  }
  return outcome;
}

namespace {

void mark_gap(DatasetManifest& m, FeatureId f, std::int64_t hour_index) {
  m.gaps[f].insert(hour_index);
}

}  // namespace

Dataset ingest_hours(const IngestOptions& opts) {
  opts.grid.validate();
  const std::int64_t h0 = parse_hour_iso(opts.start_iso);
  const std::int64_t h1 = parse_hour_iso(opts.end_iso);
  if (h1 < h0) throw ConfigError("end hour precedes start hour");
  const std::int64_t n = h1 - h0 + 1;

  if (!opts.offline) {
    if (opts.fetch_goes) {
      fetch_products(SourceKind::goes, opts.start_iso, opts.end_iso, opts.goes);
    }
    if (opts.fetch_nexrad) {
      fetch_products(SourceKind::nexrad, opts.start_iso, opts.end_iso,
                     opts.nexrad);
    }
  }
  const std::string goes_cache =
      !opts.goes.cache_dir.empty() ? opts.goes.cache_dir : default_cache_dir();
  const std::string nexrad_cache = !opts.nexrad.cache_dir.empty()
                                       ? opts.nexrad.cache_dir
                                       : default_cache_dir();

  Dataset ds;
  DatasetManifest& m = ds.manifest;
  m.grid = opts.grid;
  m.features.assign(kAllFeatures.begin(), kAllFeatures.end());
  for (std::int64_t i = 0; i < n; ++i) {
    m.hours.push_back(format_hour_iso(h0 + i));
  }
  const auto split_at = [&](std::int64_t i) {
    if (i < static_cast<std::int64_t>(0.70 * static_cast<double>(n))) {
      return Split::train;
    }
    if (i < static_cast<std::int64_t>(0.85 * static_cast<double>(n))) {
      return Split::val;
    }
    return Split::test;
  };
  for (std::int64_t i = 0; i < n; ++i) m.split_tags.push_back(split_at(i));

  const TensorF zero({opts.grid.rows, opts.grid.cols});
  for (FeatureId f : m.features) {
    ds.frames[f].assign(static_cast<std::size_t>(n), zero);
  }

  struct PointProduct {
    const char* product;
    FeatureId feature;
    bool cap;
    const std::string* cache;
  };
  const std::string nexrad_product = "NEXRAD-L3-" + opts.nexrad.station;
  const PointProduct point_products[] = {
      {"ABI-L2-ACHA", FeatureId::cloud_top_height, false, &goes_cache},
      {"ABI-L2-CTP", FeatureId::cloud_top_pressure, false, &goes_cache},
      {"ABI-L2-COD", FeatureId::cloud_optical_depth, false, &goes_cache},
      {nexrad_product.c_str(), FeatureId::reflectivity, true, &nexrad_cache},
  };

  for (std::int64_t i = 0; i < n; ++i) {
    const std::int64_t hour = h0 + i;
    for (const auto& pp : point_products) {
      const std::string local = *pp.cache + product_object_path(pp.product, hour);
      if (!fs::exists(local)) {
        mark_gap(m, pp.feature, i);
        continue;
      }
      try {
        TensorF frame = interpolate_to_grid(parse_point_csv(local), opts.grid);
        if (pp.cap) frame = cap_reflectivity(frame);
        ds.frames[pp.feature][static_cast<std::size_t>(i)] = std::move(frame);
      } catch (const CoverageError&) {
        mark_gap(m, pp.feature, i);
      }
    }

    const std::string glm =
        goes_cache + product_object_path("GLM-L2-LCFA", hour);
    if (!fs::exists(glm)) {
      mark_gap(m, FeatureId::occurrence, i);
      mark_gap(m, FeatureId::flash_count, i);
      mark_gap(m, FeatureId::flash_energy, i);
      continue;
    }
    auto flashes = rasterize_flashes(parse_flash_csv(glm), opts.grid, hour);
    ds.frames[FeatureId::occurrence][static_cast<std::size_t>(i)] =
        std::move(flashes.occurrence);
    ds.frames[FeatureId::flash_count][static_cast<std::size_t>(i)] =
        std::move(flashes.flash_count);
    ds.frames[FeatureId::flash_energy][static_cast<std::size_t>(i)] =
        std::move(flashes.flash_energy);
  }

  m.validate();
  m.normalization = compute_normalization(ds);
  return ds;
}

}  // namespace deeplight
