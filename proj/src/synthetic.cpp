#include "deeplight/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "deeplight/errors.hpp"
#include "deeplight/rng.hpp"

namespace deeplight {

namespace {

constexpr std::int64_t kEpochStartHour = 438288;  // 2020-01-01T00:00Z

struct Storm {
  double y0, x0;       // center at birth
  double dy, dx;       // cells/hour
  double sigma;
  int birth;           // may be negative so storms can be live at hour 0
  int lifetime;
};

// Sum of sin^2-lifecycle Gaussian blobs at hour t.
void accumulate_intensity(const std::vector<Storm>& storms, int t,
                          std::int64_t rows, std::int64_t cols, float* out) {
  std::fill(out, out + rows * cols, 0.0f);
  for (const auto& s : storms) {
    const int age = t - s.birth;
    if (age < 0 || age > s.lifetime) continue;
    const double amp = std::sin(M_PI * static_cast<double>(age) /
                                static_cast<double>(s.lifetime));
    const double a = amp * amp;
    if (a <= 0.0) continue;
    const double cy = s.y0 + s.dy * age;
    const double cx = s.x0 + s.dx * age;
    const double inv = 1.0 / (2.0 * s.sigma * s.sigma);
    // Blobs fall below any useful mass past a few sigmas; restrict the
    // cell loop to that box.
    const double reach = 4.0 * s.sigma;
    const std::int64_t ylo = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(cy - reach)));
    const std::int64_t yhi = std::min<std::int64_t>(rows - 1, static_cast<std::int64_t>(std::ceil(cy + reach)));
    const std::int64_t xlo = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(cx - reach)));
    const std::int64_t xhi = std::min<std::int64_t>(cols - 1, static_cast<std::int64_t>(std::ceil(cx + reach)));
    for (std::int64_t y = ylo; y <= yhi; ++y) {
      for (std::int64_t x = xlo; x <= xhi; ++x) {
        const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
        out[y * cols + x] += static_cast<float>(a * std::exp(-d2 * inv));
      }
    }
  }
}

}  // namespace

void StormParams::validate() const {
  if (n_storms < 0) throw ConfigError("n_storms must be >= 0");
  if (!(blob_sigma > 0.0)) throw ConfigError("blob_sigma must be positive");
  if (lifetime < 1) throw ConfigError("lifetime must be >= 1");
  if (cloud_lead < 0) throw ConfigError("cloud_lead must be >= 0");
  if (base_rate < 0.0 || base_rate > 1.0) {
    throw ConfigError("base_rate must lie in [0,1]");
  }
  if (gain < 0.0) throw ConfigError("gain must be >= 0");
}

Dataset generate_dataset(const GridSpec& grid, int hours,
                         const StormParams& params) {
  grid.validate();
  params.validate();
  if (hours < 1) throw ConfigError("hours must be >= 1");

  const std::int64_t rows = grid.rows, cols = grid.cols;
  const std::int64_t plane = rows * cols;
  Rng rng(params.seed);

  std::vector<Storm> storms;
  storms.reserve(static_cast<std::size_t>(params.n_storms));
  for (int i = 0; i < params.n_storms; ++i) {
    Storm s;
    s.y0 = rng.uniform(0.0, static_cast<double>(rows - 1));
    s.x0 = rng.uniform(0.0, static_cast<double>(cols - 1));
    s.dy = params.drift[0] * rng.uniform(0.75, 1.25);
    s.dx = params.drift[1] * rng.uniform(0.75, 1.25);
    s.sigma = params.blob_sigma * rng.uniform(0.6, 1.6);
    s.lifetime = params.lifetime;
    // Births spread so storms can already be live at hour 0 and still be
    // starting near the end.
    s.birth = static_cast<int>(rng.uniform_int(
                  static_cast<std::uint64_t>(hours + params.lifetime))) -
              params.lifetime;
    storms.push_back(s);
  }

  std::vector<TensorF> intensity(static_cast<std::size_t>(hours));
  for (int t = 0; t < hours; ++t) {
    intensity[static_cast<std::size_t>(t)] = TensorF({rows, cols});
    accumulate_intensity(storms, t, rows, cols,
                         intensity[static_cast<std::size_t>(t)].data.data());
  }

  Dataset ds;
  ds.manifest.grid = grid;
  ds.manifest.features.assign(kAllFeatures.begin(), kAllFeatures.end());
  ds.manifest.hours.reserve(static_cast<std::size_t>(hours));
  ds.manifest.split_tags.reserve(static_cast<std::size_t>(hours));
  const int train_end = static_cast<int>(std::floor(hours * 0.70));
  const int val_end = static_cast<int>(std::floor(hours * 0.85));
  for (int t = 0; t < hours; ++t) {
    ds.manifest.hours.push_back(format_hour_iso(kEpochStartHour + t));
    ds.manifest.split_tags.push_back(t < train_end   ? Split::train
                                     : t < val_end ? Split::val
                                                   : Split::test);
  }

  for (FeatureId f : kAllFeatures) {
    ds.frames[f].assign(static_cast<std::size_t>(hours), TensorF({rows, cols}));
  }

  for (int t = 0; t < hours; ++t) {
    const TensorF& now = intensity[static_cast<std::size_t>(t)];
    const int lag = t - params.cloud_lead;
    const TensorF* lagged =
        lag >= 0 ? &intensity[static_cast<std::size_t>(lag)] : nullptr;

    TensorF& occ = ds.frames[FeatureId::occurrence][static_cast<std::size_t>(t)];
    TensorF& cnt = ds.frames[FeatureId::flash_count][static_cast<std::size_t>(t)];
    TensorF& erg = ds.frames[FeatureId::flash_energy][static_cast<std::size_t>(t)];
    TensorF& refl = ds.frames[FeatureId::reflectivity][static_cast<std::size_t>(t)];

    for (std::int64_t i = 0; i < plane; ++i) {
      const double inten_lag = lagged ? lagged->data[static_cast<std::size_t>(i)] : 0.0;
      const double p = std::min(1.0, params.base_rate + params.gain * inten_lag);
      if (rng.bernoulli(p)) {
        occ.data[static_cast<std::size_t>(i)] = 1.0f;
        const double flashes = 1.0 + static_cast<double>(rng.poisson(3.0 * inten_lag));
        cnt.data[static_cast<std::size_t>(i)] = static_cast<float>(flashes);
        erg.data[static_cast<std::size_t>(i)] =
            static_cast<float>(flashes * rng.lognormal(1.0, 0.5));
      }
      const double dbz = 65.0 * now.data[static_cast<std::size_t>(i)] +
                         rng.normal(0.0, 2.0);
      refl.data[static_cast<std::size_t>(i)] = static_cast<float>(std::max(0.0, dbz));
    }
    ds.frames[FeatureId::cloud_top_height][static_cast<std::size_t>(t)] = now;
    ds.frames[FeatureId::cloud_top_pressure][static_cast<std::size_t>(t)] = now;
    ds.frames[FeatureId::cloud_optical_depth][static_cast<std::size_t>(t)] = now;
  }

  ds.manifest.normalization = compute_normalization(ds);
  ds.manifest.validate();
  return ds;
}

}  // namespace deeplight
