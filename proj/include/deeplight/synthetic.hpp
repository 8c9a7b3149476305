#pragma once

#include <array>
#include <cstdint>

#include "deeplight/dataset.hpp"
#include "deeplight/grid.hpp"

namespace deeplight {

// Drifting-blob storm scene controls. Lightning lags the cloud signal by
// cloud_lead hours, which is the structure the forecaster is meant to
// exploit.
struct StormParams {
  int n_storms = 12;
  double blob_sigma = 2.5;                 // cells; each storm jitters around it
  std::array<double, 2> drift = {0.4, 0.7};  // cells/hour (dy, dx)
  int lifetime = 24;                       // hours per storm
  int cloud_lead = 2;                      // hours cloud precedes lightning
  double base_rate = 0.0;                  // background occurrence probability
  double gain = 0.9;                       // occurrence probability per unit intensity
  std::uint64_t seed = 0;

  void validate() const;
};

// Deterministic scene: per-hour storm intensity drives every channel.
// Cloud features carry the intensity at t, reflectivity adds sensor noise,
// and occurrence draws Bernoulli(min(1, base_rate + gain * intensity at
// t - cloud_lead)). Hours are tagged chronologically 70/15/15 into
// train/val/test. Normalization stats are precomputed into the manifest.
Dataset generate_dataset(const GridSpec& grid, int hours,
                         const StormParams& params);

}  // namespace deeplight
