#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "deeplight/errors.hpp"
#include "deeplight/grid.hpp"
#include "deeplight/tensor.hpp"

namespace deeplight {

struct ConfusionCounts {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  std::int64_t tn = 0;
  std::int64_t n_total = 0;

  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    n_total += o.n_total;
    return *this;
  }
  friend ConfusionCounts operator+(ConfusionCounts a, const ConfusionCounts& b) {
    a += b;
    return a;
  }
};

enum class CountMode { strict, neighborhood };

// How counts accumulate over the first k lead frames: pool the per-frame
// confusion counts, or collapse the frames by max first and score once.
enum class CumulativeMode { count_pool, collapse_max };

// 3x3 structuring element, row-major, center at [1][1]. The default covers
// the full Chebyshev-radius-1 neighborhood; swapping in the identity makes
// neighborhood counting degenerate to strict counting.
using Structuring3x3 = std::array<std::array<bool, 3>, 3>;
inline constexpr Structuring3x3 kNeighborhood3x3 = {
    {{true, true, true}, {true, true, true}, {true, true, true}}};
inline constexpr Structuring3x3 kIdentity3x3 = {
    {{false, false, false}, {false, true, false}, {false, false, false}}};

// Cell positive iff p >= threshold; threshold must lie in (0,1).
TensorF binarize(const TensorF& pred, double threshold = 0.5);

// Binary dilation with zero padding beyond the borders. Rank 2 operates on
// the plane; rank 3 dilates each lead frame independently.
TensorF dilate(const TensorF& bin, const Structuring3x3& se = kNeighborhood3x3);

// Cellwise 2x2 contingency counting over equal-shape binary tensors.
ConfusionCounts strict_counts(const TensorF& pred_bin, const TensorF& truth);

// Hits relaxed to the structuring element's neighborhood on both sides:
// TP counts predictions near any event, FN counts events near no
// prediction, TN closes the total.
ConfusionCounts neighborhood_counts(const TensorF& pred_bin, const TensorF& truth,
                                    const Structuring3x3& se = kNeighborhood3x3);

// Scores per the verification formulas; every 0/0 returns 0.
double pod(const ConfusionCounts& c);
double far(const ConfusionCounts& c);
double ets(const ConfusionCounts& c);
double micro_f1(const ConfusionCounts& c);
double macro_f1(const ConfusionCounts& c);

struct Scores {
  double pod = 0.0;
  double far = 0.0;
  double ets = 0.0;
  double micro_f1 = 0.0;
  double macro_f1 = 0.0;
};
Scores compute_scores(const ConfusionCounts& c);

// Counts pooled over lead frames 0..k-1 of one window.
ConfusionCounts horizon_counts(const TensorF& pred, const TensorF& truth,
                               int horizon, CountMode mode,
                               double threshold = 0.5,
                               CumulativeMode pooling = CumulativeMode::count_pool,
                               const Structuring3x3& se = kNeighborhood3x3);

struct MetricRow {
  CountMode mode;
  int horizon;
  ConfusionCounts counts;
  Scores scores;
};

std::vector<MetricRow> cumulative_scores(
    const TensorF& pred, const TensorF& truth, const std::vector<int>& horizons,
    CountMode mode, double threshold = 0.5,
    CumulativeMode pooling = CumulativeMode::count_pool);

// Baseline that repeats the last observed occurrence frame for every lead.
TensorF persistence_forecast(const SampleWindow& window);

}  // namespace deeplight
