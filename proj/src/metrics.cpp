#include "deeplight/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace deeplight {

namespace {

double ratio0(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

void check_pair(const TensorF& a, const TensorF& b) {
  if (!a.same_shape(b)) throw ConfigError("metric inputs must share a shape");
}

void dilate_plane(const float* in, float* out, std::int64_t rows,
                  std::int64_t cols, const Structuring3x3& se) {
  for (std::int64_t y = 0; y < rows; ++y) {
    for (std::int64_t x = 0; x < cols; ++x) {
      float v = 0.0f;
      for (int dy = -1; dy <= 1 && v == 0.0f; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          if (!se[static_cast<std::size_t>(dy + 1)][static_cast<std::size_t>(dx + 1)]) continue;
          const std::int64_t sy = y + dy, sx = x + dx;
          if (sy < 0 || sy >= rows || sx < 0 || sx >= cols) continue;
          if (in[sy * cols + sx] != 0.0f) {
            v = 1.0f;
            break;
          }
        }
      }
      out[y * cols + x] = v;
    }
  }
}

TensorF collapse_max(const TensorF& vol, int horizon) {
  TensorF out({vol.dim(1), vol.dim(2)});
  const std::int64_t plane = vol.dim(1) * vol.dim(2);
  for (int t = 0; t < horizon; ++t) {
    for (std::int64_t i = 0; i < plane; ++i) {
      out.data[static_cast<std::size_t>(i)] =
          std::max(out.data[static_cast<std::size_t>(i)],
                   vol.data[static_cast<std::size_t>(t * plane + i)]);
    }
  }
  return out;
}

TensorF frame_of(const TensorF& vol, int t) {
  TensorF out({vol.dim(1), vol.dim(2)});
  const std::int64_t plane = vol.dim(1) * vol.dim(2);
  std::copy_n(vol.data.begin() + t * plane, plane, out.data.begin());
  return out;
}

}  // namespace

TensorF binarize(const TensorF& pred, double threshold) {
  if (!(threshold > 0.0) || !(threshold < 1.0)) {
    throw ConfigError("binarize threshold must lie in (0,1)");
  }
  TensorF out(pred.shape);
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    out.data[i] = static_cast<double>(pred.data[i]) >= threshold ? 1.0f : 0.0f;
  }
  return out;
}

TensorF dilate(const TensorF& bin, const Structuring3x3& se) {
  TensorF out(bin.shape);
  if (bin.shape.size() == 2) {
    dilate_plane(bin.data.data(), out.data.data(), bin.dim(0), bin.dim(1), se);
  } else if (bin.shape.size() == 3) {
    const std::int64_t plane = bin.dim(1) * bin.dim(2);
    for (std::int64_t t = 0; t < bin.dim(0); ++t) {
      dilate_plane(bin.data.data() + t * plane, out.data.data() + t * plane,
                   bin.dim(1), bin.dim(2), se);
    }
  } else {
    throw ConfigError("dilate expects a rank-2 or rank-3 tensor");
  }
  return out;
}

ConfusionCounts strict_counts(const TensorF& pred_bin, const TensorF& truth) {
  check_pair(pred_bin, truth);
  ConfusionCounts c;
  c.n_total = static_cast<std::int64_t>(pred_bin.data.size());
  for (std::size_t i = 0; i < pred_bin.data.size(); ++i) {
    const bool p = pred_bin.data[i] != 0.0f;
    const bool y = truth.data[i] != 0.0f;
    if (p && y) ++c.tp;
    else if (p) ++c.fp;
    else if (y) ++c.fn;
    else ++c.tn;
  }
  return c;
}

ConfusionCounts neighborhood_counts(const TensorF& pred_bin, const TensorF& truth,
                                    const Structuring3x3& se) {
  check_pair(pred_bin, truth);
  const TensorF truth_dil = dilate(truth, se);
  const TensorF pred_dil = dilate(pred_bin, se);
  ConfusionCounts c;
  c.n_total = static_cast<std::int64_t>(pred_bin.data.size());
  for (std::size_t i = 0; i < pred_bin.data.size(); ++i) {
    const bool p = pred_bin.data[i] != 0.0f;
    const bool y = truth.data[i] != 0.0f;
    if (p && truth_dil.data[i] != 0.0f) ++c.tp;
    else if (p) ++c.fp;
    if (y && pred_dil.data[i] == 0.0f) ++c.fn;
  }
  c.tn = c.n_total - c.tp - c.fp - c.fn;
  if (c.tn < 0) throw ConfigError("neighborhood counts exceed the cell total");
  return c;
}

double pod(const ConfusionCounts& c) {
  return ratio0(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fn));
}

double far(const ConfusionCounts& c) {
  return ratio0(static_cast<double>(c.fp), static_cast<double>(c.tp + c.fp));
}

double ets(const ConfusionCounts& c) {
  if (c.n_total == 0) return 0.0;
  const double n = static_cast<double>(c.n_total);
  const double r = static_cast<double>(c.tp + c.fp) *
                   static_cast<double>(c.tp + c.fn) / n;
  return ratio0(static_cast<double>(c.tp) - r,
                n - static_cast<double>(c.tn) - r);
}

double micro_f1(const ConfusionCounts& c) {
  return ratio0(2.0 * static_cast<double>(c.tp),
                static_cast<double>(2 * c.tp + c.fp + c.fn));
}

double macro_f1(const ConfusionCounts& c) {
  const double pos = micro_f1(c);
  // Negative-class F1 from the same table with the roles flipped.
  const double neg = ratio0(2.0 * static_cast<double>(c.tn),
                            static_cast<double>(2 * c.tn + c.fn + c.fp));
  return 0.5 * (pos + neg);
}

Scores compute_scores(const ConfusionCounts& c) {
  return Scores{pod(c), far(c), ets(c), micro_f1(c), macro_f1(c)};
}

ConfusionCounts horizon_counts(const TensorF& pred, const TensorF& truth,
                               int horizon, CountMode mode, double threshold,
                               CumulativeMode pooling, const Structuring3x3& se) {
  if (pred.shape.size() != 3) throw ConfigError("horizon_counts expects [h,R,C]");
  check_pair(pred, truth);
  if (horizon < 1 || horizon > pred.dim(0)) {
    throw ConfigError("horizon outside the lead range");
  }
  const TensorF pred_bin = binarize(pred, threshold);
  auto count_one = [&](const TensorF& p2, const TensorF& y2) {
    return mode == CountMode::strict ? strict_counts(p2, y2)
                                     : neighborhood_counts(p2, y2, se);
  };
  if (pooling == CumulativeMode::collapse_max) {
    return count_one(collapse_max(pred_bin, horizon), collapse_max(truth, horizon));
  }
  ConfusionCounts total;
  for (int t = 0; t < horizon; ++t) {
    total += count_one(frame_of(pred_bin, t), frame_of(truth, t));
  }
  return total;
}

std::vector<MetricRow> cumulative_scores(const TensorF& pred, const TensorF& truth,
                                         const std::vector<int>& horizons,
                                         CountMode mode, double threshold,
                                         CumulativeMode pooling) {
  std::vector<MetricRow> rows;
  rows.reserve(horizons.size());
  for (int k : horizons) {
    MetricRow row;
    row.mode = mode;
    row.horizon = k;
    row.counts = horizon_counts(pred, truth, k, mode, threshold, pooling);
    row.scores = compute_scores(row.counts);
    rows.push_back(row);
  }
  return rows;
}

TensorF persistence_forecast(const SampleWindow& window) {
  const std::int64_t s = window.light_in.dim(0);
  const std::int64_t rows = window.light_in.dim(2);
  const std::int64_t cols = window.light_in.dim(3);
  const std::int64_t h = window.target.dim(0);
  TensorF out({h, rows, cols});
  for (std::int64_t t = 0; t < h; ++t) {
    for (std::int64_t y = 0; y < rows; ++y) {
      for (std::int64_t x = 0; x < cols; ++x) {
        out.at(t, y, x) = window.light_in.at(s - 1, 0, y, x);
      }
    }
  }
  return out;
}

}  // namespace deeplight
