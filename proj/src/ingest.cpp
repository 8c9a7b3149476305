#include "deeplight/ingest.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <utility>

#include "deeplight/errors.hpp"

namespace deeplight {

namespace {

struct P2 {
  double x, y;  // x = lon, y = lat
};

struct Tri {
  int a, b, c;
  double cx, cy, r2;  // circumcircle; r2 = inf for degenerate triples
};

Tri make_tri(const std::vector<P2>& pts, int a, int b, int c) {
  const P2& A = pts[static_cast<std::size_t>(a)];
  const P2& B = pts[static_cast<std::size_t>(b)];
  const P2& C = pts[static_cast<std::size_t>(c)];
  const double d =
      2.0 * (A.x * (B.y - C.y) + B.x * (C.y - A.y) + C.x * (A.y - B.y));
  Tri t{a, b, c, 0.0, 0.0, std::numeric_limits<double>::infinity()};
  if (d == 0.0) return t;  // collinear; circumcircle degenerates to a line
  const double a2 = A.x * A.x + A.y * A.y;
  const double b2 = B.x * B.x + B.y * B.y;
  const double c2 = C.x * C.x + C.y * C.y;
  t.cx = (a2 * (B.y - C.y) + b2 * (C.y - A.y) + c2 * (A.y - B.y)) / d;
  t.cy = (a2 * (C.x - B.x) + b2 * (A.x - C.x) + c2 * (B.x - A.x)) / d;
  const double dx = A.x - t.cx;
  const double dy = A.y - t.cy;
  t.r2 = dx * dx + dy * dy;
  return t;
}

bool in_circumcircle(const Tri& t, const P2& p) {
  if (std::isinf(t.r2)) return true;
  const double dx = p.x - t.cx;
  const double dy = p.y - t.cy;
  // tiny slack keeps cocircular configurations from leaving holes
  return dx * dx + dy * dy <= t.r2 * (1.0 + 1e-12) + 1e-30;
}

// Bowyer-Watson over the point cloud; returns triangles indexing pts.
std::vector<Tri> delaunay(const std::vector<P2>& pts) {
  const int n = static_cast<int>(pts.size());
  if (n < 3) return {};

  double xmin = pts[0].x, xmax = pts[0].x, ymin = pts[0].y, ymax = pts[0].y;
  for (const auto& p : pts) {
    xmin = std::min(xmin, p.x);
    xmax = std::max(xmax, p.x);
    ymin = std::min(ymin, p.y);
    ymax = std::max(ymax, p.y);
  }
  const double span = std::max({xmax - xmin, ymax - ymin, 1.0});
  const double cx = 0.5 * (xmin + xmax);
  const double cy = 0.5 * (ymin + ymax);

  std::vector<P2> all = pts;
  all.push_back({cx - 30.0 * span, cy - 10.0 * span});
  all.push_back({cx + 30.0 * span, cy - 10.0 * span});
  all.push_back({cx, cy + 30.0 * span});

  std::vector<Tri> tris{make_tri(all, n, n + 1, n + 2)};
  for (int i = 0; i < n; ++i) {
    std::vector<Tri> keep;
    std::map<std::pair<int, int>, int> edge_count;
    std::vector<std::array<int, 2>> edges;
    for (const auto& t : tris) {
      if (in_circumcircle(t, all[static_cast<std::size_t>(i)])) {
        const std::array<std::array<int, 2>, 3> es{
            {{t.a, t.b}, {t.b, t.c}, {t.c, t.a}}};
        for (const auto& e : es) {
          edge_count[{std::min(e[0], e[1]), std::max(e[0], e[1])}]++;
          edges.push_back(e);
        }
      } else {
        keep.push_back(t);
      }
    }
    for (const auto& e : edges) {
      if (edge_count[{std::min(e[0], e[1]), std::max(e[0], e[1])}] == 1) {
        keep.push_back(make_tri(all, e[0], e[1], i));
      }
    }
    tris = std::move(keep);
  }

  std::vector<Tri> out;
  for (const auto& t : tris) {
    if (t.a >= n || t.b >= n || t.c >= n) continue;
    const P2& A = pts[static_cast<std::size_t>(t.a)];
    const P2& B = pts[static_cast<std::size_t>(t.b)];
    const P2& C = pts[static_cast<std::size_t>(t.c)];
    const double area2 =
        (B.x - A.x) * (C.y - A.y) - (C.x - A.x) * (B.y - A.y);
    if (area2 != 0.0) out.push_back(t);
  }
  return out;
}

// Barycentric coordinates of p in t, or false when p lies outside.
bool barycentric(const std::vector<P2>& pts, const Tri& t, const P2& p,
                 double& la, double& lb, double& lc) {
  const P2& A = pts[static_cast<std::size_t>(t.a)];
  const P2& B = pts[static_cast<std::size_t>(t.b)];
  const P2& C = pts[static_cast<std::size_t>(t.c)];
  const double d = (B.y - C.y) * (A.x - C.x) + (C.x - B.x) * (A.y - C.y);
  if (d == 0.0) return false;
  la = ((B.y - C.y) * (p.x - C.x) + (C.x - B.x) * (p.y - C.y)) / d;
  lb = ((C.y - A.y) * (p.x - C.x) + (A.x - C.x) * (p.y - C.y)) / d;
  lc = 1.0 - la - lb;
  const double tol = -1e-9;
  return la >= tol && lb >= tol && lc >= tol;
}

}  // namespace

TensorF interpolate_to_grid(const std::vector<PointObservation>& points,
                            const GridSpec& grid) {
  grid.validate();
  struct Usable {
    double lat, lon, value;
  };
  std::vector<Usable> use;
  for (const auto& p : points) {
    if (p.missing || !std::isfinite(p.value) || !std::isfinite(p.lat) ||
        !std::isfinite(p.lon)) {
      continue;
    }
    use.push_back({p.lat, p.lon, p.value});
  }
  if (use.empty()) throw CoverageError("no usable points to interpolate");

  std::sort(use.begin(), use.end(), [](const Usable& a, const Usable& b) {
    return a.lat != b.lat ? a.lat < b.lat : a.lon < b.lon;
  });
  std::vector<Usable> uniq;
  for (const auto& u : use) {
    if (!uniq.empty() && uniq.back().lat == u.lat && uniq.back().lon == u.lon) {
      continue;  // duplicate site; first after the canonical sort wins
    }
    uniq.push_back(u);
  }

  std::vector<P2> pts(uniq.size());
  for (std::size_t i = 0; i < uniq.size(); ++i) {
    pts[i] = {uniq[i].lon, uniq[i].lat};
  }
  const auto tris = delaunay(pts);

  TensorF out({grid.rows, grid.cols});
  for (std::int64_t r = 0; r < grid.rows; ++r) {
    const double lat = grid.lat_min + (static_cast<double>(r) + 0.5) * grid.lat_step();
    for (std::int64_t c = 0; c < grid.cols; ++c) {
      const double lon =
          grid.lon_min + (static_cast<double>(c) + 0.5) * grid.lon_step();
      const P2 p{lon, lat};
      double value = 0.0;
      bool hit = false;
      for (const auto& t : tris) {
        double la, lb, lc;
        if (barycentric(pts, t, p, la, lb, lc)) {
          value = la * uniq[static_cast<std::size_t>(t.a)].value +
                  lb * uniq[static_cast<std::size_t>(t.b)].value +
                  lc * uniq[static_cast<std::size_t>(t.c)].value;
          hit = true;
          break;
        }
      }
      if (!hit) {
        // outside the hull (or a degenerate cloud): nearest site; ties
        // resolve to the first in (lat, lon) order
        double best = std::numeric_limits<double>::infinity();
        for (const auto& u : uniq) {
          const double dx = u.lon - lon;
          const double dy = u.lat - lat;
          const double d2 = dx * dx + dy * dy;
          if (d2 < best) {
            best = d2;
            value = u.value;
          }
        }
      }
      out.at(r, c) = static_cast<float>(value);
    }
  }
  return out;
}

TensorF cap_reflectivity(const TensorF& frame) {
  TensorF out = frame;
  for (auto& v : out.data) v = std::max(0.0f, v);
  return out;
}

FlashFrames rasterize_flashes(const std::vector<FlashEvent>& events,
                              const GridSpec& grid, std::int64_t epoch_hour) {
  grid.validate();
  FlashFrames out;
  out.occurrence = TensorF({grid.rows, grid.cols});
  out.flash_count = TensorF({grid.rows, grid.cols});
  out.flash_energy = TensorF({grid.rows, grid.cols});
  const std::int64_t lo = epoch_hour * 3600;
  const std::int64_t hi = lo + 3600;
  for (const auto& e : events) {
    if (e.epoch_second < lo || e.epoch_second >= hi) continue;
    std::int64_t r, c;
    if (!grid.locate(e.lat, e.lon, r, c)) {
      ++out.dropped;
      continue;
    }
    out.flash_count.at(r, c) += 1.0f;
    out.flash_energy.at(r, c) += static_cast<float>(e.energy);
  }
  for (std::size_t i = 0; i < out.occurrence.data.size(); ++i) {
    out.occurrence.data[i] = out.flash_count.data[i] > 0.0f ? 1.0f : 0.0f;
  }
  return out;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  cells.push_back(cur);
  return cells;
}

double parse_double(const std::string& s, const std::string& path, int line_no) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str()) {
    throw StorageError(path + ":" + std::to_string(line_no) +
                       ": bad number '" + s + "'");
  }
  return v;
}

std::ifstream open_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw StorageError("cannot read " + path);
  return in;
}

}  // namespace

std::int64_t parse_instant_iso(const std::string& iso) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
  const int n =
      std::sscanf(iso.c_str(), "%d-%d-%dT%d:%d:%d", &y, &mo, &d, &h, &mi, &s);
  if (n < 4 || mi < 0 || mi > 59 || s < 0 || s > 59) {
    throw ConfigError("bad timestamp: " + iso);
  }
  return parse_hour_iso(iso) * 3600 + mi * 60 + s;
}

std::vector<PointObservation> parse_point_csv(const std::string& path) {
  auto in = open_csv(path);
  std::vector<PointObservation> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line_no == 1 && line.rfind("lat", 0) == 0) continue;  // header
    const auto cells = split_csv_line(line);
    if (cells.size() != 3) {
      throw StorageError(path + ":" + std::to_string(line_no) +
                         ": expected lat,lon,value");
    }
    PointObservation p;
    p.lat = parse_double(cells[0], path, line_no);
    p.lon = parse_double(cells[1], path, line_no);
    if (cells[2].empty() || cells[2] == "nan") {
      p.missing = true;
    } else {
      p.value = parse_double(cells[2], path, line_no);
      p.missing = !std::isfinite(p.value);
    }
    out.push_back(p);
  }
  return out;
}

std::vector<FlashEvent> parse_flash_csv(const std::string& path) {
  auto in = open_csv(path);
  std::vector<FlashEvent> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line_no == 1 && line.rfind("lat", 0) == 0) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 4) {
      throw StorageError(path + ":" + std::to_string(line_no) +
                         ": expected lat,lon,energy,time");
    }
    FlashEvent e;
    e.lat = parse_double(cells[0], path, line_no);
    e.lon = parse_double(cells[1], path, line_no);
    e.energy = parse_double(cells[2], path, line_no);
    if (e.energy < 0.0) {
      throw StorageError(path + ":" + std::to_string(line_no) +
                         ": negative flash energy");
    }
    e.epoch_second = parse_instant_iso(cells[3]);
    out.push_back(e);
  }
  return out;
}

}  // namespace deeplight
