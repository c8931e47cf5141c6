#pragma once

// Direction-aware corner targets and their decoding.
//
// A corner is splatted into one confidence channel per direction its incident
// edges leave it in. The two endpoints of a short edge land in opposite
// channels, which is what lets decoding keep them apart even when they sit
// closer than the clustering radius.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <vector>

#include "cornerformer/geometry.hpp"

namespace cornerformer {

enum class Direction : std::uint8_t { Up = 0, Down = 1, Left = 2, Right = 3 };
inline constexpr std::size_t kDirections = 4;

using DirectionSet = std::uint8_t;  // bit k set <=> Direction(k) present

inline constexpr DirectionSet bit(Direction d) { return static_cast<DirectionSet>(1u << static_cast<unsigned>(d)); }
inline constexpr bool contains(DirectionSet s, Direction d) { return (s & bit(d)) != 0; }

inline constexpr Direction opposite(Direction d) {
  switch (d) {
    case Direction::Up: return Direction::Down;
    case Direction::Down: return Direction::Up;
    case Direction::Left: return Direction::Right;
    default: return Direction::Left;
  }
}

inline const char* direction_name(Direction d) {
  static constexpr const char* names[] = {"up", "down", "left", "right"};
  return names[static_cast<unsigned>(d)];
}

// Angular bin of the ray (dx, dy) in image coordinates, using the angle
// atan2(-dy, dx): right [-45, 45), up [45, 135), left [135, 225), down
// [225, 315). Evaluated with exact comparisons so 45-degree rays bin stably.
inline Direction ray_direction(double dx, double dy) {
  const double u = dx, v = -dy;
  if (u > 0 && -u <= v && v < u) return Direction::Right;
  if (v > 0 && -v < u && u <= v) return Direction::Up;
  if (u < 0 && u < v && v <= -u) return Direction::Left;
  return Direction::Down;
}

// Union of ray directions of the edges incident to corner i. Empty for an
// isolated corner.
inline DirectionSet direction_bins(const PlanarGraph& g, std::size_t i) {
  DirectionSet s = 0;
  for (auto [a, b] : g.edges) {
    if (a != i && b != i) continue;
    const auto& p = g.corners[i];
    const auto& q = g.corners[a == i ? b : a];
    s |= bit(ray_direction(q.x - p.x, q.y - p.y));
  }
  return s;
}

struct DirectionHeatmap {
  int height = 0;
  int width = 0;
  std::vector<double> confidence;  // H x W x 4, channel order up, down, left, right
  std::vector<double> seg;         // H x W

  double at(int y, int x, Direction d) const {
    return confidence[(static_cast<std::size_t>(y) * width + x) * kDirections + static_cast<unsigned>(d)];
  }
};

struct CornerDetection {
  Point position;
  double score = 0.0;
  DirectionSet directions = 0;
};

// The literal isotropic Gaussian density, peak 1 / (2 pi sigma^2).
inline double gaussian_density(double dx, double dy, double sigma) {
  return std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma)) / (2 * std::numbers::pi * sigma * sigma);
}

// The same bump rescaled so its peak is exactly 1.
inline double gaussian_peak1(double dx, double dy, double sigma) {
  return std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
}

// Pixels whose center (x = column, y = row) lies within `radius` of segment
// ab, written as 1 into `mask`. Each row's covered span is solved in closed
// form as the union of the two end disks and the slab around the segment.
inline void draw_segment(std::vector<double>& mask, int height, int width, const Point& a,
                         const Point& b, double radius) {
  constexpr double tol = 1e-9;
  const double r = radius + tol;
  const int y0 = std::max(0, static_cast<int>(std::ceil(std::min(a.y, b.y) - r)));
  const int y1 = std::min(height - 1, static_cast<int>(std::floor(std::max(a.y, b.y) + r)));
  const double dx = b.x - a.x, dy = b.y - a.y, len2 = dx * dx + dy * dy, len = std::sqrt(len2);
  for (int y = y0; y <= y1; ++y) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const Point& c : {a, b}) {
      const double h = r * r - (y - c.y) * (y - c.y);
      if (h >= 0) {
        lo = std::min(lo, c.x - std::sqrt(h));
        hi = std::max(hi, c.x + std::sqrt(h));
      }
    }
    if (len2 > 0) {
      // Projection parameter t in [0, 1] and perpendicular distance <= r,
      // both linear in x along this row.
      double slo = -std::numeric_limits<double>::infinity(), shi = -slo;
      auto clip = [&](double coef, double off, double bound_lo, double bound_hi) {
        // bound_lo <= coef * x + off <= bound_hi
        if (coef == 0) {
          if (off < bound_lo || off > bound_hi) slo = 1, shi = 0;
          return;
        }
        double l = (bound_lo - off) / coef, h = (bound_hi - off) / coef;
        if (l > h) std::swap(l, h);
        slo = std::max(slo, l);
        shi = std::min(shi, h);
      };
      const double ry = y - a.y;
      clip(dx, ry * dy - a.x * dx, 0.0, len2);               // (x - ax) dx + ry dy in [0, len2]
      clip(dy, -a.x * dy - ry * dx, -r * len, r * len);      // (x - ax) dy - ry dx in [-r len, r len]
      if (slo <= shi) {
        lo = std::min(lo, slo);
        hi = std::max(hi, shi);
      }
    }
    if (lo > hi) continue;
    const int x0 = std::max(0, static_cast<int>(std::ceil(lo)));
    const int x1 = std::min(width - 1, static_cast<int>(std::floor(hi)));
    for (int x = x0; x <= x1; ++x) mask[static_cast<std::size_t>(y) * width + x] = 1.0;
  }
}

struct EncodeOptions {
  double sigma = 2.0;
  double seg_width = 3.0;
};

// Training targets for a graph: per (corner, direction) a peak-normalized
// Gaussian centered on the corner's nearest pixel, combined by max; plus a
// binary mask of all edges drawn seg_width pixels wide.
inline DirectionHeatmap encode(const PlanarGraph& g, int height, int width,
                               const EncodeOptions& opt = {}) {
  PlanarGraph bounded = g;
  bounded.width = width;
  bounded.height = height;
  validate(bounded);
  DirectionHeatmap h;
  h.height = height;
  h.width = width;
  h.confidence.assign(static_cast<std::size_t>(height) * width * kDirections, 0.0);
  h.seg.assign(static_cast<std::size_t>(height) * width, 0.0);
  const int reach = static_cast<int>(std::ceil(4 * opt.sigma));
  for (std::size_t i = 0; i < g.corners.size(); ++i) {
    const DirectionSet dirs = direction_bins(g, i);
    if (!dirs) continue;
    const int cx = static_cast<int>(std::lround(g.corners[i].x));
    const int cy = static_cast<int>(std::lround(g.corners[i].y));
    for (int y = std::max(0, cy - reach); y <= std::min(height - 1, cy + reach); ++y)
      for (int x = std::max(0, cx - reach); x <= std::min(width - 1, cx + reach); ++x) {
        const double v = gaussian_peak1(x - cx, y - cy, opt.sigma);
        for (unsigned d = 0; d < kDirections; ++d) {
          if (!(dirs & (1u << d))) continue;
          double& slot = h.confidence[(static_cast<std::size_t>(y) * width + x) * kDirections + d];
          slot = std::max(slot, v);
        }
      }
  }
  for (auto [a, b] : g.edges) draw_segment(h.seg, height, width, g.corners[a], g.corners[b], opt.seg_width / 2);
  return h;
}

// ---------------------------------------------------------------------------
// Decoding

struct Peak {
  Point position;
  double score = 0.0;
  Direction channel = Direction::Up;
};

// 3x3 local maxima with value >= threshold in one channel of an interleaved
// H x W x stride buffer. A pixel must beat later neighbors (raster order)
// strictly and earlier ones non-strictly, so a flat plateau yields one peak.
inline std::vector<Peak> find_peaks(const std::vector<double>& buf, int height, int width,
                                    std::size_t stride, std::size_t channel, double threshold,
                                    Direction tag) {
  std::vector<Peak> peaks;
  auto at = [&](int y, int x) { return buf[(static_cast<std::size_t>(y) * width + x) * stride + channel]; };
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double v = at(y, x);
      if (!(v >= threshold)) continue;
      bool keep = true;
      for (int dy = -1; dy <= 1 && keep; ++dy)
        for (int dx = -1; dx <= 1 && keep; ++dx) {
          if (!dx && !dy) continue;
          const int yy = y + dy, xx = x + dx;
          if (yy < 0 || xx < 0 || yy >= height || xx >= width) continue;
          const bool earlier = dy < 0 || (dy == 0 && dx < 0);
          const double n = at(yy, xx);
          keep = earlier ? v >= n : v > n;
        }
      if (keep) peaks.push_back({{static_cast<double>(x), static_cast<double>(y)}, v, tag});
    }
  return peaks;
}

// True when a and b look like the two ends of a short edge: opposite channels,
// and each one's channel direction points at the other.
inline bool tiny_edge_pair(const Peak& a, const Peak& b) {
  if (opposite(a.channel) != b.channel) return false;
  const double dx = b.position.x - a.position.x, dy = b.position.y - a.position.y;
  if (dx == 0 && dy == 0) return false;
  return ray_direction(dx, dy) == a.channel && ray_direction(-dx, -dy) == b.channel;
}

struct ClusterOptions {
  double radius = 5.0;           // L
  bool respect_directions = true;
};

// Agglomerative clustering: repeatedly merge the two closest clusters whose
// score-weighted centroids lie within `radius`, skipping pairs that would put
// the two ends of a short edge together. Each cluster becomes one detection at
// its weighted centroid with the max member score and union of channels.
inline std::vector<CornerDetection> cluster_peaks(std::vector<Peak> peaks, const ClusterOptions& opt) {
  struct Cluster {
    std::vector<std::size_t> members;
    double wx = 0, wy = 0, w = 0;
    Point centroid() const { return {wx / w, wy / w}; }
  };
  std::vector<Cluster> cl;
  for (std::size_t i = 0; i < peaks.size(); ++i) {
    const auto& p = peaks[i];
    const double w = std::max(p.score, 1e-12);
    cl.push_back({{i}, w * p.position.x, w * p.position.y, w});
  }
  auto compatible = [&](const Cluster& a, const Cluster& b) {
    if (!opt.respect_directions) return true;
    for (auto i : a.members)
      for (auto j : b.members)
        if (tiny_edge_pair(peaks[i], peaks[j])) return false;
    return true;
  };
  for (;;) {
    double best = opt.radius;
    std::size_t bi = SIZE_MAX, bj = SIZE_MAX;
    for (std::size_t i = 0; i < cl.size(); ++i)
      for (std::size_t j = i + 1; j < cl.size(); ++j) {
        const double d = distance(cl[i].centroid(), cl[j].centroid());
        if (d < best && compatible(cl[i], cl[j])) {
          best = d;
          bi = i;
          bj = j;
        }
      }
    if (bi == SIZE_MAX) break;
    auto& a = cl[bi];
    auto& b = cl[bj];
    a.members.insert(a.members.end(), b.members.begin(), b.members.end());
    a.wx += b.wx;
    a.wy += b.wy;
    a.w += b.w;
    cl.erase(cl.begin() + static_cast<std::ptrdiff_t>(bj));
  }
  std::vector<CornerDetection> out;
  for (const auto& c : cl) {
    CornerDetection d;
    d.position = c.centroid();
    for (auto i : c.members) {
      d.score = std::max(d.score, peaks[i].score);
      d.directions |= bit(peaks[i].channel);
    }
    out.push_back(d);
  }
  return out;
}

struct DecodeOptions {
  double threshold = 0.5;
  double cluster_radius = 5.0;
  std::size_t max_peaks = 256;  // strongest peaks kept before clustering
};

// Per-channel NMS, then direction-aware clustering across channels.
inline std::vector<CornerDetection> decode(const DirectionHeatmap& h, const DecodeOptions& opt = {}) {
  std::vector<Peak> peaks;
  for (std::size_t c = 0; c < kDirections; ++c) {
    auto p = find_peaks(h.confidence, h.height, h.width, kDirections, c, opt.threshold,
                        static_cast<Direction>(c));
    peaks.insert(peaks.end(), p.begin(), p.end());
  }
  std::stable_sort(peaks.begin(), peaks.end(), [](const Peak& a, const Peak& b) { return a.score > b.score; });
  if (peaks.size() > opt.max_peaks) peaks.resize(opt.max_peaks);
  return cluster_peaks(std::move(peaks), {opt.cluster_radius, true});
}

inline std::vector<Point> positions(const std::vector<CornerDetection>& dets) {
  std::vector<Point> out;
  out.reserve(dets.size());
  for (const auto& d : dets) out.push_back(d.position);
  return out;
}

struct RoundTripReport {
  std::vector<double> nearest;  // per GT corner: distance to the closest detection (inf if none)
  std::size_t detections = 0;
  std::size_t matched = 0;
  std::size_t unmatched_gt = 0;
  std::size_t unmatched_pred = 0;
  double precision = 0.0;
  double recall = 0.0;
};

// decode(encode(g)) scored against g's corners (one-to-one within tolerance).
// Isolated corners are not encoded and are excluded from the count.
inline RoundTripReport roundtrip_check(const PlanarGraph& g, int height, int width,
                                       double tolerance = 2.0, const EncodeOptions& enc = {},
                                       const DecodeOptions& dec = {}) {
  std::vector<Point> gt;
  for (std::size_t i = 0; i < g.corners.size(); ++i)
    if (direction_bins(g, i)) gt.push_back(g.corners[i]);
  const auto dets = positions(decode(encode(g, height, width, enc), dec));
  RoundTripReport r;
  r.detections = dets.size();
  for (const auto& c : gt) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& d : dets) best = std::min(best, distance(c, d));
    r.nearest.push_back(best);
  }
  r.matched = match_points(dets, gt, tolerance).size();
  r.unmatched_gt = gt.size() - r.matched;
  r.unmatched_pred = dets.size() - r.matched;
  r.precision = dets.empty() ? (gt.empty() ? 1.0 : 0.0) : static_cast<double>(r.matched) / dets.size();
  r.recall = gt.empty() ? 1.0 : static_cast<double>(r.matched) / gt.size();
  return r;
}

}  // namespace cornerformer
