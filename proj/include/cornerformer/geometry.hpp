#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cornerformer/assignment.hpp"

namespace cornerformer {

// Pixel coordinates: origin top-left, x to the right, y downward.
struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

inline double distance(const Point& a, const Point& b) { return std::hypot(a.x - b.x, a.y - b.y); }

using Edge = std::pair<std::size_t, std::size_t>;
using Polygon = std::vector<Point>;

class GraphError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class InvalidEmbeddingError : public std::invalid_argument {
 public:
  InvalidEmbeddingError(const std::string& what, Edge a, Edge b)
      : std::invalid_argument(what), first(a), second(b) {}
  Edge first, second;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct PlanarGraph {
  int width = 0;
  int height = 0;
  std::vector<Point> corners;
  std::vector<Edge> edges;

  std::vector<std::vector<std::size_t>> adjacency() const {
    std::vector<std::vector<std::size_t>> adj(corners.size());
    for (auto [a, b] : edges) {
      adj[a].push_back(b);
      adj[b].push_back(a);
    }
    return adj;
  }

  bool has_edge(std::size_t a, std::size_t b) const {
    for (auto [u, v] : edges)
      if ((u == a && v == b) || (u == b && v == a)) return true;
    return false;
  }
};

// Throws GraphError on out-of-range or self-loop or duplicate edges, and on
// non-finite or out-of-bounds corners (bounds checked when width/height > 0).
inline void validate(const PlanarGraph& g) {
  for (std::size_t i = 0; i < g.corners.size(); ++i) {
    const auto& c = g.corners[i];
    if (!std::isfinite(c.x) || !std::isfinite(c.y))
      throw GraphError("corner " + std::to_string(i) + " has non-finite coordinates");
    if (g.width > 0 && g.height > 0 &&
        (c.x < 0 || c.y < 0 || c.x > g.width - 1 || c.y > g.height - 1))
      throw GraphError("corner " + std::to_string(i) + " lies outside the " +
                       std::to_string(g.width) + "x" + std::to_string(g.height) + " image");
  }
  std::set<Edge> seen;
  for (auto [a, b] : g.edges) {
    if (a >= g.corners.size() || b >= g.corners.size())
      throw GraphError("edge (" + std::to_string(a) + ", " + std::to_string(b) +
                       ") references a missing corner");
    if (a == b) throw GraphError("self-loop at corner " + std::to_string(a));
    if (!seen.insert({std::min(a, b), std::max(a, b)}).second)
      throw GraphError("duplicate edge (" + std::to_string(a) + ", " + std::to_string(b) + ")");
  }
}

// ---------------------------------------------------------------------------
// Candidate sets

struct CandidateSet {
  std::vector<Point> corners;           // corner list the pairs index into
  std::vector<Edge> pairs;              // length == capacity; padded slots hold (0, 0)
  std::vector<unsigned char> valid;     // 1 for real candidates
  std::vector<unsigned char> labels;    // 1 iff the pair is a ground-truth edge (training only)

  std::size_t capacity() const { return pairs.size(); }
  std::size_t size() const {
    return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), 1));
  }
};

// Every unordered pair (i < j) of the proposed corners, lexicographic order.
inline CandidateSet enumerate_candidates_inference(const std::vector<Point>& corners) {
  CandidateSet cs;
  cs.corners = corners;
  for (std::size_t i = 0; i < corners.size(); ++i)
    for (std::size_t j = i + 1; j < corners.size(); ++j) cs.pairs.emplace_back(i, j);
  cs.valid.assign(cs.pairs.size(), 1);
  cs.labels.assign(cs.pairs.size(), 0);
  return cs;
}

// Uniform integer in [0, n) by rejection; independent of the standard
// library's distribution implementations.
inline std::uint64_t uniform_index(std::mt19937_64& rng, std::uint64_t n) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t r;
  do {
    r = rng();
  } while (r >= limit);
  return r % n;
}

// Uniform double in [0, 1) from the top 53 bits.
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// One-to-one binding of predicted corners to ground-truth corners within
// `radius`; maximum cardinality, then least total distance. Pairs are
// (pred index, gt index).
inline std::vector<std::pair<std::size_t, std::size_t>> match_points(const std::vector<Point>& pred,
                                                                     const std::vector<Point>& gt,
                                                                     double radius) {
  return optimal_matching(pred.size(), gt.size(), [&](std::size_t i, std::size_t j) {
    const double d = distance(pred[i], gt[j]);
    return d <= radius ? d : -1.0;
  });
}

// Training candidate set: every GT edge expressed through the predicted
// corners matched to its endpoints (unmatched GT endpoints are appended with
// their GT coordinates), then uniformly sampled non-edge pairs without
// replacement until `capacity` is reached. Remaining slots are padding.
inline CandidateSet build_training_candidates(const std::vector<Point>& predicted,
                                              const PlanarGraph& gt, double match_radius,
                                              std::size_t capacity, std::mt19937_64& rng) {
  if (capacity < gt.edges.size())
    throw ConfigError("candidate capacity " + std::to_string(capacity) + " is smaller than the " +
                      std::to_string(gt.edges.size()) + " ground-truth edges");
  CandidateSet cs;
  cs.corners = predicted;
  std::vector<std::size_t> gt_to_list(gt.corners.size(), SIZE_MAX);
  for (auto [p, g] : match_points(predicted, gt.corners, match_radius)) gt_to_list[g] = p;
  for (std::size_t g = 0; g < gt.corners.size(); ++g)
    if (gt_to_list[g] == SIZE_MAX) {
      gt_to_list[g] = cs.corners.size();
      cs.corners.push_back(gt.corners[g]);
    }

  std::set<Edge> positive;
  for (auto [a, b] : gt.edges) {
    const std::size_t i = gt_to_list[a], j = gt_to_list[b];
    const Edge e{std::min(i, j), std::max(i, j)};
    if (positive.insert(e).second) {
      cs.pairs.push_back(e);
      cs.labels.push_back(1);
    }
  }

  std::vector<Edge> negatives;
  const std::size_t n = cs.corners.size();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (!positive.count({i, j})) negatives.emplace_back(i, j);
  const std::size_t want = std::min(capacity - cs.pairs.size(), negatives.size());
  for (std::size_t k = 0; k < want; ++k) {
    const std::size_t pick = k + static_cast<std::size_t>(uniform_index(rng, negatives.size() - k));
    std::swap(negatives[k], negatives[pick]);
    cs.pairs.push_back(negatives[k]);
    cs.labels.push_back(0);
  }
  cs.valid.assign(cs.pairs.size(), 1);
  while (cs.pairs.size() < capacity) {
    cs.pairs.emplace_back(0, 0);
    cs.labels.push_back(0);
    cs.valid.push_back(0);
  }
  return cs;
}

// ---------------------------------------------------------------------------
// Polygons

inline double polygon_area(const Polygon& poly) {
  if (poly.size() < 3) throw GraphError("polygon needs at least 3 vertices");
  double a = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const auto& p = poly[i];
    const auto& q = poly[(i + 1) % poly.size()];
    a += p.x * q.y - q.x * p.y;
  }
  return 0.5 * a;
}

// Even-odd fill sampled at pixel centers (j + 0.5, i + 0.5); row-major H x W.
inline std::vector<unsigned char> rasterize_region(const Polygon& poly, int height, int width) {
  if (poly.size() < 3) throw GraphError("polygon needs at least 3 vertices");
  std::vector<unsigned char> mask(static_cast<std::size_t>(height) * static_cast<std::size_t>(width), 0);
  std::vector<double> xs;
  for (int i = 0; i < height; ++i) {
    const double yc = i + 0.5;
    xs.clear();
    for (std::size_t k = 0; k < poly.size(); ++k) {
      const auto& p = poly[k];
      const auto& q = poly[(k + 1) % poly.size()];
      if ((p.y > yc) != (q.y > yc)) xs.push_back(p.x + (yc - p.y) * (q.x - p.x) / (q.y - p.y));
    }
    std::sort(xs.begin(), xs.end());
    for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
      const int j0 = std::max(0, static_cast<int>(std::ceil(xs[k] - 0.5)));
      const int j1 = std::min(width - 1, static_cast<int>(std::ceil(xs[k + 1] - 0.5)) - 1);
      for (int j = j0; j <= j1; ++j) mask[static_cast<std::size_t>(i) * width + j] = 1;
    }
  }
  return mask;
}

// ---------------------------------------------------------------------------
// Embedding checks and face extraction

namespace detail {

inline double orient(const Point& a, const Point& b, const Point& c) {
  return (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
}

inline bool on_segment(const Point& a, const Point& b, const Point& p) {
  return std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) && std::min(a.y, b.y) <= p.y &&
         p.y <= std::max(a.y, b.y);
}

// Two segments conflict unless they are disjoint or meet only at a shared
// endpoint without overlapping.
inline bool segments_conflict(const Point& a, const Point& b, const Point& c, const Point& d,
                              bool share_endpoint) {
  const double o1 = orient(a, b, c), o2 = orient(a, b, d), o3 = orient(c, d, a), o4 = orient(c, d, b);
  if (share_endpoint) {
    // Collinear and pointing the same way from the shared corner means overlap.
    if (o1 == 0 && o2 == 0) {
      const Point s = (a == c || a == d) ? a : b;
      const Point u = (s == a) ? b : a;
      const Point v = (s == c) ? d : c;
      return (u.x - s.x) * (v.x - s.x) + (u.y - s.y) * (v.y - s.y) > 0;
    }
    return false;
  }
  if (((o1 > 0 && o2 < 0) || (o1 < 0 && o2 > 0)) && ((o3 > 0 && o4 < 0) || (o3 < 0 && o4 > 0)))
    return true;
  return (o1 == 0 && on_segment(a, b, c)) || (o2 == 0 && on_segment(a, b, d)) ||
         (o3 == 0 && on_segment(c, d, a)) || (o4 == 0 && on_segment(c, d, b));
}

}  // namespace detail

// Throws InvalidEmbeddingError naming the first pair of edges that cross,
// overlap, or touch away from a shared endpoint.
inline void check_embedding(const PlanarGraph& g) {
  validate(g);
  for (std::size_t i = 0; i < g.edges.size(); ++i)
    for (std::size_t j = i + 1; j < g.edges.size(); ++j) {
      auto [a, b] = g.edges[i];
      auto [c, d] = g.edges[j];
      const bool share = a == c || a == d || b == c || b == d;
      if (detail::segments_conflict(g.corners[a], g.corners[b], g.corners[c], g.corners[d], share))
        throw InvalidEmbeddingError("edges (" + std::to_string(a) + "," + std::to_string(b) +
                                        ") and (" + std::to_string(c) + "," + std::to_string(d) +
                                        ") cross or overlap",
                                    g.edges[i], g.edges[j]);
    }
}

struct Region {
  std::vector<std::size_t> vertices;  // closed boundary walk, first vertex not repeated
  Polygon polygon;
  double area = 0.0;                  // positive for bounded faces
};

// Bounded faces of the straight-line embedding. Outgoing darts at each corner
// are sorted by angle; the walk leaves v along the dart just clockwise of the
// one it arrived by. Bounded faces come out with positive shoelace area; the
// outer boundary of every component comes out negative and tree-like walks
// have zero area, and both are dropped.
inline std::vector<Region> extract_regions(const PlanarGraph& g) {
  check_embedding(g);
  const std::size_t E = g.edges.size();
  std::vector<std::size_t> head(2 * E), tail(2 * E);
  for (std::size_t e = 0; e < E; ++e) {
    tail[2 * e] = g.edges[e].first;
    head[2 * e] = g.edges[e].second;
    tail[2 * e + 1] = g.edges[e].second;
    head[2 * e + 1] = g.edges[e].first;
  }
  std::vector<std::vector<std::size_t>> out(g.corners.size());
  for (std::size_t d = 0; d < 2 * E; ++d) out[tail[d]].push_back(d);
  std::vector<std::size_t> pos(2 * E);
  for (auto& darts : out) {
    std::sort(darts.begin(), darts.end(), [&](std::size_t a, std::size_t b) {
      const auto& o = g.corners[tail[a]];
      const double ta = std::atan2(g.corners[head[a]].y - o.y, g.corners[head[a]].x - o.x);
      const double tb = std::atan2(g.corners[head[b]].y - o.y, g.corners[head[b]].x - o.x);
      if (ta != tb) return ta < tb;
      return head[a] < head[b];
    });
    for (std::size_t i = 0; i < darts.size(); ++i) pos[darts[i]] = i;
  }
  auto next = [&](std::size_t d) {
    const std::size_t twin = d ^ 1u;
    const auto& darts = out[head[d]];
    return darts[(pos[twin] + darts.size() - 1) % darts.size()];
  };

  double scale = 1.0;
  for (const auto& c : g.corners) scale = std::max({scale, std::abs(c.x), std::abs(c.y)});
  const double eps = 1e-9 * scale * scale;

  std::vector<Region> regions;
  std::vector<char> used(2 * E, 0);
  for (std::size_t start = 0; start < 2 * E; ++start) {
    if (used[start]) continue;
    Region r;
    std::size_t d = start;
    do {
      used[d] = 1;
      r.vertices.push_back(tail[d]);
      r.polygon.push_back(g.corners[tail[d]]);
      d = next(d);
    } while (d != start);
    if (r.polygon.size() < 3) continue;
    r.area = polygon_area(r.polygon);
    if (r.area > eps) regions.push_back(std::move(r));
  }
  return regions;
}

}  // namespace cornerformer
