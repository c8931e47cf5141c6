#pragma once

// Procedural stand-in for aerial building imagery: rectilinear footprints with
// dark outlines on a textured ground, plus strokes and blobs that are not part
// of the annotation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cornerformer/geometry.hpp"
#include "cornerformer/heatmap.hpp"
#include "cornerformer/image.hpp"

namespace cornerformer {

struct Sample {
  Image image;
  PlanarGraph graph;
};

inline constexpr int kBorderMargin = 4;
inline constexpr double kTinyEdgeMax = 6.0;

namespace detail {

struct Box {
  int x0, y0, x1, y1;
  int w() const { return x1 - x0; }
  int h() const { return y1 - y0; }
};

inline int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  if (hi < lo) return lo;
  return lo + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(hi - lo + 1)));
}

inline double gaussian(std::mt19937_64& rng) {
  const double u1 = std::max(uniform01(rng), 1e-300);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2 * std::numbers::pi * u2);
}

// Appends a closed polygon to the graph and returns the index of its first corner.
inline std::size_t add_ring(PlanarGraph& g, const std::vector<Point>& ring) {
  const std::size_t base = g.corners.size();
  for (const auto& p : ring) g.corners.push_back(p);
  for (std::size_t i = 0; i < ring.size(); ++i) g.edges.emplace_back(base + i, base + (i + 1) % ring.size());
  return base;
}

inline Point P(int x, int y) { return {static_cast<double>(x), static_cast<double>(y)}; }

// Splits the drawable area into 1..3 cells by guillotine cuts.
inline std::vector<Box> layout(std::mt19937_64& rng, Box area, int count) {
  std::vector<Box> cells{area};
  constexpr int kMin = 22;
  while (static_cast<int>(cells.size()) < count) {
    std::size_t k = 0;
    for (std::size_t i = 1; i < cells.size(); ++i)
      if (cells[i].w() * cells[i].h() > cells[k].w() * cells[k].h()) k = i;
    Box b = cells[k];
    const bool vertical = b.w() > b.h() || (b.w() == b.h() && uniform01(rng) < 0.5);
    const int span = vertical ? b.w() : b.h();
    if (span < 2 * kMin) break;
    const int cut = uniform_int(rng, kMin, span - kMin);
    Box a = b, c = b;
    if (vertical) {
      a.x1 = b.x0 + cut;
      c.x0 = b.x0 + cut;
    } else {
      a.y1 = b.y0 + cut;
      c.y0 = b.y0 + cut;
    }
    cells[k] = a;
    cells.push_back(c);
  }
  return cells;
}

// One footprint inside `cell` (corners keep a 3 px gap to the cell walls).
inline void add_shape(PlanarGraph& g, std::mt19937_64& rng, const Box& cell, int difficulty, bool notch = false) {
  const int gap = 3;
  const int maxw = cell.w() - 2 * gap, maxh = cell.h() - 2 * gap;
  const int w = uniform_int(rng, std::min(notch ? 16 : 12, maxw), maxw);
  const int h = uniform_int(rng, std::min(12, maxh), maxh);
  const int x0 = uniform_int(rng, cell.x0 + gap, cell.x1 - gap - w);
  const int y0 = uniform_int(rng, cell.y0 + gap, cell.y1 - gap - h);
  const int x1 = x0 + w, y1 = y0 + h;
  if (difficulty == 0) {
    add_ring(g, {P(x0, y0), P(x1, y0), P(x1, y1), P(x0, y1)});
    return;
  }
  std::vector<int> kinds = {0, 1, 2};  // rectangle, split rectangle, L-shape
  if (difficulty >= 2) kinds.push_back(3);  // notched rectangle
  int kind = notch ? 3 : kinds[uniform_index(rng, kinds.size())];
  if (kind == 1 && w < 16 && h < 16) kind = 0;
  if (kind == 2 && (w < 14 || h < 14)) kind = 0;
  if (kind == 3 && w < 16) kind = 0;
  switch (kind) {
    case 0:
      add_ring(g, {P(x0, y0), P(x1, y0), P(x1, y1), P(x0, y1)});
      break;
    case 1: {  // two footprints sharing a wall
      if (w >= h) {
        const int xm = uniform_int(rng, x0 + 7, x1 - 7);
        const auto b = add_ring(g, {P(x0, y0), P(xm, y0), P(x1, y0), P(x1, y1), P(xm, y1), P(x0, y1)});
        g.edges.emplace_back(b + 1, b + 4);
      } else {
        const int ym = uniform_int(rng, y0 + 7, y1 - 7);
        const auto b = add_ring(g, {P(x0, y0), P(x1, y0), P(x1, ym), P(x1, y1), P(x0, y1), P(x0, ym)});
        g.edges.emplace_back(b + 2, b + 5);
      }
      break;
    }
    case 2: {  // L-shape: one corner cut away
      const int cx = uniform_int(rng, 7, w - 7), cy = uniform_int(rng, 7, h - 7);
      switch (uniform_index(rng, 4)) {
        case 0: add_ring(g, {P(x0, y0 + cy), P(x0 + cx, y0 + cy), P(x0 + cx, y0), P(x1, y0), P(x1, y1), P(x0, y1)}); break;
        case 1: add_ring(g, {P(x0, y0), P(x1 - cx, y0), P(x1 - cx, y0 + cy), P(x1, y0 + cy), P(x1, y1), P(x0, y1)}); break;
        case 2: add_ring(g, {P(x0, y0), P(x1, y0), P(x1, y1 - cy), P(x1 - cx, y1 - cy), P(x1 - cx, y1), P(x0, y1)}); break;
        default: add_ring(g, {P(x0, y0), P(x1, y0), P(x1, y1), P(x0 + cx, y1), P(x0 + cx, y1 - cy), P(x0, y1 - cy)}); break;
      }
      break;
    }
    default: {  // notch of depth 3..6 px into the top or bottom wall
      const int depth = uniform_int(rng, 3, std::min(6, h - 6));
      const int nw = uniform_int(rng, 6, std::min(12, w - 10));
      const int nx = uniform_int(rng, x0 + 5, x1 - 5 - nw);
      if (uniform01(rng) < 0.5)
        add_ring(g, {P(x0, y0), P(nx, y0), P(nx, y0 + depth), P(nx + nw, y0 + depth), P(nx + nw, y0), P(x1, y0),
                     P(x1, y1), P(x0, y1)});
      else
        add_ring(g, {P(x0, y0), P(x1, y0), P(x1, y1), P(nx + nw, y1), P(nx + nw, y1 - depth), P(nx, y1 - depth),
                     P(nx, y1), P(x0, y1)});
      break;
    }
  }
}

inline void blend(Image& img, const std::vector<double>& mask, double value, double alpha) {
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] <= 0) continue;
    for (int c = 0; c < 3; ++c) {
      auto& px = img.rgb[i * 3 + c];
      px = static_cast<std::uint8_t>(std::clamp(std::lround(px * (1 - alpha) + value * alpha), 0L, 255L));
    }
  }
}

}  // namespace detail

// A pure function of (seed, height, width, difficulty).
inline Sample generate_sample(std::uint64_t seed, int height, int width, int difficulty) {
  if (height < 64 || width < 64) throw ConfigError("synthetic images must be at least 64x64");
  if (difficulty < 0 || difficulty > 2) throw ConfigError("difficulty must be 0, 1 or 2");
  std::mt19937_64 rng(seed);
  Sample s;
  auto& g = s.graph;
  g.width = width;
  g.height = height;

  const detail::Box area{kBorderMargin - 3, kBorderMargin - 3, width - 1 - kBorderMargin + 3,
                         height - 1 - kBorderMargin + 3};
  const int count = difficulty == 0 ? 1 : detail::uniform_int(rng, 1, 3);
  const auto cells = detail::layout(rng, area, count);
  // difficulty 2 always carries at least one notch (tiny edges)
  for (std::size_t k = 0; k < cells.size(); ++k) detail::add_shape(g, rng, cells[k], difficulty, difficulty == 2 && k == 0);

  // ground: tinted gray with a low-frequency pattern
  const double base = 150 + 50 * uniform01(rng);
  const double tint[3] = {1.0 + 0.06 * (uniform01(rng) - 0.5), 1.0 + 0.06 * (uniform01(rng) - 0.5),
                          1.0 + 0.06 * (uniform01(rng) - 0.5)};
  const double fx = 0.05 + 0.2 * uniform01(rng), fy = 0.05 + 0.2 * uniform01(rng);
  const double phase = 2 * std::numbers::pi * uniform01(rng);
  s.image = Image(width, height);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double v = base + 12 * std::sin(fx * x + fy * y + phase);
      for (int c = 0; c < 3; ++c)
        s.image.px(x, y)[c] = static_cast<std::uint8_t>(std::clamp(std::lround(v * tint[c]), 0L, 255L));
    }

  auto stroke_mask = [&](const Point& a, const Point& b, double radius) {
    std::vector<double> m(static_cast<std::size_t>(width) * height, 0.0);
    draw_segment(m, height, width, a, b, radius);
    return m;
  };

  // distractors first so target outlines stay on top
  if (difficulty >= 1) {
    const int strokes = detail::uniform_int(rng, 1, 3);
    for (int k = 0; k < strokes; ++k) {
      const Point a{uniform01(rng) * (width - 1), uniform01(rng) * (height - 1)};
      const double ang = 2 * std::numbers::pi * uniform01(rng), len = 8 + 20 * uniform01(rng);
      const Point b{std::clamp(a.x + len * std::cos(ang), 0.0, width - 1.0),
                    std::clamp(a.y + len * std::sin(ang), 0.0, height - 1.0)};
      const double radius = 0.5 * detail::uniform_int(rng, 1, 3);
      detail::blend(s.image, stroke_mask(a, b, radius), 40 + 80 * uniform01(rng), 0.8);
    }
    const int blobs = detail::uniform_int(rng, 0, 2);
    for (int k = 0; k < blobs; ++k) {
      const Point c{uniform01(rng) * (width - 1), uniform01(rng) * (height - 1)};
      detail::blend(s.image, stroke_mask(c, c, 2 + 3 * uniform01(rng)), 60 + 120 * uniform01(rng), 0.7);
    }
  }

  // roof fill per bounded face, then dark outlines
  for (const auto& r : extract_regions(g)) {
    auto fill = rasterize_region(r.polygon, height, width);
    std::vector<double> m(fill.begin(), fill.end());
    detail::blend(s.image, m, 90 + 140 * uniform01(rng), 0.85);
  }
  for (auto [a, b] : g.edges)
    detail::blend(s.image, stroke_mask(g.corners[a], g.corners[b], 1.0), 20 + 20 * uniform01(rng), 1.0);

  for (auto& px : s.image.rgb)
    px = static_cast<std::uint8_t>(std::clamp(std::lround(px + 8.0 * detail::gaussian(rng)), 0L, 255L));
  return s;
}

inline std::size_t count_tiny_edges(const PlanarGraph& g, double max_length = kTinyEdgeMax) {
  std::size_t n = 0;
  for (auto [a, b] : g.edges) n += distance(g.corners[a], g.corners[b]) <= max_length;
  return n;
}

// ---- annotation JSON ------------------------------------------------------

inline nlohmann::json graph_to_json(const PlanarGraph& g) {
  nlohmann::json j;
  j["width"] = g.width;
  j["height"] = g.height;
  j["corners"] = nlohmann::json::array();
  for (const auto& c : g.corners) j["corners"].push_back({c.x, c.y});
  j["edges"] = nlohmann::json::array();
  for (auto [a, b] : g.edges) j["edges"].push_back({a, b});
  return j;
}

// Throws DataError prefixed with `source` on any schema or graph violation.
inline PlanarGraph graph_from_json(const nlohmann::json& j, const std::string& source) {
  auto fail = [&](const std::string& msg) -> DataError { return DataError(source + ": " + msg); };
  if (!j.is_object()) throw fail("annotation must be a JSON object");
  for (const char* key : {"width", "height", "corners", "edges"})
    if (!j.contains(key)) throw fail(std::string("missing field '") + key + "'");
  if (!j["width"].is_number_integer() || !j["height"].is_number_integer())
    throw fail("'width' and 'height' must be integers");
  if (!j["corners"].is_array() || !j["edges"].is_array()) throw fail("'corners' and 'edges' must be arrays");
  PlanarGraph g;
  g.width = j["width"].get<int>();
  g.height = j["height"].get<int>();
  if (g.width <= 0 || g.height <= 0) throw fail("image size must be positive");
  for (const auto& c : j["corners"]) {
    if (!c.is_array() || c.size() != 2 || !c[0].is_number() || !c[1].is_number())
      throw fail("each corner must be [x, y]");
    g.corners.push_back({c[0].get<double>(), c[1].get<double>()});
  }
  for (const auto& e : j["edges"]) {
    if (!e.is_array() || e.size() != 2 || !e[0].is_number_integer() || !e[1].is_number_integer())
      throw fail("each edge must be [i, j] with integer indices");
    const auto a = e[0].get<long long>(), b = e[1].get<long long>();
    if (a < 0 || b < 0 || a >= static_cast<long long>(g.corners.size()) ||
        b >= static_cast<long long>(g.corners.size()))
      throw fail("edge [" + std::to_string(a) + ", " + std::to_string(b) + "] index out of range (" +
                 std::to_string(g.corners.size()) + " corners)");
    g.edges.emplace_back(static_cast<std::size_t>(a), static_cast<std::size_t>(b));
  }
  try {
    validate(g);
  } catch (const GraphError& e) {
    throw fail(e.what());
  }
  return g;
}

inline PlanarGraph read_graph_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open annotation " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": malformed JSON: " + e.what());
  }
  return graph_from_json(j, path);
}

inline void write_graph_json(const std::string& path, const PlanarGraph& g) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path);
  f << graph_to_json(g).dump() << "\n";
}

// ---- dataset directories --------------------------------------------------

struct Dataset {
  std::vector<Sample> samples;
  std::vector<std::string> stems;
  std::vector<std::string> warnings;
};

inline std::string sample_stem(std::size_t i) {
  std::ostringstream os;
  os << std::setw(5) << std::setfill('0') << i;
  return os.str();
}

inline void save_dataset(const std::string& dir, const std::vector<Sample>& samples) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto stem = (std::filesystem::path(dir) / sample_stem(i)).string();
    write_png(stem + ".png", samples[i].image);
    write_graph_json(stem + ".json", samples[i].graph);
  }
}

// Pairs NNNNN.png with NNNNN.json in stem order.
inline Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw DataError("dataset directory not found: " + dir);
  std::vector<std::string> stems;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto ext = entry.path().extension().string();
    if (ext != ".png" && ext != ".json") continue;
    if (entry.path().filename() == "manifest.json") continue;  // written by the synth command
    stems.push_back(entry.path().stem().string());
  }
  std::sort(stems.begin(), stems.end());
  stems.erase(std::unique(stems.begin(), stems.end()), stems.end());
  Dataset ds;
  if (stems.empty()) ds.warnings.push_back("dataset directory " + dir + " contains no samples");
  for (const auto& stem : stems) {
    const auto base = fs::path(dir) / stem;
    const auto png = base.string() + ".png", json = base.string() + ".json";
    if (!fs::exists(png)) throw DataError(json + ": no matching image " + png);
    if (!fs::exists(json)) throw DataError(png + ": no matching annotation " + json);
    Sample s{read_png(png), read_graph_json(json)};
    if (s.image.width != s.graph.width || s.image.height != s.graph.height)
      throw DataError(json + ": annotation size " + std::to_string(s.graph.width) + "x" +
                      std::to_string(s.graph.height) + " does not match image " + std::to_string(s.image.width) +
                      "x" + std::to_string(s.image.height));
    ds.samples.push_back(std::move(s));
    ds.stems.push_back(stem);
  }
  return ds;
}

inline std::vector<Sample> generate_dataset(std::uint64_t seed, std::size_t n, int size, int difficulty) {
  std::vector<Sample> out;
  std::mt19937_64 seeds(seed);
  for (std::size_t i = 0; i < n; ++i) out.push_back(generate_sample(seeds(), size, size, difficulty));
  return out;
}

}  // namespace cornerformer
