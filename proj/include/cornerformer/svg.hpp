#pragma once

// SVG renderings: prediction overlays and per-corner layer-weight grids.
//
// Palette: up #e6194b, down #4363d8, left #3cb44b, right #f58231,
// edges #ffe119, regions #42d4f4 at 30% opacity.

#include <algorithm>
#include <cstdio>
#include <string>
#include <vector>

#include "cornerformer/geometry.hpp"
#include "cornerformer/heatmap.hpp"

namespace cornerformer {

inline const char* direction_color(Direction d) {
  switch (d) {
    case Direction::Up: return "#e6194b";
    case Direction::Down: return "#4363d8";
    case Direction::Left: return "#3cb44b";
    case Direction::Right: return "#f58231";
  }
  return "#000000";
}

inline constexpr const char* kEdgeColor = "#ffe119";
inline constexpr const char* kRegionColor = "#42d4f4";

namespace detail {

inline std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

inline std::string num(double v) { return fmt("%.2f", v); }

}  // namespace detail

// `image_href` may be empty; otherwise the image is referenced underneath.
// Corners carry one colored tick per direction in `dirs` (same order as
// graph corners; may be empty).
inline std::string render_overlay_svg(const PlanarGraph& g, const std::vector<DirectionSet>& dirs,
                                      const std::string& image_href, double scale = 8.0) {
  using detail::num;
  const double W = g.width * scale, H = g.height * scale;
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" xmlns:xlink=\"http://www.w3.org/1999/xlink\" width=\"" +
                  num(W) + "\" height=\"" + num(H) + "\" viewBox=\"0 0 " + num(W) + " " + num(H) + "\">\n";
  if (!image_href.empty())
    s += "  <image href=\"" + image_href + "\" x=\"0\" y=\"0\" width=\"" + num(W) + "\" height=\"" + num(H) +
         "\" style=\"image-rendering:pixelated\"/>\n";
  auto px = [&](const Point& p) { return Point{(p.x + 0.5) * scale, (p.y + 0.5) * scale}; };
  std::vector<Region> regions;
  try {
    regions = extract_regions(g);
  } catch (const InvalidEmbeddingError&) {
  }
  for (const auto& r : regions) {
    s += "  <polygon fill=\"" + std::string(kRegionColor) + "\" fill-opacity=\"0.3\" points=\"";
    for (const auto& p : r.polygon) s += num(px(p).x) + "," + num(px(p).y) + " ";
    s += "\"/>\n";
  }
  for (auto [a, b] : g.edges) {
    const auto p = px(g.corners[a]), q = px(g.corners[b]);
    s += "  <line x1=\"" + num(p.x) + "\" y1=\"" + num(p.y) + "\" x2=\"" + num(q.x) + "\" y2=\"" + num(q.y) +
         "\" stroke=\"" + kEdgeColor + "\" stroke-width=\"" + num(scale * 0.4) + "\"/>\n";
  }
  const double tick = scale * 1.2;
  for (std::size_t i = 0; i < g.corners.size(); ++i) {
    const auto c = px(g.corners[i]);
    if (i < dirs.size())
      for (Direction d : {Direction::Up, Direction::Down, Direction::Left, Direction::Right}) {
        if (!contains(dirs[i], d)) continue;
        const double dx = d == Direction::Left ? -tick : d == Direction::Right ? tick : 0;
        const double dy = d == Direction::Up ? -tick : d == Direction::Down ? tick : 0;
        s += "  <line x1=\"" + num(c.x) + "\" y1=\"" + num(c.y) + "\" x2=\"" + num(c.x + dx) + "\" y2=\"" +
             num(c.y + dy) + "\" stroke=\"" + direction_color(d) + "\" stroke-width=\"" + num(scale * 0.35) +
             "\"/>\n";
      }
    s += "  <circle cx=\"" + num(c.x) + "\" cy=\"" + num(c.y) + "\" r=\"" + num(scale * 0.45) +
         "\" fill=\"#ffffff\" stroke=\"#000000\" stroke-width=\"1\"/>\n";
  }
  s += "</svg>\n";
  return s;
}

// Averages groups of adjacent channels: N x 3 x C weights -> N x 3 x groups.
inline std::vector<std::vector<std::vector<double>>> merge_channel_groups(const std::vector<double>& weights,
                                                                           std::size_t n, std::size_t layers,
                                                                           std::size_t channels, std::size_t groups) {
  if (groups == 0 || channels % groups)
    throw std::invalid_argument("cannot merge " + std::to_string(channels) + " channels into " +
                                std::to_string(groups) + " groups");
  const std::size_t per = channels / groups;
  std::vector<std::vector<std::vector<double>>> out(n, std::vector<std::vector<double>>(layers, std::vector<double>(groups, 0)));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t l = 0; l < layers; ++l)
      for (std::size_t c = 0; c < channels; ++c)
        out[i][l][c / per] += weights[(i * layers + l) * channels + c] / static_cast<double>(per);
  return out;
}

// One 3 x 16 heat grid per corner; rows are layers l0..l2, darker = larger weight.
inline std::string render_weights_svg(const std::vector<Point>& corners,
                                      const std::vector<std::vector<std::vector<double>>>& merged) {
  using detail::num;
  const double cell = 14, pad = 8, label = 16;
  const std::size_t cols = merged.empty() ? 16 : merged[0][0].size();
  const double gw = cols * cell, gh = 3 * cell;
  const double W = pad * 2 + label * 2 + gw, H = pad + merged.size() * (gh + label + pad) + pad;
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(W) + "\" height=\"" + num(H) +
                  "\" font-family=\"monospace\" font-size=\"11\">\n";
  for (std::size_t i = 0; i < merged.size(); ++i) {
    const double y0 = pad + i * (gh + label + pad);
    char title[96];
    std::snprintf(title, sizeof title, "corner %zu (%.1f, %.1f)", i, corners[i].x, corners[i].y);
    s += "  <text x=\"" + num(pad) + "\" y=\"" + num(y0 + 11) + "\">" + title + "</text>\n";
    for (std::size_t l = 0; l < merged[i].size(); ++l) {
      const double y = y0 + label + l * cell;
      s += "  <text x=\"" + num(pad) + "\" y=\"" + num(y + 11) + "\">l" + std::to_string(l) + "</text>\n";
      for (std::size_t c = 0; c < merged[i][l].size(); ++c) {
        const double v = std::clamp(merged[i][l][c], 0.0, 1.0);
        const int shade = static_cast<int>(255 - 215 * v);
        char color[16];
        std::snprintf(color, sizeof color, "#%02x%02x%02x", shade, shade, 255);
        s += "  <rect x=\"" + num(pad + 2 * label + c * cell) + "\" y=\"" + num(y) + "\" width=\"" + num(cell) +
             "\" height=\"" + num(cell) + "\" fill=\"" + color + "\" stroke=\"#888888\" stroke-width=\"0.5\"><title>" +
             detail::fmt("%.4f", merged[i][l][c]) + "</title></rect>\n";
      }
    }
  }
  s += "</svg>\n";
  return s;
}

}  // namespace cornerformer
