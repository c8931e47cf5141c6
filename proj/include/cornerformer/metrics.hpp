#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cornerformer/assignment.hpp"
#include "cornerformer/geometry.hpp"

namespace cornerformer {

struct Counts {
  std::size_t tp = 0, fp = 0, fn = 0;

  // Zero predictions give precision 0 rather than undefined.
  double precision() const { return tp + fp ? static_cast<double>(tp) / (tp + fp) : 0.0; }
  double recall() const { return tp + fn ? static_cast<double>(tp) / (tp + fn) : 0.0; }
  double f1() const {
    const double p = precision(), r = recall();
    return p + r > 0 ? 2 * p * r / (p + r) : 0.0;
  }
  Counts& operator+=(const Counts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
};

struct Scores {
  double p = 0, r = 0, f1 = 0;
  static Scores of(const Counts& c) { return {c.precision(), c.recall(), c.f1()}; }
};

struct CornerMatch {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (pred, gt)
  std::vector<std::size_t> pred_to_gt, gt_to_pred;         // SIZE_MAX when unmatched
  double total_distance = 0;
};

inline CornerMatch match_corners(const PlanarGraph& pred, const PlanarGraph& gt, double radius) {
  if (!(radius > 0)) throw ConfigError("corner match radius must be positive");
  CornerMatch m;
  m.pairs = match_points(pred.corners, gt.corners, radius);
  m.pred_to_gt.assign(pred.corners.size(), SIZE_MAX);
  m.gt_to_pred.assign(gt.corners.size(), SIZE_MAX);
  for (auto [p, g] : m.pairs) {
    m.pred_to_gt[p] = g;
    m.gt_to_pred[g] = p;
    m.total_distance += distance(pred.corners[p], gt.corners[g]);
  }
  return m;
}

inline Counts score_corners(const PlanarGraph& pred, const PlanarGraph& gt, const CornerMatch& m) {
  return {m.pairs.size(), pred.corners.size() - m.pairs.size(), gt.corners.size() - m.pairs.size()};
}

inline Counts score_edges(const PlanarGraph& pred, const PlanarGraph& gt, const CornerMatch& m) {
  Counts c;
  for (auto [a, b] : pred.edges) {
    const auto ga = m.pred_to_gt[a], gb = m.pred_to_gt[b];
    if (ga != SIZE_MAX && gb != SIZE_MAX && gt.has_edge(ga, gb))
      ++c.tp;
    else
      ++c.fp;
  }
  c.fn = gt.edges.size() - c.tp;
  return c;
}

inline double mask_iou(const std::vector<unsigned char>& a, const std::vector<unsigned char>& b) {
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += a[i] && b[i];
    uni += a[i] || b[i];
  }
  return uni ? static_cast<double>(inter) / uni : 0.0;
}

struct RegionMatch {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (pred region, gt region)
  std::vector<std::vector<double>> iou;
  Counts counts;
};

// Regions are the bounded faces of each graph, rasterized at height x width.
// One-to-one, maximum cardinality over pairs with IoU >= threshold, then the
// largest total IoU.
inline RegionMatch match_regions(const PlanarGraph& pred, const PlanarGraph& gt, double iou_threshold,
                                 int height, int width) {
  const auto pr = extract_regions(pred), gr = extract_regions(gt);
  std::vector<std::vector<unsigned char>> pm, gm;
  for (const auto& r : pr) pm.push_back(rasterize_region(r.polygon, height, width));
  for (const auto& r : gr) gm.push_back(rasterize_region(r.polygon, height, width));
  RegionMatch m;
  m.iou.assign(pm.size(), std::vector<double>(gm.size(), 0.0));
  for (std::size_t i = 0; i < pm.size(); ++i)
    for (std::size_t j = 0; j < gm.size(); ++j) m.iou[i][j] = mask_iou(pm[i], gm[j]);
  m.pairs = optimal_matching(pm.size(), gm.size(), [&](std::size_t i, std::size_t j) {
    return m.iou[i][j] >= iou_threshold ? 1.0 - m.iou[i][j] : -1.0;
  });
  m.counts = {m.pairs.size(), pm.size() - m.pairs.size(), gm.size() - m.pairs.size()};
  return m;
}

inline Counts score_regions(const PlanarGraph& pred, const PlanarGraph& gt, double iou_threshold, int height,
                            int width) {
  return match_regions(pred, gt, iou_threshold, height, width).counts;
}

// ---- dataset evaluation ---------------------------------------------------

struct EvalOptions {
  double corner_radius = -1;  // < 0: 8 px at 256, scaled with image size
  double iou_threshold = 0.7;
  bool macro = false;
};

struct SampleScore {
  Counts corner, edge, region;
  bool invalid_prediction = false;
};

struct EvalReport {
  Scores corner, edge, region;
  Counts corner_counts, edge_counts, region_counts;
  std::string averaging = "micro";
  std::size_t samples = 0;
  std::size_t invalid_predictions = 0;
  double corner_radius = 0, iou_threshold = 0;
};

inline double scaled_radius(double radius, int size) { return radius >= 0 ? radius : 8.0 * size / 256.0; }

// A prediction whose edges cross cannot be split into faces; it contributes
// no predicted regions (all its ground-truth regions count as misses).
inline SampleScore score_sample(const PlanarGraph& pred, const PlanarGraph& gt, const EvalOptions& opt) {
  SampleScore s;
  const auto m = match_corners(pred, gt, scaled_radius(opt.corner_radius, std::max(gt.width, gt.height)));
  s.corner = score_corners(pred, gt, m);
  s.edge = score_edges(pred, gt, m);
  try {
    s.region = score_regions(pred, gt, opt.iou_threshold, gt.height, gt.width);
  } catch (const InvalidEmbeddingError&) {
    s.invalid_prediction = true;
    s.region = {0, 0, extract_regions(gt).size()};
  }
  return s;
}

inline EvalReport evaluate_dataset(const std::vector<PlanarGraph>& preds, const std::vector<PlanarGraph>& gts,
                                   const EvalOptions& opt = {}) {
  if (preds.size() != gts.size())
    throw std::invalid_argument("evaluate_dataset: " + std::to_string(preds.size()) + " predictions for " +
                                std::to_string(gts.size()) + " samples");
  EvalReport rep;
  rep.samples = gts.size();
  rep.averaging = opt.macro ? "macro" : "micro";
  rep.iou_threshold = opt.iou_threshold;
  rep.corner_radius = gts.empty() ? opt.corner_radius
                                  : scaled_radius(opt.corner_radius, std::max(gts[0].width, gts[0].height));
  Scores sum_c, sum_e, sum_r;
  for (std::size_t i = 0; i < gts.size(); ++i) {
    const auto s = score_sample(preds[i], gts[i], opt);
    rep.corner_counts += s.corner;
    rep.edge_counts += s.edge;
    rep.region_counts += s.region;
    rep.invalid_predictions += s.invalid_prediction;
    for (auto [acc, c] : {std::pair{&sum_c, s.corner}, {&sum_e, s.edge}, {&sum_r, s.region}}) {
      const auto sc = Scores::of(c);
      acc->p += sc.p;
      acc->r += sc.r;
      acc->f1 += sc.f1;
    }
  }
  if (opt.macro) {
    const double n = std::max<std::size_t>(gts.size(), 1);
    for (auto [dst, acc] : {std::pair{&rep.corner, sum_c}, {&rep.edge, sum_e}, {&rep.region, sum_r}})
      *dst = {acc.p / n, acc.r / n, acc.f1 / n};
  } else {
    rep.corner = Scores::of(rep.corner_counts);
    rep.edge = Scores::of(rep.edge_counts);
    rep.region = Scores::of(rep.region_counts);
  }
  return rep;
}

inline nlohmann::json report_to_json(const EvalReport& r, const nlohmann::json& config = nlohmann::json::object()) {
  auto block = [](const Scores& s, const Counts& c) {
    return nlohmann::json{{"p", s.p}, {"r", s.r}, {"f1", s.f1}, {"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}};
  };
  nlohmann::json cfg = config;
  cfg["averaging"] = r.averaging;
  cfg["corner_radius"] = r.corner_radius;
  cfg["iou_threshold"] = r.iou_threshold;
  cfg["samples"] = r.samples;
  cfg["invalid_predictions"] = r.invalid_predictions;
  return {{"corner", block(r.corner, r.corner_counts)},
          {"edge", block(r.edge, r.edge_counts)},
          {"region", block(r.region, r.region_counts)},
          {"config", cfg}};
}

inline std::string report_to_text(const EvalReport& r) {
  std::string out;
  char line[128];
  std::snprintf(line, sizeof line, "%-8s %9s %9s %9s   (%s, %zu samples)\n", "", "precision", "recall", "f1",
                r.averaging.c_str(), r.samples);
  out += line;
  for (auto [name, s] : {std::pair{"corner", r.corner}, {"edge", r.edge}, {"region", r.region}}) {
    std::snprintf(line, sizeof line, "%-8s %9.4f %9.4f %9.4f\n", name, s.p, s.r, s.f1);
    out += line;
  }
  return out;
}

}  // namespace cornerformer
