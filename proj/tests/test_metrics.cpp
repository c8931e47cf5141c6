#include <gtest/gtest.h>

#include "cornerformer/metrics.hpp"
#include "oracles.hpp"

using namespace cornerformer;

namespace {

PlanarGraph square(double x0, double y0, double s, int size = 64) {
  return oracle::make_graph({{x0, y0}, {x0 + s, y0}, {x0 + s, y0 + s}, {x0, y0 + s}},
                            {{0, 1}, {1, 2}, {2, 3}, {3, 0}}, size);
}

}  // namespace

TEST(Counts, ZeroPredictionsGiveZeroPrecision) {
  Counts c{0, 0, 5};
  EXPECT_EQ(c.precision(), 0.0);
  EXPECT_EQ(c.recall(), 0.0);
  EXPECT_EQ(c.f1(), 0.0);
}

TEST(Counts, F1IsHarmonicMean) {
  Counts c{3, 1, 2};
  EXPECT_DOUBLE_EQ(c.precision(), 0.75);
  EXPECT_DOUBLE_EQ(c.recall(), 0.6);
  EXPECT_DOUBLE_EQ(c.f1(), 2 * 0.75 * 0.6 / 1.35);
}

TEST(CornerMatching, PerfectPredictionScoresOne) {
  const auto g = square(10, 10, 20);
  const auto m = match_corners(g, g, 2.0);
  const auto c = score_corners(g, g, m), e = score_edges(g, g, m);
  EXPECT_EQ(c.tp, 4u);
  EXPECT_EQ(c.f1(), 1.0);
  EXPECT_EQ(e.tp, 4u);
  EXPECT_EQ(e.f1(), 1.0);
  EXPECT_EQ(score_regions(g, g, 0.7, 64, 64).f1(), 1.0);
}

TEST(CornerMatching, ShiftBeyondRadiusUnmatches) {
  const auto gt = square(10, 10, 20);
  auto pred = gt;
  pred.corners[0].x += 2.5;
  const auto m = match_corners(pred, gt, 2.0);
  const auto c = score_corners(pred, gt, m);
  EXPECT_EQ(c.tp, 3u);
  EXPECT_EQ(c.fp, 1u);
  EXPECT_EQ(c.fn, 1u);
  const auto e = score_edges(pred, gt, m);
  EXPECT_EQ(e.tp, 2u);
  EXPECT_EQ(e.fp, 2u);
  EXPECT_EQ(e.fn, 2u);
}

TEST(CornerMatching, ExactlyAtRadiusMatches) {
  const auto gt = oracle::make_graph({{10, 10}}, {});
  const auto pred = oracle::make_graph({{12, 10}}, {});
  EXPECT_EQ(match_corners(pred, gt, 2.0).pairs.size(), 1u);
}

TEST(CornerMatching, NonPositiveRadiusIsConfigError) {
  const auto g = square(10, 10, 20);
  EXPECT_THROW(match_corners(g, g, 0.0), ConfigError);
}

TEST(CornerMatching, OneToOneWithMinimumDistance) {
  // Two predictions near one ground-truth corner: only the nearer one matches.
  const auto gt = oracle::make_graph({{20, 20}, {40, 20}}, {});
  const auto pred = oracle::make_graph({{21, 20}, {20.5, 20}, {45, 20}}, {});
  const auto m = match_corners(pred, gt, 3.0);
  ASSERT_EQ(m.pairs.size(), 1u);
  EXPECT_EQ(m.pairs[0], (std::pair<std::size_t, std::size_t>{1, 0}));
}

TEST(CornerMatching, AgreesWithExhaustiveOracle) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t np = uniform_index(rng, 7), ng = uniform_index(rng, 7);
    PlanarGraph pred, gt;
    pred.width = pred.height = gt.width = gt.height = 64;
    for (std::size_t i = 0; i < np; ++i) pred.corners.push_back({uniform01(rng) * 12, uniform01(rng) * 12});
    for (std::size_t i = 0; i < ng; ++i) gt.corners.push_back({uniform01(rng) * 12, uniform01(rng) * 12});
    const double radius = 1 + uniform01(rng) * 4;
    const auto m = match_corners(pred, gt, radius);
    const auto want = oracle::exhaustive_matching(np, ng, [&](std::size_t i, std::size_t j) {
      const double d = distance(pred.corners[i], gt.corners[j]);
      return d <= radius ? d : -1.0;
    });
    EXPECT_EQ(m.pairs.size(), want.cardinality) << trial;
    EXPECT_NEAR(m.total_distance, want.cost, 1e-9) << trial;
  }
}

TEST(CornerMatching, CountsAreSymmetricUnderSwap) {
  std::mt19937_64 rng(32);
  for (int trial = 0; trial < 100; ++trial) {
    const auto a = oracle::random_planar_graph(rng, 8), b = oracle::random_planar_graph(rng, 8);
    const auto ab = match_corners(a, b, 6.0), ba = match_corners(b, a, 6.0);
    const auto cab = score_corners(a, b, ab), cba = score_corners(b, a, ba);
    EXPECT_EQ(cab.tp, cba.tp);
    EXPECT_EQ(cab.fp, cba.fn);
    EXPECT_EQ(cab.fn, cba.fp);
  }
}

TEST(EdgeScoring, EdgeNeedsBothEndpointsMatched) {
  const auto gt = oracle::make_graph({{10, 10}, {30, 10}, {30, 30}}, {{0, 1}, {1, 2}});
  const auto pred = oracle::make_graph({{10, 10}, {30, 10}, {50, 50}}, {{0, 1}, {1, 2}});
  const auto e = score_edges(pred, gt, match_corners(pred, gt, 2.0));
  EXPECT_EQ(e.tp, 1u);
  EXPECT_EQ(e.fp, 1u);
  EXPECT_EQ(e.fn, 1u);
}

TEST(RegionScoring, IouThresholdDecides) {
  const auto gt = square(10, 10, 20);
  auto near = square(10, 10, 19);  // 19x19 inside 20x20 by rasterization
  const auto m = match_regions(near, gt, 0.7, 64, 64);
  ASSERT_EQ(m.iou.size(), 1u);
  EXPECT_GT(m.iou[0][0], 0.7);
  EXPECT_EQ(m.counts.tp, 1u);
  auto far = square(20, 20, 20);
  EXPECT_EQ(score_regions(far, gt, 0.7, 64, 64).tp, 0u);
}

TEST(RegionScoring, MaskIouExamples) {
  std::vector<unsigned char> a = {1, 1, 0, 0}, b = {0, 1, 1, 0}, z = {0, 0, 0, 0};
  EXPECT_DOUBLE_EQ(mask_iou(a, b), 1.0 / 3);
  EXPECT_DOUBLE_EQ(mask_iou(a, a), 1.0);
  EXPECT_DOUBLE_EQ(mask_iou(z, z), 0.0);
}

TEST(RegionScoring, MatchingAgreesWithExhaustiveOracle) {
  std::mt19937_64 rng(33);
  for (int trial = 0; trial < 60; ++trial) {
    const auto a = oracle::random_planar_graph(rng, 8), b = oracle::random_planar_graph(rng, 8);
    const double th = 0.1 + 0.6 * uniform01(rng);
    const auto m = match_regions(a, b, th, 64, 64);
    const auto want = oracle::exhaustive_matching(m.iou.size(), m.iou.empty() ? extract_regions(b).size() : m.iou[0].size(),
                                                  [&](std::size_t i, std::size_t j) {
                                                    return m.iou[i][j] >= th ? 1.0 - m.iou[i][j] : -1.0;
                                                  });
    EXPECT_EQ(m.pairs.size(), want.cardinality) << trial;
    double cost = 0;
    for (auto [i, j] : m.pairs) cost += 1.0 - m.iou[i][j];
    EXPECT_NEAR(cost, want.cost, 1e-9) << trial;
  }
}

TEST(Evaluation, MicroSumsCountsMacroAveragesScores) {
  const auto g1 = square(10, 10, 20), g2 = square(5, 5, 30);
  const auto empty = oracle::make_graph({}, {});
  const std::vector<PlanarGraph> preds = {g1, empty}, gts = {g1, g2};
  const auto micro = evaluate_dataset(preds, gts, {});
  EXPECT_EQ(micro.corner_counts.tp, 4u);
  EXPECT_EQ(micro.corner_counts.fn, 4u);
  EXPECT_DOUBLE_EQ(micro.corner.p, 1.0);
  EXPECT_DOUBLE_EQ(micro.corner.r, 0.5);
  EXPECT_EQ(micro.averaging, "micro");
  EvalOptions macro_opt;
  macro_opt.macro = true;
  const auto macro = evaluate_dataset(preds, gts, macro_opt);
  EXPECT_DOUBLE_EQ(macro.corner.p, 0.5);
  EXPECT_DOUBLE_EQ(macro.corner.r, 0.5);
  EXPECT_EQ(macro.averaging, "macro");
}

TEST(Evaluation, RadiusScalesWithImageSize) {
  EXPECT_DOUBLE_EQ(scaled_radius(-1, 256), 8.0);
  EXPECT_DOUBLE_EQ(scaled_radius(-1, 64), 2.0);
  EXPECT_DOUBLE_EQ(scaled_radius(5, 64), 5.0);
}

TEST(Evaluation, CrossingPredictionCountsZeroRegions) {
  const auto gt = square(10, 10, 20);
  auto bad = gt;
  bad.edges.emplace_back(0, 2);
  bad.edges.emplace_back(1, 3);
  const auto r = evaluate_dataset({bad}, {gt}, {});
  EXPECT_EQ(r.invalid_predictions, 1u);
  EXPECT_EQ(r.region_counts.tp, 0u);
  EXPECT_EQ(r.region_counts.fn, 1u);
  EXPECT_EQ(r.corner_counts.tp, 4u);
}

TEST(Evaluation, MismatchedListsAreRejected) {
  EXPECT_ANY_THROW(evaluate_dataset({square(1, 1, 5)}, {}, {}));
}

TEST(Evaluation, JsonReportHasAllKeys) {
  const auto g = square(10, 10, 20);
  const auto j = report_to_json(evaluate_dataset({g}, {g}, {}));
  for (const char* k : {"corner", "edge", "region"})
    for (const char* f : {"p", "r", "f1", "tp", "fp", "fn"}) EXPECT_TRUE(j[k].contains(f)) << k << "." << f;
  EXPECT_EQ(j["corner"]["f1"].get<double>(), 1.0);
}
