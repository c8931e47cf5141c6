#include <gtest/gtest.h>

#include <map>
#include <set>

#include "cornerformer/geometry.hpp"
#include "oracles.hpp"

using namespace cornerformer;

namespace {

PlanarGraph square(double x0 = 10, double y0 = 10, double s = 20) {
  return oracle::make_graph({{x0, y0}, {x0 + s, y0}, {x0 + s, y0 + s}, {x0, y0 + s}}, {{0, 1}, {1, 2}, {2, 3}, {3, 0}});
}

}  // namespace

TEST(Validate, RejectsBadGraphs) {
  auto g = square();
  EXPECT_NO_THROW(validate(g));
  auto loop = g;
  loop.edges.emplace_back(1, 1);
  EXPECT_THROW(validate(loop), GraphError);
  auto dup = g;
  dup.edges.emplace_back(1, 0);
  EXPECT_THROW(validate(dup), GraphError);
  auto range = g;
  range.edges.emplace_back(0, 9);
  EXPECT_THROW(validate(range), GraphError);
  auto outside = g;
  outside.corners[0].x = 64;
  EXPECT_THROW(validate(outside), GraphError);
}

TEST(InferenceCandidates, AllUnorderedPairs) {
  std::vector<Point> four(4, Point{0, 0}), one(1), forty(40);
  EXPECT_EQ(enumerate_candidates_inference(four).size(), 6u);
  EXPECT_EQ(enumerate_candidates_inference(one).size(), 0u);
  const auto cs = enumerate_candidates_inference(forty);
  EXPECT_EQ(cs.size(), 780u);
  std::set<Edge> unique(cs.pairs.begin(), cs.pairs.end());
  EXPECT_EQ(unique.size(), 780u);
  for (auto [i, j] : cs.pairs) EXPECT_LT(i, j);
}

TEST(TrainingCandidates, SquareWithPerfectPredictions) {
  // A 4-corner set has only C(4,2) - 4 = 2 non-edges, so T = 10 leaves 4
  // padded slots.
  const auto g = square();
  std::mt19937_64 rng(1);
  const auto cs = build_training_candidates(g.corners, g, 2.0, 10, rng);
  EXPECT_EQ(cs.capacity(), 10u);
  EXPECT_EQ(cs.size(), 6u);
  std::size_t pos = 0, neg = 0;
  for (std::size_t k = 0; k < cs.capacity(); ++k) {
    if (!cs.valid[k]) continue;
    (cs.labels[k] ? pos : neg)++;
    if (cs.labels[k]) EXPECT_TRUE(g.has_edge(cs.pairs[k].first, cs.pairs[k].second));
  }
  EXPECT_EQ(pos, 4u);
  EXPECT_EQ(neg, 2u);
  EXPECT_EQ(cs.corners.size(), 4u);
}

TEST(TrainingCandidates, FullWhenEnoughNegativesExist) {
  auto g = oracle::make_graph({{4, 4}, {20, 4}, {20, 20}, {4, 20}, {40, 40}, {50, 40}, {50, 50}},
                              {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}});
  std::mt19937_64 rng(2);
  const auto cs = build_training_candidates(g.corners, g, 2.0, 10, rng);
  EXPECT_EQ(cs.size(), 10u);
  EXPECT_EQ(std::count(cs.labels.begin(), cs.labels.end(), 1), 5);
  std::set<Edge> unique(cs.pairs.begin(), cs.pairs.end());
  EXPECT_EQ(unique.size(), 10u);
}

TEST(TrainingCandidates, NoPredictionsFallsBackToGroundTruth) {
  const auto g = square();
  std::mt19937_64 rng(1);
  const auto cs = build_training_candidates({}, g, 2.0, 8, rng);
  EXPECT_EQ(cs.corners, g.corners);
  EXPECT_EQ(std::count(cs.labels.begin(), cs.labels.end(), 1), 4);
}

TEST(TrainingCandidates, UnmatchedEndpointsAreInjected) {
  const auto g = square();
  std::vector<Point> pred = {{10.5, 10}, {29, 11}, {50, 50}};
  std::mt19937_64 rng(4);
  const auto cs = build_training_candidates(pred, g, 2.0, 20, rng);
  ASSERT_EQ(cs.corners.size(), 5u);
  EXPECT_EQ(cs.corners[3], g.corners[2]);
  EXPECT_EQ(cs.corners[4], g.corners[3]);
  std::set<Edge> positives;
  for (std::size_t k = 0; k < cs.capacity(); ++k)
    if (cs.valid[k] && cs.labels[k]) positives.insert(cs.pairs[k]);
  EXPECT_EQ(positives, (std::set<Edge>{{0, 1}, {1, 3}, {3, 4}, {0, 4}}));
}

TEST(TrainingCandidates, FixedSeedIsReproducible) {
  const auto g = square();
  std::vector<Point> pred = {{10, 10}, {30, 10}, {30, 30}, {10, 30}, {20, 20}, {40, 5}, {5, 40}};
  std::mt19937_64 a(9), b(9);
  const auto x = build_training_candidates(pred, g, 2.0, 12, a);
  const auto y = build_training_candidates(pred, g, 2.0, 12, b);
  EXPECT_EQ(x.pairs, y.pairs);
  EXPECT_EQ(x.labels, y.labels);
  EXPECT_EQ(x.valid, y.valid);
  EXPECT_EQ(x.corners, y.corners);
}

TEST(TrainingCandidates, CapacityBelowPositivesIsConfigError) {
  std::mt19937_64 rng(1);
  EXPECT_THROW(build_training_candidates({}, square(), 2.0, 3, rng), ConfigError);
}

TEST(Polygon, AreaSignFollowsOrientation) {
  Polygon ccw = {{0, 0}, {1, 0}, {1, 1}, {0, 1}};
  EXPECT_DOUBLE_EQ(std::abs(polygon_area(ccw)), 1.0);
  Polygon rev(ccw.rbegin(), ccw.rend());
  EXPECT_DOUBLE_EQ(polygon_area(rev), -polygon_area(ccw));
  EXPECT_THROW(polygon_area({{0, 0}, {1, 1}}), GraphError);
}

TEST(Polygon, RasterizedTenByTenSquareHasHundredPixels) {
  const auto m = rasterize_region({{10, 10}, {20, 10}, {20, 20}, {10, 20}}, 64, 64);
  EXPECT_EQ(std::count(m.begin(), m.end(), 1), 100);
}

TEST(Regions, UnitSquareHasOneRegion) {
  const auto r = extract_regions(oracle::make_graph({{0, 0}, {1, 0}, {1, 1}, {0, 1}}, {{0, 1}, {1, 2}, {2, 3}, {3, 0}}));
  ASSERT_EQ(r.size(), 1u);
  EXPECT_DOUBLE_EQ(r[0].area, 1.0);
}

TEST(Regions, TreeHasNoRegions) {
  EXPECT_TRUE(extract_regions(oracle::hand_built_graphs()[5]).empty());
}

TEST(Regions, TwoSquaresSharingAnEdge) {
  const auto g = oracle::hand_built_graphs()[1];
  ASSERT_EQ(g.corners.size(), 6u);
  ASSERT_EQ(g.edges.size(), 7u);
  const auto r = extract_regions(g);
  EXPECT_EQ(r.size(), 2u);
  std::set<oracle::Cycle> got;
  for (const auto& f : r) got.insert(oracle::walk_outline(g, f.vertices));
  EXPECT_EQ(got, oracle::brute_force_faces(g));
}

TEST(Regions, CrossingEdgesAreRejectedWithThePair) {
  auto g = oracle::make_graph({{0, 0}, {4, 4}, {4, 0}, {0, 4}}, {{0, 1}, {2, 3}});
  try {
    extract_regions(g);
    FAIL();
  } catch (const InvalidEmbeddingError& e) {
    EXPECT_EQ(e.first, (Edge{0, 1}));
    EXPECT_EQ(e.second, (Edge{2, 3}));
  }
}

TEST(Regions, CollinearOverlapIsRejected) {
  auto g = oracle::make_graph({{0, 0}, {4, 0}, {2, 0}, {6, 0}}, {{0, 1}, {2, 3}});
  EXPECT_THROW(extract_regions(g), InvalidEmbeddingError);
}

TEST(Regions, EulerCountOnRandomRectilinearGraphs) {
  // Connected grid-aligned graphs: bounded faces = E - V + 1.
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const int w = 2 + static_cast<int>(uniform_index(rng, 4)), h = 2 + static_cast<int>(uniform_index(rng, 4));
    PlanarGraph g;
    g.width = g.height = 64;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) g.corners.push_back({x * 5.0, y * 5.0});
    auto id = [&](int x, int y) { return static_cast<std::size_t>(y * w + x); };
    // random spanning tree by randomized DFS, then random extra grid edges
    std::vector<char> seen(g.corners.size(), 0);
    std::vector<std::pair<int, int>> stack = {{0, 0}};
    seen[0] = 1;
    while (!stack.empty()) {
      auto [x, y] = stack.back();
      std::vector<std::pair<int, int>> nb;
      for (auto [dx, dy] : {std::pair{1, 0}, {-1, 0}, {0, 1}, {0, -1}}) {
        const int nx = x + dx, ny = y + dy;
        if (nx >= 0 && ny >= 0 && nx < w && ny < h && !seen[id(nx, ny)]) nb.emplace_back(nx, ny);
      }
      if (nb.empty()) {
        stack.pop_back();
        continue;
      }
      auto [nx, ny] = nb[uniform_index(rng, nb.size())];
      seen[id(nx, ny)] = 1;
      g.edges.emplace_back(id(x, y), id(nx, ny));
      stack.emplace_back(nx, ny);
    }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (auto [dx, dy] : {std::pair{1, 0}, {0, 1}}) {
          if (x + dx >= w || y + dy >= h || uniform01(rng) < 0.5) continue;
          if (!g.has_edge(id(x, y), id(x + dx, y + dy))) g.edges.emplace_back(id(x, y), id(x + dx, y + dy));
        }
    const auto regions = extract_regions(g);
    EXPECT_EQ(regions.size(), g.edges.size() - g.corners.size() + 1) << "trial " << trial;
  }
}

TEST(Regions, EdgesBorderTwoFacesOrOneTwice) {
  // Count dart usage over all faces including the outer walks: every dart is
  // used exactly once, so each edge is seen twice in total.
  for (const auto& g : oracle::face_corpus()) {
    std::map<Edge, int> uses;
    for (const auto& r : extract_regions(g))
      for (std::size_t i = 0; i < r.vertices.size(); ++i) {
        const auto a = r.vertices[i], b = r.vertices[(i + 1) % r.vertices.size()];
        uses[{std::min(a, b), std::max(a, b)}]++;
      }
    for (const auto& [e, n] : uses) EXPECT_LE(n, 2);
  }
}

TEST(Regions, DanglingEdgeInsideKeepsTheFace) {
  const auto g = oracle::hand_built_graphs()[3];
  const auto r = extract_regions(g);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_DOUBLE_EQ(r[0].area, 36.0);
  EXPECT_EQ(r[0].vertices.size(), 6u);  // the dangling edge is walked both ways
}
