#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "cornerformer/heatmap.hpp"
#include "cornerformer/synth.hpp"
#include "oracles.hpp"

using namespace cornerformer;

namespace {

double conf(const DirectionHeatmap& h, int x, int y, Direction d) {
  return h.confidence[(static_cast<std::size_t>(y) * h.width + x) * kDirections + static_cast<std::size_t>(d)];
}

PlanarGraph tiny_edge(bool horizontal) {
  // A 3 px edge inside a larger outline so both ends carry two directions.
  if (horizontal)
    return oracle::make_graph({{20, 20}, {23, 20}, {23, 40}, {20, 40}}, {{0, 1}, {1, 2}, {2, 3}, {3, 0}});
  return oracle::make_graph({{20, 20}, {40, 20}, {40, 23}, {20, 23}}, {{0, 1}, {1, 2}, {2, 3}, {3, 0}});
}

}  // namespace

TEST(DirectionBins, HorizontalEdgeEndsPointAtEachOther) {
  auto g = oracle::make_graph({{10, 10}, {20, 10}}, {{0, 1}});
  EXPECT_EQ(direction_bins(g, 0), bit(Direction::Right));
  EXPECT_EQ(direction_bins(g, 1), bit(Direction::Left));
}

TEST(DirectionBins, LCornerRightAndDown) {
  auto g = oracle::make_graph({{10, 10}, {20, 10}, {10, 20}}, {{0, 1}, {0, 2}});
  EXPECT_EQ(direction_bins(g, 0), bit(Direction::Right) | bit(Direction::Down));
}

TEST(DirectionBins, FortyFiveDegreesIsUp) {
  EXPECT_EQ(ray_direction(1, -1), Direction::Up);   // theta = 45
  EXPECT_EQ(ray_direction(-1, -1), Direction::Left);  // theta = 135
  EXPECT_EQ(ray_direction(-1, 1), Direction::Down);   // theta = 225
  EXPECT_EQ(ray_direction(1, 1), Direction::Right);   // theta = 315 = -45
  auto g = oracle::make_graph({{10, 10}}, {});
  EXPECT_EQ(direction_bins(g, 0), 0);
}

TEST(Encode, PeakIsOneAtCorner) {
  auto g = oracle::make_graph({{10, 10}, {20, 10}}, {{0, 1}});
  const auto h = encode(g, 32, 32);
  EXPECT_DOUBLE_EQ(conf(h, 10, 10, Direction::Right), 1.0);
  EXPECT_DOUBLE_EQ(conf(h, 20, 10, Direction::Left), 1.0);
  EXPECT_DOUBLE_EQ(conf(h, 10, 10, Direction::Left), 0.0);
}

TEST(Encode, ValueAtSigmaDistance) {
  auto g = oracle::make_graph({{10, 10}, {20, 10}}, {{0, 1}});
  const auto h = encode(g, 32, 32, {2.0, 3.0});
  EXPECT_NEAR(conf(h, 10, 12, Direction::Right), std::exp(-0.5), 1e-12);
  EXPECT_NEAR(std::exp(-0.5), 0.6065, 1e-4);
}

TEST(Encode, LiteralDensityPeak) {
  EXPECT_NEAR(gaussian_density(0, 0, 2.0), 1.0 / (8 * std::numbers::pi), 1e-15);
  EXPECT_NEAR(gaussian_density(0, 0, 2.0), 0.03979, 1e-5);
}

TEST(Encode, OutOfBoundsCornerThrows) {
  auto g = oracle::make_graph({{10, 10}, {40, 10}}, {{0, 1}});
  EXPECT_THROW(encode(g, 32, 32), GraphError);
}

TEST(Encode, ValuesInUnitIntervalAndDeterministic) {
  const auto s = generate_sample(5, 64, 64, 2);
  const auto a = encode(s.graph, 64, 64), b = encode(s.graph, 64, 64);
  EXPECT_EQ(a.confidence, b.confidence);
  EXPECT_EQ(a.seg, b.seg);
  for (double v : a.confidence) EXPECT_TRUE(v >= 0 && v <= 1);
  for (double v : a.seg) EXPECT_TRUE(v == 0 || v == 1);
  for (std::size_t i = 0; i < s.graph.corners.size(); ++i) {
    const auto dirs = direction_bins(s.graph, i);
    for (unsigned d = 0; d < kDirections; ++d) {
      if (!(dirs & (1u << d))) continue;
      double best = 0;
      const int cx = static_cast<int>(s.graph.corners[i].x), cy = static_cast<int>(s.graph.corners[i].y);
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) best = std::max(best, conf(a, cx + dx, cy + dy, static_cast<Direction>(d)));
      EXPECT_EQ(best, 1.0);
    }
  }
}

TEST(Encode, SegMaskMatchesDistanceOracle) {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const auto s = generate_sample(seed, 64, 64, static_cast<int>(seed % 3));
    const auto h = encode(s.graph, 64, 64);
    std::size_t count = 0;
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) {
        double d = 1e9;
        for (auto [a, b] : s.graph.edges)
          d = std::min(d, oracle::point_segment_distance({double(x), double(y)}, s.graph.corners[a], s.graph.corners[b]));
        const bool want = d <= 1.5;
        EXPECT_EQ(h.seg[static_cast<std::size_t>(y) * 64 + x] == 1.0, want) << seed << " @" << x << "," << y;
        count += want;
      }
    EXPECT_EQ(static_cast<std::size_t>(std::count(h.seg.begin(), h.seg.end(), 1.0)), count);
  }
}

TEST(Encode, SegMaskOnDiagonalSegments) {
  auto g = oracle::make_graph({{5.5, 7.25}, {40.75, 31}, {12, 50}}, {{0, 1}, {1, 2}});
  const auto h = encode(g, 64, 64);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      double d = 1e9;
      for (auto [a, b] : g.edges)
        d = std::min(d, oracle::point_segment_distance({double(x), double(y)}, g.corners[a], g.corners[b]));
      EXPECT_EQ(h.seg[static_cast<std::size_t>(y) * 64 + x] == 1.0, d <= 1.5) << x << "," << y;
    }
}

TEST(Decode, SinglePeakOneDetection) {
  DirectionHeatmap h;
  h.height = h.width = 32;
  h.confidence.assign(32 * 32 * 4, 0.0);
  h.seg.assign(32 * 32, 0.0);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x)
      h.confidence[(y * 32 + x) * 4 + 2] = gaussian_peak1(x - 12, y - 17, 2.0);
  const auto d = decode(h);
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d[0].position, (Point{12, 17}));
  EXPECT_EQ(d[0].directions, bit(Direction::Left));
}

TEST(Decode, LCornerMergesChannels) {
  auto g = oracle::make_graph({{10, 10}, {10, 30}, {30, 10}}, {{0, 1}, {0, 2}});
  const auto d = decode(encode(g, 64, 64));
  ASSERT_EQ(d.size(), 3u);
  bool found = false;
  for (const auto& det : d)
    if (det.position == Point{10, 10}) {
      found = true;
      EXPECT_EQ(det.directions, bit(Direction::Down) | bit(Direction::Right));
    }
  EXPECT_TRUE(found);
}

TEST(Decode, PlateauYieldsOnePeak) {
  std::vector<double> buf(5 * 5, 0.0);
  for (int y = 1; y <= 2; ++y)
    for (int x = 1; x <= 2; ++x) buf[y * 5 + x] = 0.9;
  EXPECT_EQ(find_peaks(buf, 5, 5, 1, 0, 0.5, Direction::Up).size(), 1u);
}

TEST(Decode, HorizontalTinyEdgeSeparates) {
  const auto g = tiny_edge(true);
  const auto h = encode(g, 64, 64);
  const auto d = decode(h);
  ASSERT_EQ(d.size(), 4u);
  for (const auto& c : g.corners) {
    double best = 1e9;
    for (const auto& det : d) best = std::min(best, distance(det.position, c));
    EXPECT_LE(best, 1.0);
  }
  EXPECT_LT(oracle::single_channel_decode(h).size(), 4u);
}

TEST(Decode, VerticalTinyEdgeSeparates) {
  const auto g = tiny_edge(false);
  const auto d = decode(encode(g, 64, 64));
  EXPECT_EQ(d.size(), 4u);
}

TEST(Decode, NoOverlappingDirectionSetsWithinOnePixel) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto s = generate_sample(seed, 64, 64, 2);
    const auto d = decode(encode(s.graph, 64, 64));
    for (std::size_t i = 0; i < d.size(); ++i)
      for (std::size_t j = i + 1; j < d.size(); ++j)
        if (distance(d[i].position, d[j].position) <= 1.0) EXPECT_EQ(d[i].directions & d[j].directions, 0);
  }
}

TEST(RoundTrip, SquareRecoveredWithinOnePixel) {
  const auto r = roundtrip_check(oracle::make_graph({{10, 10}, {30, 10}, {30, 30}, {10, 30}},
                                                    {{0, 1}, {1, 2}, {2, 3}, {3, 0}}),
                                 64, 64);
  ASSERT_EQ(r.nearest.size(), 4u);
  for (double d : r.nearest) EXPECT_LE(d, 1.0);
  EXPECT_EQ(r.precision, 1.0);
  EXPECT_EQ(r.recall, 1.0);
}

TEST(RoundTrip, EmptyGraphEmptyDetections) {
  const auto r = roundtrip_check(oracle::make_graph({}, {}), 64, 64);
  EXPECT_EQ(r.detections, 0u);
}
