#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <numeric>
#include <set>

#include "petroseg/colorseg.hpp"
#include "petroseg/phantom.hpp"
#include "support.hpp"

using namespace petroseg;

namespace {

// Union-find labelling used as an independent oracle for the flood fill.
struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  }
  void unite(int a, int b) { parent[find(a)] = find(b); }
};

std::multiset<std::size_t> oracle_sizes(const PhaseMask& m, PhaseLabel phase, int conn) {
  const int w = m.width(), h = m.height();
  UnionFind uf(w * h);
  auto same = [&](int x, int y) { return x >= 0 && y >= 0 && x < w && y < h && m.at(x, y) == phase; };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!same(x, y)) continue;
      if (same(x - 1, y)) uf.unite(y * w + x, y * w + x - 1);
      if (same(x, y - 1)) uf.unite(y * w + x, (y - 1) * w + x);
      if (conn == 8) {
        if (same(x - 1, y - 1)) uf.unite(y * w + x, (y - 1) * w + x - 1);
        if (same(x + 1, y - 1)) uf.unite(y * w + x, (y - 1) * w + x + 1);
      }
    }
  std::map<int, std::size_t> count;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (same(x, y)) count[uf.find(y * w + x)]++;
  std::multiset<std::size_t> out;
  for (auto& [root, n] : count) out.insert(n);
  return out;
}

Scan solid(Rgb c, int w = 4, int h = 4) {
  return Scan("solid", w, h, 5.3, std::vector<Rgb>(static_cast<std::size_t>(w) * h, c));
}

}  // namespace

TEST(Hsv, KnownColours) {
  auto h = to_hsv({255, 0, 0});
  EXPECT_DOUBLE_EQ(h.h, 0.0);
  EXPECT_DOUBLE_EQ(h.s, 1.0);
  EXPECT_DOUBLE_EQ(h.v, 1.0);
  h = to_hsv({0, 255, 0});
  EXPECT_DOUBLE_EQ(h.h, 120.0);
  h = to_hsv({0, 0, 255});
  EXPECT_DOUBLE_EQ(h.h, 240.0);
  h = to_hsv({255, 0, 255});
  EXPECT_DOUBLE_EQ(h.h, 300.0);
  h = to_hsv({128, 128, 128});
  EXPECT_DOUBLE_EQ(h.s, 0.0);
  EXPECT_NEAR(h.v, 128.0 / 255.0, 1e-15);
  h = to_hsv({255, 0, 1});
  EXPECT_GT(h.h, 359.0);
  EXPECT_LT(h.h, 360.0);
}

TEST(Hsv, WrappingHueInterval) {
  const HueInterval red{340, 20};
  EXPECT_TRUE(red.wraps());
  EXPECT_TRUE(red.contains(350));
  EXPECT_TRUE(red.contains(0));
  EXPECT_TRUE(red.contains(15));
  EXPECT_FALSE(red.contains(100));
  EXPECT_TRUE(red.overlaps(HueInterval{10, 30}));
  EXPECT_FALSE(red.overlaps(HueInterval{30, 330}));
}

TEST(ColorSeg, DefaultRulesClassifyPhantomColours) {
  const auto rules = default_color_rules();
  EXPECT_EQ(segment_by_color(solid({225, 120, 190}), rules).at(0, 0), PhaseLabel::Paste);
  EXPECT_EQ(segment_by_color(solid({240, 150, 45}), rules).at(0, 0), PhaseLabel::Void);
  EXPECT_EQ(segment_by_color(solid({175, 175, 175}), rules).at(0, 0), PhaseLabel::Aggregate);
  EXPECT_EQ(segment_by_color(solid({20, 40, 200}), rules).at(0, 0), PhaseLabel::Aggregate);
}

TEST(ColorSeg, PriorityResolvesOverlap) {
  std::vector<ColorRule> rules = {
      {PhaseLabel::Paste, {0, 360}, {0, 1}, {0, 1}, 5},
      {PhaseLabel::Void, {0, 360}, {0, 1}, {0, 1}, 1},
  };
  EXPECT_EQ(segment_by_color(solid({10, 200, 30}), rules).at(0, 0), PhaseLabel::Void);
}

TEST(ColorSeg, RuleValidation) {
  EXPECT_THROW(segment_by_color(solid({1, 1, 1}), {}), Error);
  std::vector<ColorRule> clash = {
      {PhaseLabel::Paste, {300, 350}, {0.1, 1}, {0, 1}, 1},
      {PhaseLabel::Void, {340, 20}, {0.1, 1}, {0, 1}, 1},
  };
  try {
    validate_rules(clash);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Config);
  }
  clash[1].hue = {20, 45};
  EXPECT_NO_THROW(validate_rules(clash));
  clash[1].sat = {0.9, 0.1};
  EXPECT_THROW(validate_rules(clash), Error);
}

TEST(ColorSeg, TreatedPhantomRegionsMatchGenerator) {
  PhantomSpec spec;
  spec.width = 400;
  spec.height = 400;
  spec.plant_specks = false;
  const auto ph = make_phantom(spec);
  const auto seg = segment_by_color(ph.scan, default_color_rules());
  std::size_t same = 0;
  for (std::size_t i = 0; i < seg.labels().size(); ++i) same += seg.labels()[i] == ph.truth.labels()[i];
  EXPECT_GE(static_cast<double>(same) / seg.labels().size(), 0.99);
}

TEST(Components, MatchUnionFindOracle) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto m = testsupport::random_mask(37, 23, seed);
    for (int conn : {4, 8}) {
      for (PhaseLabel p : kPhases) {
        std::multiset<std::size_t> got;
        std::size_t total = 0;
        for (const auto& c : connected_components(m, p, conn)) {
          got.insert(c.pixel_count);
          total += c.pixel_count;
          EXPECT_DOUBLE_EQ(c.area_um2, c.pixel_count * 5.3 * 5.3);
          EXPECT_EQ(m.at(c.seed_x, c.seed_y), p);
        }
        EXPECT_EQ(got, oracle_sizes(m, p, conn)) << "seed " << seed << " conn " << conn;
        EXPECT_EQ(total, static_cast<std::size_t>(std::count(m.labels().begin(), m.labels().end(), p)));
      }
    }
  }
}

TEST(Components, DiagonalPairDependsOnConnectivity) {
  const PhaseMask m(2, 2, 1.0, {PhaseLabel::Void, PhaseLabel::Paste, PhaseLabel::Paste, PhaseLabel::Void});
  EXPECT_EQ(connected_components(m, PhaseLabel::Void, 4).size(), 2u);
  EXPECT_EQ(connected_components(m, PhaseLabel::Void, 8).size(), 1u);
  EXPECT_THROW(connected_components(m, PhaseLabel::Void, 6), Error);
}

TEST(Components, SeedsInRowMajorOrderAndBounds) {
  PhaseMask m(6, 4, 1.0,
              {PhaseLabel::Paste, PhaseLabel::Void, PhaseLabel::Paste, PhaseLabel::Paste, PhaseLabel::Paste, PhaseLabel::Void,
               PhaseLabel::Paste, PhaseLabel::Void, PhaseLabel::Void,  PhaseLabel::Paste, PhaseLabel::Paste, PhaseLabel::Paste,
               PhaseLabel::Paste, PhaseLabel::Paste, PhaseLabel::Paste, PhaseLabel::Paste, PhaseLabel::Paste, PhaseLabel::Paste,
               PhaseLabel::Void,  PhaseLabel::Paste, PhaseLabel::Paste, PhaseLabel::Paste, PhaseLabel::Paste, PhaseLabel::Paste});
  const auto c = connected_components(m, PhaseLabel::Void, 4);
  ASSERT_EQ(c.size(), 3u);
  EXPECT_EQ(c[0].seed_x, 1);
  EXPECT_EQ(c[0].seed_y, 0);
  EXPECT_EQ(c[0].pixel_count, 3u);
  EXPECT_EQ(c[0].bounds.x, 1);
  EXPECT_EQ(c[0].bounds.w, 2);
  EXPECT_EQ(c[0].bounds.h, 2);
  EXPECT_EQ(c[1].seed_x, 5);
  EXPECT_EQ(c[2].seed_y, 3);
}

TEST(AreaFilter, StrictThresholdAndTarget) {
  // 1 um pitch: a 100 px void has area exactly 100 um^2 and survives.
  std::vector<PhaseLabel> l(30 * 30, PhaseLabel::Paste);
  for (int y = 0; y < 10; ++y)
    for (int x = 0; x < 10; ++x) l[y * 30 + x] = PhaseLabel::Void;
  for (int x = 0; x < 9; ++x) l[20 * 30 + x] = PhaseLabel::Void;
  for (int y = 0; y < 11; ++y)
    for (int x = 17; x < 26; ++x) l[y * 30 + x] = PhaseLabel::Aggregate;  // 99 px < 10000
  const PhaseMask m(30, 30, 1.0, l);
  const auto f = filter_small_components(m);
  EXPECT_EQ(f.at(0, 0), PhaseLabel::Void);
  EXPECT_EQ(f.at(3, 20), PhaseLabel::Paste);
  EXPECT_EQ(f.at(20, 5), PhaseLabel::Paste);

  AreaFilterSpec spec;
  spec.target = PhaseLabel::Aggregate;
  spec.min_area_um2 = {{PhaseLabel::Void, 101.0}};
  const auto g = filter_small_components(m, spec);
  EXPECT_EQ(g.at(0, 0), PhaseLabel::Aggregate);
  EXPECT_EQ(g.at(20, 5), PhaseLabel::Aggregate);

  spec.min_area_um2 = {{PhaseLabel::Aggregate, 5.0}};
  EXPECT_THROW(filter_small_components(m, spec), Error);
  spec.target = PhaseLabel::Paste;
  spec.min_area_um2 = {{PhaseLabel::Void, -1.0}};
  EXPECT_THROW(filter_small_components(m, spec), Error);
}

TEST(AreaFilter, NestedSmallComponentsBothRelabelled) {
  std::vector<PhaseLabel> l(20 * 20, PhaseLabel::Paste);
  for (int y = 5; y < 10; ++y)
    for (int x = 5; x < 10; ++x) l[y * 20 + x] = PhaseLabel::Aggregate;
  l[7 * 20 + 7] = PhaseLabel::Void;
  const PhaseMask m(20, 20, 1.0, l);
  AreaFilterSpec spec;
  spec.min_area_um2 = {{PhaseLabel::Aggregate, 100.0}, {PhaseLabel::Void, 2.0}};
  const auto f = filter_small_components(m, spec);
  EXPECT_EQ(std::count(f.labels().begin(), f.labels().end(), PhaseLabel::Paste), 400);
}

TEST(AreaFilter, PhantomSpecks) {
  const auto ph = make_phantom({});
  ASSERT_EQ(ph.planted_void.size(), 3u);
  ASSERT_EQ(ph.planted_aggregate.size(), 356u);
  EXPECT_NEAR(3 * 5.3 * 5.3, 84.27, 1e-9);
  EXPECT_NEAR(356 * 5.3 * 5.3, 10000.04, 1e-9);
  const auto f = filter_small_components(ph.truth);
  for (auto [x, y] : ph.planted_void) EXPECT_EQ(f.at(x, y), PhaseLabel::Paste);
  for (auto [x, y] : ph.planted_aggregate) EXPECT_EQ(f.at(x, y), PhaseLabel::Aggregate);
}
