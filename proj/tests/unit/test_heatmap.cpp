#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "sixmap/heatmap.hpp"
#include "util.hpp"

using namespace sixmap;
using namespace sixmap::heatmap;

namespace {

HeatmapPair random_pair(const std::string& entity, const std::string& phase, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> x(0, 105), y(0, 68), v(-14, 14);
  std::vector<Vec2> pos, vel;
  const int n = 20 + static_cast<int>(rng() % 40);
  for (int i = 0; i < n; ++i) {
    pos.push_back({x(rng), y(rng)});
    vel.push_back({v(rng), v(rng)});
  }
  HeatmapPair p;
  p.entity_id = entity;
  p.record_id = entity + "|" + phase;
  p.sources = {phase};
  p.location = location_heatmap(pos, 105, 68);
  p.direction = direction_heatmap(vel);
  return p;
}

std::vector<HeatmapPair> entity_pairs(const std::string& entity, int n, std::mt19937_64& rng) {
  std::vector<HeatmapPair> out;
  for (int i = 0; i < n; ++i) out.push_back(random_pair(entity, "ph" + std::to_string(100 + i), rng));
  return out;
}

}  // namespace

TEST_SUITE("heatmap") {
  TEST_CASE("centre point binning") {
    const std::vector<Vec2> p = {{52.5, 34}};
    const auto g = location_heatmap(p, 105, 68);
    CHECK(g.total() == 1);
    CHECK(g.at(17, 25) == 1);
    long long sum = 0;
    for (auto c : g.counts()) sum += c;
    CHECK(sum == 1);
  }

  TEST_CASE("empty input gives a zero grid") {
    const auto g = location_heatmap({}, 105, 68);
    CHECK(g.total() == 0);
    CHECK(std::all_of(g.counts().begin(), g.counts().end(), [](int c) { return c == 0; }));
    const auto n = normalized(g);
    CHECK(std::all_of(n.begin(), n.end(), [](float c) { return c == 0.0f; }));
  }

  TEST_CASE("closed upper edge and dropped points") {
    const std::vector<Vec2> p = {{105, 68}, {0, 0}, {-0.1, 10}, {50, 68.2}};
    std::size_t dropped = 0;
    const auto g = location_heatmap(p, 105, 68, &dropped);
    CHECK(g.at(kRows - 1, kCols - 1) == 1);
    CHECK(g.at(0, 0) == 1);
    CHECK(dropped == 2);
    CHECK(g.total() == 2);
  }

  TEST_CASE("bin index") {
    CHECK(bin_index(0.0, 0, 1, 4) == 0);
    CHECK(bin_index(0.25, 0, 1, 4) == 1);
    CHECK(bin_index(1.0, 0, 1, 4) == 3);
    CHECK(bin_index(1.0001, 0, 1, 4) == -1);
    CHECK(bin_index(-0.0001, 0, 1, 4) == -1);
    CHECK(bin_index(std::nan(""), 0, 1, 4) == -1);
  }

  TEST_CASE("direction threshold, binning and clamping") {
    CHECK(direction_heatmap(std::vector<Vec2>{{3, 0}}).total() == 0);
    const auto g = direction_heatmap(std::vector<Vec2>{{6, 0}});
    CHECK(g.at(17, 37) == 1);
    const auto c = direction_heatmap(std::vector<Vec2>{{20, 0}});
    CHECK(c.at(17, 49) == 1);
    const auto d = direction_heatmap(std::vector<Vec2>{{-20, -20}});
    CHECK(d.at(0, 0) == 1);
    CHECK(direction_heatmap(std::vector<Vec2>{{4, 0}}).total() == 1);
    CHECK(direction_heatmap(std::vector<Vec2>{{std::nan(""), 5}}).total() == 0);
  }

  TEST_CASE("adding grids") {
    std::mt19937_64 rng(1);
    const auto a = random_pair("e", "a", rng).location;
    const auto b = random_pair("e", "b", rng).location;
    const auto c = random_pair("e", "c", rng).location;
    CHECK(add(a, HeatmapGrid(a.bounds())) == a);
    CHECK(add(a, b) == add(b, a));
    CHECK(add(add(a, b), c) == add(a, add(b, c)));
    CHECK(add(a, b).total() == a.total() + b.total());
    CHECK_THROWS_AS(add(a, HeatmapGrid(direction_bounds())), Error);
  }

  TEST_CASE("heatmap of a union is the sum of the parts") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> x(-10, 115), y(-10, 78), v(-15, 15);
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<Vec2> pos(500), vel(500);
      for (auto& p : pos) p = {x(rng), y(rng)};
      for (auto& p : vel) p = {v(rng), v(rng)};
      const std::size_t cut = rng() % 501;
      const std::span<const Vec2> ps(pos), vs(vel);
      CHECK(location_heatmap(ps, 105, 68) ==
            add(location_heatmap(ps.first(cut), 105, 68), location_heatmap(ps.subspan(cut), 105, 68)));
      CHECK(direction_heatmap(vs) == add(direction_heatmap(vs.first(cut)), direction_heatmap(vs.subspan(cut))));
    }
  }

  TEST_CASE("normalized grids sum to one") {
    std::mt19937_64 rng(3);
    const auto p = random_pair("e", "a", rng);
    const auto n = normalized(p.location);
    double s = 0;
    for (float c : n) s += c;
    CHECK(std::abs(s - 1.0) < 1e-5);
  }

  TEST_CASE("phase heatmaps skip out-of-bounds samples") {
    ingest::PlayerSeries s;
    s.player_id = "p1";
    s.team = "A";
    s.t = {0.0, 0.1, 0.2};
    s.pos = {{10, 10}, {20, 20}, {-30, 10}};
    s.vel = {{6, 0}, {6, 0}, {6, 0}};
    s.out_of_bounds = {false, false, true};
    PhaseHeatmapTally tally;
    const auto p = phase_heatmaps(s, "M1-P0", 105, 68, {}, &tally);
    CHECK(p.location.total() == 2);
    CHECK(p.direction.total() == 2);
    CHECK(tally.out_of_bounds == 1);
    CHECK(p.record_id == phase_record_id("M1-P0", "p1"));
    CHECK(p.sources == std::vector<std::string>{"M1-P0"});
  }

  TEST_CASE("25 phases split 10 / 5 / 10") {
    std::mt19937_64 rng(4);
    auto pairs = entity_pairs("big", 25, rng);
    const auto small = entity_pairs("small", 12, rng);
    const auto mid = entity_pairs("mid", 16, rng);
    pairs.insert(pairs.end(), small.begin(), small.end());
    pairs.insert(pairs.end(), mid.begin(), mid.end());
    const auto s = split_dataset(pairs, 99);
    auto count = [&](const std::vector<std::size_t>& v, const std::string& e) {
      return std::count_if(v.begin(), v.end(), [&](std::size_t i) { return pairs[i].entity_id == e; });
    };
    CHECK(count(s.test, "big") == 10);
    CHECK(count(s.validation, "big") == 5);
    CHECK(count(s.train, "big") == 10);
    CHECK(count(s.test, "small") == 0);
    CHECK(count(s.validation, "small") == 0);
    CHECK(count(s.train, "small") == 12);
    CHECK(count(s.test, "mid") == 0);
    CHECK(count(s.validation, "mid") == 5);
    CHECK(count(s.train, "mid") == 11);
    std::set<std::size_t> all(s.train.begin(), s.train.end());
    all.insert(s.validation.begin(), s.validation.end());
    all.insert(s.test.begin(), s.test.end());
    CHECK(all.size() == pairs.size());
    CHECK(s.phases_per_entity.at("big") == 25);

    // Input order does not matter.
    auto rev = pairs;
    std::reverse(rev.begin(), rev.end());
    const auto r = split_dataset(rev, 99);
    std::set<std::string> a, b;
    for (auto i : s.test) a.insert(pairs[i].record_id);
    for (auto i : r.test) b.insert(rev[i].record_id);
    CHECK(a == b);
  }

  TEST_CASE("split thresholds at the boundary") {
    std::mt19937_64 rng(5);
    const auto s20 = split_dataset(entity_pairs("e", 20, rng), 1);
    CHECK(s20.test.size() == 10);
    CHECK(s20.validation.size() == 0);
    CHECK(s20.train.size() == 10);
    const auto s19 = split_dataset(entity_pairs("e", 19, rng), 1);
    CHECK(s19.test.size() == 0);
    CHECK(s19.validation.size() == 5);
    CHECK(s19.train.size() == 14);
    const auto s14 = split_dataset(entity_pairs("e", 14, rng), 1);
    CHECK(s14.train.size() == 14);
  }

  TEST_CASE("split size arithmetic") {
    CHECK(332 * 5 == 1660);
    CHECK(308 * 10 == 3080);
    CHECK(13213 + 1660 + 3080 == 17953);
  }

  TEST_CASE("exhaustive augmentation counts") {
    std::mt19937_64 rng(6);
    CHECK(augment_exhaustive(entity_pairs("e", 5, rng)).size() == 10);
    CHECK(augment_exhaustive(entity_pairs("e", 10, rng)).size() == 120);
    CHECK(augment_exhaustive(entity_pairs("e", 2, rng)).empty());
    CHECK(binomial(10, 3) == 120);
    CHECK(binomial(5, 3) == 10);
    CHECK(binomial(3, 5) == 0);
    CHECK(binomial(60, 30) == 118264581564861424ULL);
  }

  TEST_CASE("three phases augment to their sum") {
    std::mt19937_64 rng(7);
    const auto p = entity_pairs("e", 3, rng);
    const auto a = augment_exhaustive(p);
    REQUIRE(a.size() == 1);
    CHECK(a[0].location == add(add(p[0].location, p[1].location), p[2].location));
    CHECK(a[0].direction == add(add(p[0].direction, p[1].direction), p[2].direction));
    CHECK(a[0].sources == std::vector<std::string>{"ph100", "ph101", "ph102"});
  }

  TEST_CASE("exhaustive augmentation is lexicographic and distinct") {
    std::mt19937_64 rng(8);
    const auto p = entity_pairs("e", 6, rng);
    const auto a = augment_exhaustive(p);
    REQUIRE(a.size() == 20);
    CHECK(a.front().sources == std::vector<std::string>{"ph100", "ph101", "ph102"});
    CHECK(a.back().sources == std::vector<std::string>{"ph103", "ph104", "ph105"});
    std::set<std::string> ids;
    for (const auto& x : a) ids.insert(x.record_id);
    CHECK(ids.size() == 20);
  }

  TEST_CASE("random augmentation caps and determinism") {
    std::mt19937_64 rng(9);
    const auto p3 = entity_pairs("e", 3, rng);
    for (std::uint64_t s = 0; s < 20; ++s) CHECK(augment_random(p3, s).size() == 1);
    const auto p4 = entity_pairs("e", 4, rng);
    for (std::uint64_t s = 0; s < 20; ++s) CHECK(augment_random(p4, s).size() <= 4);
    const auto p12 = entity_pairs("e", 12, rng);
    const auto a = augment_random(p12, 42);
    const auto b = augment_random(p12, 42);
    REQUIRE(a.size() == b.size());
    CHECK(a.size() <= 48);
    std::set<std::string> ids;
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].record_id == b[i].record_id);
      CHECK(a[i].location == b[i].location);
      ids.insert(a[i].record_id);
    }
    CHECK(ids.size() == a.size());
  }

  TEST_CASE("store round trip") {
    std::mt19937_64 rng(10);
    const auto p = entity_pairs("e#0", 4, rng);
    testutil::TempDir dir("store");
    write_store(dir / "h.tsv", p);
    const auto back = read_store(dir / "h.tsv");
    REQUIRE(back.size() == p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
      CHECK(back[i].record_id == p[i].record_id);
      CHECK(back[i].entity_id == p[i].entity_id);
      CHECK(back[i].sources == p[i].sources);
      CHECK(back[i].location == p[i].location);
      CHECK(back[i].direction == p[i].direction);
    }
    write_manifest(dir / "m.txt", {"a", "b"});
    CHECK(read_manifest(dir / "m.txt") == std::vector<std::string>{"a", "b"});
  }
}
