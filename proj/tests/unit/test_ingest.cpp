#include <cmath>
#include <fstream>

#include "doctest.h"
#include "sixmap/ingest.hpp"
#include "sixmap/textio.hpp"
#include "util.hpp"

using namespace sixmap;
using namespace sixmap::ingest;

namespace {

// A parallelogram in lat/lon: the projection is then affine.
PitchCalibration parallelogram() {
  PitchCalibration cal;
  const GeoPoint a{37.5665, 126.9780};
  const double dlat_b = 0.0002, dlon_b = 0.00118;
  const double dlat_d = 0.00061, dlon_d = -0.00015;
  cal.corners = {a, GeoPoint{a.lat + dlat_b, a.lon + dlon_b},
                 GeoPoint{a.lat + dlat_b + dlat_d, a.lon + dlon_b + dlon_d},
                 GeoPoint{a.lat + dlat_d, a.lon + dlon_d}};
  return cal;
}

PitchCalibration skewed() {
  PitchCalibration cal;
  cal.corners = {GeoPoint{37.5665, 126.9780}, GeoPoint{37.5667, 126.9792},
                 GeoPoint{37.5674, 126.9791}, GeoPoint{37.5671, 126.9778}};
  return cal;
}

MatchEvents events_of(std::initializer_list<MatchEvent> ev) {
  MatchEvents m;
  m.events = ev;
  return m;
}

}  // namespace

TEST_SUITE("ingest") {
  TEST_CASE("corners map to the pitch corners") {
    for (const auto& cal : {parallelogram(), skewed()}) {
      PitchProjection proj(cal);
      const Vec2 want[4] = {{0, 0}, {cal.length, 0}, {cal.length, cal.width}, {0, cal.width}};
      for (int i = 0; i < 4; ++i) {
        const Vec2 p = proj.project(cal.corners[i]);
        CHECK(std::abs(p.x - want[i].x) < 1e-6);
        CHECK(std::abs(p.y - want[i].y) < 1e-6);
      }
    }
  }

  TEST_CASE("geo centre projects to the pitch centre") {
    for (const auto& cal : {parallelogram(), skewed()}) {
      PitchProjection proj(cal);
      const Vec2 c = proj.project(proj.geo_center());
      CHECK(std::abs(c.x - cal.length / 2) < 1e-6);
      CHECK(std::abs(c.y - cal.width / 2) < 1e-6);
    }
  }

  TEST_CASE("quarter point of a parallelogram") {
    const auto cal = parallelogram();
    PitchProjection proj(cal);
    const auto& [a, b, c, d] = cal.corners;
    const GeoPoint q{a.lat + 0.25 * (b.lat - a.lat) + 0.25 * (d.lat - a.lat),
                     a.lon + 0.25 * (b.lon - a.lon) + 0.25 * (d.lon - a.lon)};
    const Vec2 p = proj.project(q);
    CHECK(std::abs(p.x - 0.25 * cal.length) < 1e-6);
    CHECK(std::abs(p.y - 0.25 * cal.width) < 1e-6);
  }

  TEST_CASE("projection round trip on a skewed quadrilateral") {
    PitchProjection proj(skewed());
    for (double x : {0.0, 13.0, 26.25, 52.5, 104.0}) {
      for (double y : {0.0, 17.0, 34.0, 67.5}) {
        const Vec2 back = proj.project(proj.unproject({x, y}));
        CHECK(std::abs(back.x - x) < 1e-6);
        CHECK(std::abs(back.y - y) < 1e-6);
      }
    }
  }

  TEST_CASE("calibration validation") {
    auto cal = skewed();
    std::swap(cal.corners[1], cal.corners[2]);
    CHECK_THROWS_AS(validate(cal), Error);
    auto bad = skewed();
    bad.width = 120;
    CHECK_THROWS_AS(validate(bad), Error);
    CHECK_NOTHROW(validate(skewed()));
  }

  TEST_CASE("second-half rotation") {
    const Vec2 r = rotate_second_half({10, 5}, 105, 68);
    CHECK(r == Vec2{95, 63});
    CHECK(rotate_second_half({52.5, 34}, 105, 68) == Vec2{52.5, 34});
    const Vec2 p{13.25, 61.5};
    CHECK(rotate_second_half(rotate_second_half(p, 105, 68), 105, 68) == p);
  }

  TEST_CASE("out of bounds margin") {
    CHECK_FALSE(out_of_bounds({-5, 0}, 105, 68));
    CHECK(out_of_bounds({-5.01, 0}, 105, 68));
    CHECK_FALSE(out_of_bounds({110, 73}, 105, 68));
    CHECK(out_of_bounds({50, 73.5}, 105, 68));
  }

  TEST_CASE("central difference") {
    const std::vector<double> t = {0.0, 0.1, 0.2};
    const std::vector<Vec2> s = {{0.0, 0.0}, {0.5, 0.0}, {1.0, 0.0}};
    DiffOptions opt;
    opt.smoothing_window = 1;
    const auto v = differentiate(t, s, opt);
    CHECK(std::abs(v[1].x - 5.0) < 1e-12);
    CHECK(std::abs(v[1].y) < 1e-12);
  }

  TEST_CASE("constant and linear motion") {
    std::vector<double> t;
    std::vector<Vec2> still, line;
    for (int i = 0; i < 50; ++i) {
      t.push_back(0.1 * i);
      still.push_back({30.0, 20.0});
      line.push_back({2.0 * t.back(), -t.back()});
    }
    for (int w : {1, 3, 5, 9}) {
      DiffOptions opt;
      opt.smoothing_window = w;
      for (auto v : differentiate(t, still, opt)) {
        CHECK(std::abs(v.x) < 1e-12);
        CHECK(std::abs(v.y) < 1e-12);
      }
      const auto v = differentiate(t, line, opt);
      for (std::size_t i = 1; i + 1 < v.size(); ++i) {
        CHECK(std::abs(v[i].x - 2.0) < 1e-9);
        CHECK(std::abs(v[i].y + 1.0) < 1e-9);
      }
    }
  }

  TEST_CASE("gaps split segments") {
    const std::vector<double> t = {0.0, 0.1, 0.2, 5.0, 10.0, 10.1};
    const std::vector<Vec2> s = {{0, 0}, {1, 0}, {2, 0}, {50, 0}, {0, 0}, {0, 3}};
    DiffOptions opt;
    opt.smoothing_window = 1;
    const auto v = differentiate(t, s, opt);
    CHECK(std::abs(v[0].x - 10.0) < 1e-9);
    CHECK(std::abs(v[2].x - 10.0) < 1e-9);
    CHECK(std::isnan(v[3].x));
    CHECK(std::abs(v[4].y - 30.0) < 1e-9);
    CHECK(std::abs(v[5].y - 30.0) < 1e-9);
  }

  TEST_CASE("phase segmentation with a substitution") {
    const auto ev = events_of({{EventType::kHalfStart, 0, "A"},
                               {EventType::kHalfEnd, 2700, "A"},
                               {EventType::kHalfStart, 2700, "A"},
                               {EventType::kHalfEnd, 5400, "A"},
                               {EventType::kSubstitution, 3600, "A"}});
    const auto p = segment_phases(5400, ev);
    REQUIRE(p.size() == 3);
    CHECK(p[0] == PhaseInterval{0, 2700, 0});
    CHECK(p[1] == PhaseInterval{2700, 3600, 1});
    CHECK(p[2] == PhaseInterval{3600, 5400, 1});
  }

  TEST_CASE("short trailing phase is absorbed") {
    const auto ev = events_of({{EventType::kHalfEnd, 2700, "A"},
                               {EventType::kHalfStart, 2700, "A"},
                               {EventType::kSubstitution, 87 * 60, "A"}});
    const auto p = segment_phases(5400, ev);
    REQUIRE(p.size() == 2);
    CHECK(p[1] == PhaseInterval{2700, 5400, 1});
  }

  TEST_CASE("short leading phase merges forward and halves stay apart") {
    const auto ev = events_of({{EventType::kHalfEnd, 2700, "A"},
                               {EventType::kSubstitution, 300, "A"},
                               {EventType::kSubstitution, 2650, "A"}});
    const auto p = segment_phases(5400, ev);
    REQUIRE(p.size() == 2);
    CHECK(p[0] == PhaseInterval{0, 2700, 0});
    CHECK(p[1] == PhaseInterval{2700, 5400, 1});
  }

  TEST_CASE("no events gives the two halves") {
    const auto p = segment_phases(5400, MatchEvents{});
    REQUIRE(p.size() == 2);
    CHECK(p[0] == PhaseInterval{0, 2700, 0});
    CHECK(p[1] == PhaseInterval{2700, 5400, 1});
  }

  TEST_CASE("every phase is longer than the minimum") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 200; ++trial) {
      MatchEvents ev;
      ev.events.push_back({EventType::kHalfEnd, 2700, "A"});
      const int n = static_cast<int>(rng() % 6);
      for (int i = 0; i < n; ++i) {
        ev.events.push_back({EventType::kSubstitution, 1.0 + static_cast<double>(rng() % 5398), "A"});
      }
      const auto p = segment_phases(5400, ev);
      double covered = 0;
      for (std::size_t i = 0; i < p.size(); ++i) {
        CHECK(p[i].length() > 600);
        covered += p[i].length();
        if (i > 0) CHECK(p[i].t0 == p[i - 1].t1);
      }
      CHECK(covered == 5400);
    }
  }

  TEST_CASE("events outside the match are rejected") {
    const auto ev = events_of({{EventType::kSubstitution, 6000, "A"}});
    CHECK_THROWS_AS(segment_phases(5400, ev), Error);
  }

  TEST_CASE("build_phases rotates the second half and keeps 10 Hz samples") {
    RawMatch m;
    m.match_id = "M1";
    auto& tr = m.players["p1"];
    tr.team = "A";
    for (int i = 0; i < 24000; ++i) {
      tr.t.push_back(i / 10.0);
      tr.xy.push_back({10.0 + 0.001 * (i % 100), 5.0});
      tr.speed.push_back(0.0);
    }
    MatchEvents ev;
    ev.events = {{EventType::kHalfStart, 0, "A"},
                 {EventType::kHalfEnd, 1200, "A"},
                 {EventType::kHalfStart, 1200, "A"},
                 {EventType::kHalfEnd, 2400, "A"}};
    IngestTally tally;
    const auto phases = build_phases(m, ev, IngestOptions{}, &tally);
    REQUIRE(phases.size() == 2);
    CHECK(phases[0].phase_id == "M1-P0");
    CHECK(phases[1].half == 1);
    REQUIRE(phases[1].players.size() == 1);
    const auto& second = phases[1].players[0];
    CHECK(second.size() == 12000);
    CHECK(std::abs(second.pos[0].x - 95.0) < 0.2);
    CHECK(std::abs(second.pos[0].y - 63.0) < 1e-9);
    CHECK(std::abs(phases[0].players[0].pos[0].x - 10.0) < 0.2);
    CHECK(tally.samples == 24000);
  }

  TEST_CASE("attack direction from events decides rotation") {
    testutil::TempDir dir("events");
    textio::write_file_atomic(dir / "events.csv",
                              "match_id,event_type,t,team,attack_dir\n"
                              "M1,half_start,0,A,-x\n"
                              "M1,half_end,2700,A,\n"
                              "M1,half_start,2700,A,+x\n"
                              "M1,half_end,5400,A,\n"
                              "M1,substitution,3600,B,\n");
    const auto ev = read_events(dir / "events.csv");
    REQUIRE(ev.count("M1") == 1);
    const auto& m = ev.at("M1");
    CHECK(m.events.size() == 5);
    CHECK(m.needs_rotation("A", 0));
    CHECK_FALSE(m.needs_rotation("A", 1));
    CHECK_FALSE(m.needs_rotation("B", 0));
    CHECK(m.needs_rotation("B", 1));
  }

  TEST_CASE("tracking reader in both coordinate modes") {
    testutil::TempDir dir("tracking");
    textio::write_file_atomic(dir / "xy.csv",
                              "match_id,team,player_id,t,x,y,speed\n"
                              "M1,A,p1,0.0,1.5,2.5,0\n"
                              "M1,A,p1,0.1,1.6,2.5,1\n"
                              "M2,B,p2,0.0,3,4,0\n");
    const auto xy = read_tracking(dir / "xy.csv");
    REQUIRE(xy.size() == 2);
    CHECK(xy.at("M1").players.at("p1").xy.size() == 2);
    CHECK(xy.at("M2").players.at("p2").team == "B");

    const auto cal = skewed();
    PitchProjection proj(cal);
    const GeoPoint g = proj.unproject({40.0, 30.0});
    textio::write_file_atomic(dir / "geo.csv", "match_id,player_id,t,lat,lon\nM1,p1,0," +
                                                  textio::format_double(g.lat) + "," +
                                                  textio::format_double(g.lon) + "\n");
    CHECK_THROWS_AS(read_tracking(dir / "geo.csv"), Error);
    const auto geo = read_tracking(dir / "geo.csv", &cal);
    const Vec2 p = geo.at("M1").players.at("p1").xy[0];
    CHECK(std::abs(p.x - 40.0) < 1e-4);
    CHECK(std::abs(p.y - 30.0) < 1e-4);
  }

  TEST_CASE("decreasing time is malformed") {
    testutil::TempDir dir("tracking-bad");
    textio::write_file_atomic(dir / "t.csv",
                              "match_id,player_id,t,x,y\nM1,p1,0.2,1,1\nM1,p1,0.1,1,1\n");
    try {
      read_tracking(dir / "t.csv");
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kMalformedInput);
    }
  }

  TEST_CASE("phase file round trip") {
    testutil::TempDir dir("phase");
    TrackedPhase ph;
    ph.phase_id = "M1-P0";
    ph.match_id = "M1";
    ph.t0 = 0;
    ph.t1 = 1.5;
    PlayerSeries s;
    s.player_id = "p1";
    s.team = "A";
    s.t = {0.0, 0.1};
    s.pos = {{1.25, 2.5}, {1.5, 2.5}};
    s.vel = {{std::nan(""), std::nan("")}, {2.5, 0.0}};
    s.out_of_bounds = {false, true};
    ph.players.push_back(s);
    write_phase(dir / "p.csv", ph);
    const auto back = read_phase(dir / "p.csv");
    CHECK(back.phase_id == "M1-P0");
    CHECK(back.t1 == 1.5);
    REQUIRE(back.players.size() == 1);
    CHECK(back.players[0].pos[1] == Vec2{1.5, 2.5});
    CHECK(std::isnan(back.players[0].vel[0].x));
    CHECK(back.players[0].out_of_bounds[1]);
  }
}
