#include <cmath>
#include <map>
#include <set>

#include "doctest.h"
#include "sixmap/common.hpp"
#include "sixmap/ingest.hpp"
#include "sixmap/synth.hpp"
#include "sixmap/textio.hpp"
#include "util.hpp"

using namespace sixmap;
using namespace sixmap::synth;

namespace {

LeagueConfig short_league() {
  LeagueConfig c;
  c.teams = 2;
  c.matches_per_team = 2;
  c.half_duration = 1300.0;
  c.cuts_first_half = 1;
  c.cuts_second_half = 1;
  c.multi_role_fraction = 0.5;
  c.seed = 99;
  return c;
}

}  // namespace

TEST_SUITE("synth") {
  TEST_CASE("configs that cannot field a formation are rejected") {
    auto c = short_league();
    c.players_per_team = 9;
    CHECK_THROWS_AS(plan_league(c), Error);
    c.players_per_team = 11;
    CHECK_THROWS_AS(plan_league(c), Error);
    c = short_league();
    c.multi_role_fraction = 1.5;
    CHECK_THROWS_AS(plan_league(c), Error);
    c = short_league();
    c.width = 120.0;
    CHECK_THROWS_AS(plan_league(c), Error);
  }

  TEST_CASE("league plan ground truth") {
    const auto lg = plan_league(short_league());
    CHECK(lg.players.size() == 20);
    CHECK(lg.matches.size() == 4);
    // Two cuts split the match into four phases of 650 s.
    CHECK(lg.truth.size() == 20 * 2 * 4);
    std::map<std::string, std::set<std::string>> phases_of;
    for (const auto& r : lg.truth) phases_of[r.player_id].insert(r.phase_id);
    CHECK(phases_of.size() == 20);
    for (const auto& [pid, ph] : phases_of) CHECK(ph.size() == 8);

    int multi = 0;
    std::map<std::string, const PlayerTruth*> by_id;
    for (const auto& p : lg.players) {
      by_id[p.player_id] = &p;
      multi += p.multi_role;
      // The second role sits far enough away to form its own cluster.
      CHECK((p.alt_home - p.home).norm() > 20.0);
    }
    CHECK(multi > 0);
    CHECK(multi < 20);
    for (const auto& r : lg.truth) {
      const auto& p = *by_id.at(r.player_id);
      const int match_index = r.match_id.back() - '1';
      const int expect = p.multi_role && match_index % 2 == 1 ? 1 : 0;
      CHECK(r.cluster == expect);
      CHECK((r.home - (expect ? p.alt_home : p.home)).norm() == 0.0);
    }
  }

  TEST_CASE("same seed gives the same plan, another seed a different one") {
    const auto a = plan_league(short_league());
    const auto b = plan_league(short_league());
    auto c_cfg = short_league();
    c_cfg.seed = 100;
    const auto c = plan_league(c_cfg);
    bool differs = false;
    for (std::size_t i = 0; i < a.players.size(); ++i) {
      CHECK(a.players[i].style.offset.x == b.players[i].style.offset.x);
      CHECK(a.players[i].style.heading == b.players[i].style.heading);
      differs |= a.players[i].style.heading != c.players[i].style.heading;
    }
    CHECK(differs);
  }

  TEST_CASE("simulated tracks") {
    const auto lg = plan_league(short_league());
    const auto m = simulate_match(lg, 1);
    CHECK(m.match_id == lg.matches[1].match_id);
    CHECK(m.players.size() == 10);
    const std::size_t n_half = 13000;
    for (const auto& [pid, tr] : m.players) {
      REQUIRE(tr.t.size() == 2 * n_half);
      for (std::size_t k = 0; k < tr.t.size(); ++k) {
        CHECK(tr.t[k] == doctest::Approx(0.1 * static_cast<double>(k)));
        REQUIRE(tr.xy[k].x >= 0.0);
        REQUIRE(tr.xy[k].x <= 105.0);
        REQUIRE(tr.xy[k].y >= 0.0);
        REQUIRE(tr.xy[k].y <= 68.0);
        // Millimetre rounding.
        REQUIRE(std::abs(tr.xy[k].x * 1000.0 - std::round(tr.xy[k].x * 1000.0)) < 1e-6);
      }
      // Speeds are central differences of the emitted positions within each
      // half, one-sided at the half boundaries.
      for (std::size_t h = 0; h < 2; ++h) {
        const std::size_t a = h * n_half, b = a + n_half;
        for (std::size_t k = a; k < b; k += 97) {
          const std::size_t lo = k > a ? k - 1 : k, hi = k + 1 < b ? k + 1 : k;
          const double fd = (tr.xy[hi] - tr.xy[lo]).norm() / (tr.t[hi] - tr.t[lo]);
          REQUIRE(tr.speed[k] == doctest::Approx(std::min(fd, 12.0)).epsilon(1e-12));
        }
        CHECK(tr.speed[b - 1] ==
              doctest::Approx(std::min(12.0, (tr.xy[b - 1] - tr.xy[b - 2]).norm() / (tr.t[b - 1] - tr.t[b - 2]))).epsilon(1e-12));
      }
    }
  }

  TEST_CASE("players hold their homes after direction normalisation") {
    auto cfg = short_league();
    cfg.multi_role_fraction = 1.0;
    const auto lg = plan_league(cfg);
    for (std::size_t mi : {std::size_t{0}, std::size_t{1}}) {
      const auto raw = simulate_match(lg, mi);
      const auto ev = match_events(lg, mi);
      const auto phases = ingest::build_phases(raw, ev, {});
      REQUIRE(phases.size() == 4);
      for (const auto& ph : phases) {
        for (const auto& ps : ph.players) {
          const PlayerTruth* truth = nullptr;
          for (const auto& p : lg.players) {
            if (p.player_id == ps.player_id) truth = &p;
          }
          REQUIRE(truth != nullptr);
          Vec2 mean;
          std::size_t cnt = 0;
          for (const auto& s : ps.pos) {
            mean = mean + s;
            ++cnt;
          }
          mean = (1.0 / static_cast<double>(cnt)) * mean;
          const Vec2 home = (lg.matches[mi].index % 2 == 1 ? truth->alt_home : truth->home) + truth->style.offset;
          CHECK((mean - home).norm() < 12.0);
        }
      }
    }
  }

  TEST_CASE("events describe halves, cuts and attack directions") {
    const auto lg = plan_league(short_league());
    const auto ev = match_events(lg, 2);
    const auto ph = ingest::segment_phases(2600.0, ev);
    REQUIRE(ph.size() == 4);
    CHECK(ph[0].t0 == 0.0);
    CHECK(ph[1].t0 == 650.0);
    CHECK(ph[2].half == 1);
    CHECK(ph[3].t1 == 2600.0);
    const auto& dirs = ev.attacks_positive_x.at(lg.matches[2].team);
    CHECK(dirs[0] == lg.matches[2].first_half_positive_x);
    CHECK(dirs[1] != dirs[0]);
  }

  TEST_CASE("generated files are reproducible and readable") {
    testutil::TempDir a("synth-a"), b("synth-b");
    auto cfg = short_league();
    cfg.teams = 1;
    cfg.matches_per_team = 1;
    const auto lg = generate_league(cfg, a.path());
    generate_league(cfg, b.path());
    for (const char* f : {"tracking.csv", "events.csv", "truth.csv"}) {
      INFO(f);
      CHECK(textio::read_file(a / f) == textio::read_file(b / f));
    }
    const auto tracking = ingest::read_tracking(a / "tracking.csv");
    REQUIRE(tracking.size() == 1);
    const auto sim = simulate_match(lg, 0);
    const auto& read = tracking.begin()->second;
    REQUIRE(read.players.size() == sim.players.size());
    for (const auto& [pid, tr] : sim.players) {
      const auto& r = read.players.at(pid);
      CHECK(r.team == tr.team);
      REQUIRE(r.xy.size() == tr.xy.size());
      for (std::size_t k = 0; k < tr.xy.size(); k += 101) {
        CHECK(r.xy[k].x == tr.xy[k].x);
        CHECK(r.speed[k] == tr.speed[k]);
      }
    }
    const auto events = ingest::read_events(a / "events.csv");
    const auto ph = ingest::segment_phases(2600.0, events.begin()->second);
    CHECK(ph.size() == 4);
    const auto truth = read_truth(a / "truth.csv");
    REQUIRE(truth.size() == lg.truth.size());
    CHECK(truth[7].phase_id == lg.truth[7].phase_id);
    CHECK(truth[7].home.x == lg.truth[7].home.x);
  }

  TEST_CASE("geographic output projects back onto the simulated pitch") {
    testutil::TempDir dir("synth-geo");
    auto cfg = short_league();
    cfg.teams = 1;
    cfg.matches_per_team = 1;
    cfg.half_duration = 650.0;
    cfg.cuts_first_half = 0;
    cfg.cuts_second_half = 0;
    cfg.geo = true;
    const double mlat = 111132.954, mlon = 111319.49 * std::cos(37.5 * 3.14159265358979 / 180.0);
    auto at = [&](double x, double y) { return ingest::GeoPoint{37.5 + y / mlat, 127.0 + x / mlon}; };
    cfg.calibration.corners = {at(0, 0), at(105, 0), at(105, 68), at(0, 68)};
    const auto lg = generate_league(cfg, dir.path());
    const auto cal = ingest::read_calibration(dir / "calibration.json");
    const auto tracking = ingest::read_tracking(dir / "tracking.csv", &cal);
    const auto sim = simulate_match(lg, 0);
    for (const auto& [pid, tr] : sim.players) {
      const auto& r = tracking.begin()->second.players.at(pid);
      for (std::size_t k = 0; k < tr.xy.size(); k += 53) REQUIRE((r.xy[k] - tr.xy[k]).norm() < 1e-3);
    }
  }
}
