#include "sixmap/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "json.hpp"
#include "sixmap/parallel.hpp"
#include "sixmap/random.hpp"
#include "sixmap/textio.hpp"

namespace sixmap::synth {
namespace {

constexpr double kDt = 0.1;
constexpr double kMaxSpeed = 12.0;
constexpr double kAltShift = 22.0;

double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

// Smooth stationary wander: an Ornstein-Uhlenbeck velocity integrated into a
// mean-reverting position.
struct Wander {
  double sigma_u, tau_u, tau_x;
  Vec2 u, x;

  void step(Rng& rng) {
    const double kick = sigma_u * std::sqrt(2.0 * kDt / tau_u);
    u.x += -u.x * kDt / tau_u + kick * standard_normal(rng);
    u.y += -u.y * kDt / tau_u + kick * standard_normal(rng);
    x.x += (u.x - x.x / tau_x) * kDt;
    x.y += (u.y - x.y / tau_x) * kDt;
  }
};

double round_mm(double v) { return std::round(v * 1000.0) / 1000.0; }

std::string pad(int v) { return fmt::format("{:02d}", v + 1); }

}  // namespace

std::vector<Vec2> formation_slots(double length, double width) {
  const double lx = length / 105.0, wy = width / 68.0;
  std::vector<Vec2> s;
  for (double y : {10.0, 26.0, 42.0, 58.0}) s.push_back({25.0 * lx, y * wy});
  for (double y : {10.0, 26.0, 42.0, 58.0}) s.push_back({48.0 * lx, y * wy});
  for (double y : {26.0, 42.0}) s.push_back({70.0 * lx, y * wy});
  return s;
}

League plan_league(const LeagueConfig& cfg) {
  const auto slots = formation_slots(cfg.length, cfg.width);
  require(cfg.teams >= 1 && cfg.matches_per_team >= 1, "synth: need at least one team and one match");
  require(cfg.players_per_team >= static_cast<int>(slots.size()),
          fmt::format("synth: {} players per team cannot fill {} formation slots", cfg.players_per_team,
                      slots.size()));
  require(cfg.players_per_team == static_cast<int>(slots.size()),
          "synth: every squad member plays every match, so players_per_team must equal the slot count");
  require(cfg.half_duration > 0.0 && cfg.cuts_first_half >= 0 && cfg.cuts_second_half >= 0,
          "synth: invalid match schedule");
  require(cfg.multi_role_fraction >= 0.0 && cfg.multi_role_fraction <= 1.0,
          "synth: multi_role_fraction outside [0, 1]");
  require(cfg.style_separation >= 0.0, "synth: style_separation must be non-negative");
  require(cfg.length > cfg.width && cfg.width > 0.0, "synth: pitch must satisfy L > W > 0");

  League lg;
  lg.config = cfg;
  const double sep = cfg.style_separation;
  for (int t = 0; t < cfg.teams; ++t) {
    const std::string team = "T" + pad(t);
    for (int p = 0; p < cfg.players_per_team; ++p) {
      PlayerTruth pl;
      pl.player_id = team + "-P" + pad(p);
      pl.team = team;
      pl.slot = p;
      Rng rng(derive_seed(cfg.seed, "style", pl.player_id));
      pl.home = slots[static_cast<std::size_t>(p)];
      const double shift = pl.home.x < cfg.length / 2.0 ? kAltShift : -kAltShift;
      pl.alt_home = {pl.home.x + shift, pl.home.y};
      pl.multi_role = uniform01(rng) < cfg.multi_role_fraction;
      auto& s = pl.style;
      const double r = 6.0 * sep * std::sqrt(uniform01(rng));
      const double a = uniform(rng, 0.0, 2.0 * std::numbers::pi);
      s.offset = {r * std::cos(a), r * std::sin(a)};
      s.jitter = 1.2 + 0.4 * sep * uniform(rng, -1.0, 1.0);
      s.run_rate = std::max(0.3, 1.6 + 1.0 * sep * uniform(rng, -1.0, 1.0));
      s.run_speed = std::clamp(6.5 + 1.5 * sep * uniform(rng, -1.0, 1.0), 4.5, 9.0);
      s.run_speed_std = 0.5;
      s.run_duration = std::max(1.0, 2.5 + 1.0 * sep * uniform(rng, -1.0, 1.0));
      s.heading = uniform(rng, -std::numbers::pi, std::numbers::pi);
      s.focus = std::clamp(0.5 + 0.4 * sep * uniform01(rng), 0.0, 0.95);
      lg.players.push_back(pl);
    }
  }

  const double half = cfg.half_duration;
  for (int t = 0; t < cfg.teams; ++t) {
    for (int m = 0; m < cfg.matches_per_team; ++m) {
      MatchPlan mp;
      mp.team = "T" + pad(t);
      mp.match_id = mp.team + "-M" + pad(m);
      mp.index = m;
      Rng rng(derive_seed(cfg.seed, "match-plan", mp.match_id));
      mp.first_half_positive_x = uniform01(rng) < 0.5;
      for (int c = 1; c <= cfg.cuts_first_half; ++c) {
        mp.substitutions.push_back(std::round(10.0 * half * c / (cfg.cuts_first_half + 1)) / 10.0);
      }
      for (int c = 1; c <= cfg.cuts_second_half; ++c) {
        mp.substitutions.push_back(half + std::round(10.0 * half * c / (cfg.cuts_second_half + 1)) / 10.0);
      }
      lg.matches.push_back(mp);
    }
  }

  // Ground truth follows the phase segmentation that ingest derives from the
  // emitted events.
  for (std::size_t m = 0; m < lg.matches.size(); ++m) {
    const auto& mp = lg.matches[m];
    const auto phases = ingest::segment_phases(2.0 * half, match_events(lg, m));
    for (const auto& pl : lg.players) {
      if (pl.team != mp.team) continue;
      const bool alt = pl.multi_role && mp.index % 2 == 1;
      for (std::size_t k = 0; k < phases.size(); ++k) {
        lg.truth.push_back({pl.player_id, pl.team, mp.match_id, fmt::format("{}-P{}", mp.match_id, k),
                            pl.slot, alt ? 1 : 0, alt ? pl.alt_home : pl.home});
      }
    }
  }
  return lg;
}

ingest::MatchEvents match_events(const League& league, std::size_t match) {
  const auto& mp = league.matches.at(match);
  const double half = league.config.half_duration;
  ingest::MatchEvents ev;
  ev.events.push_back({ingest::EventType::kHalfStart, 0.0, mp.team});
  for (double s : mp.substitutions) {
    if (s < half) ev.events.push_back({ingest::EventType::kSubstitution, s, mp.team});
  }
  ev.events.push_back({ingest::EventType::kHalfEnd, half, mp.team});
  ev.events.push_back({ingest::EventType::kHalfStart, half, mp.team});
  for (double s : mp.substitutions) {
    if (s > half) ev.events.push_back({ingest::EventType::kSubstitution, s, mp.team});
  }
  ev.events.push_back({ingest::EventType::kHalfEnd, 2.0 * half, mp.team});
  ev.attacks_positive_x[mp.team] = {mp.first_half_positive_x, !mp.first_half_positive_x};
  return ev;
}

ingest::RawMatch simulate_match(const League& league, std::size_t match) {
  const auto& cfg = league.config;
  const auto& mp = league.matches.at(match);
  const auto n_half = static_cast<std::size_t>(std::llround(cfg.half_duration / kDt));
  const std::size_t n = 2 * n_half;

  // Shared team drift, bounded.
  std::vector<Vec2> centroid(n);
  {
    Rng rng(derive_seed(cfg.seed, "centroid", mp.match_id));
    Wander w{0.5, 10.0, 60.0, {}, {}};
    for (std::size_t k = 0; k < n; ++k) {
      w.step(rng);
      centroid[k] = {std::clamp(w.x.x, -12.0, 12.0), std::clamp(w.x.y, -6.0, 6.0)};
    }
  }

  ingest::RawMatch out;
  out.match_id = mp.match_id;
  for (const auto& pl : league.players) {
    if (pl.team != mp.team) continue;
    const auto& s = pl.style;
    const Vec2 home = (pl.multi_role && mp.index % 2 == 1) ? pl.alt_home : pl.home;
    Rng rng(derive_seed(cfg.seed, mp.match_id, pl.player_id));
    Wander w{s.jitter, 4.0, 12.0, {}, {}};
    Vec2 run;
    double run_left = 0.0;
    Vec2 run_vel;

    ingest::RawTrack tr;
    tr.team = pl.team;
    tr.t.resize(n);
    tr.xy.resize(n);
    tr.speed.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      w.step(rng);
      if (run_left <= 0.0 && uniform01(rng) < s.run_rate / 60.0 * kDt) {
        const double dir = uniform01(rng) < s.focus ? s.heading + 0.35 * standard_normal(rng)
                                                    : uniform(rng, -std::numbers::pi, std::numbers::pi);
        const double v = std::clamp(s.run_speed + s.run_speed_std * standard_normal(rng), 4.2, 9.5);
        run_left = s.run_duration * uniform(rng, 0.7, 1.3);
        run_vel = {v * std::cos(dir), v * std::sin(dir)};
      }
      if (run_left > 0.0) {
        run = run + kDt * run_vel;
        run_left -= kDt;
      } else {
        run = run - (kDt / 6.0) * run;
      }
      Vec2 p = home + s.offset + centroid[k] + w.x + run;
      p = {std::clamp(p.x, 0.5, cfg.length - 0.5), std::clamp(p.y, 0.5, cfg.width - 0.5)};
      const int half = k < n_half ? 0 : 1;
      const bool positive = half == 0 ? mp.first_half_positive_x : !mp.first_half_positive_x;
      if (!positive) p = ingest::rotate_second_half(p, cfg.length, cfg.width);
      tr.t[k] = static_cast<double>(k) / 10.0;
      tr.xy[k] = {round_mm(p.x), round_mm(p.y)};
    }
    for (std::size_t h = 0; h < 2; ++h) {
      const std::size_t a = h * n_half, b = a + n_half;
      for (std::size_t k = a; k < b; ++k) {
        const std::size_t lo = k > a ? k - 1 : k, hi = k + 1 < b ? k + 1 : k;
        const Vec2 d = tr.xy[hi] - tr.xy[lo];
        tr.speed[k] = std::min(kMaxSpeed, d.norm() / (tr.t[hi] - tr.t[lo]));
      }
    }
    out.players.emplace(pl.player_id, std::move(tr));
  }
  return out;
}

void write_truth(const std::filesystem::path& path, const std::vector<TruthRow>& rows) {
  textio::AtomicWriter w(path);
  w.stream() << "player_id,team,match_id,phase_id,slot,cluster,home_x,home_y\n";
  for (const auto& r : rows) {
    w.stream() << fmt::format("{},{},{},{},{},{},{},{}\n", r.player_id, r.team, r.match_id, r.phase_id, r.slot,
                              r.cluster, textio::format_fixed(r.home.x, 3), textio::format_fixed(r.home.y, 3));
  }
  w.commit();
}

std::vector<TruthRow> read_truth(const std::filesystem::path& path) {
  textio::DelimitedReader r(path);
  const auto cp = r.require_column("player_id"), ct = r.require_column("team");
  const auto cm = r.require_column("match_id"), cph = r.require_column("phase_id");
  const auto cs = r.require_column("slot"), cc = r.require_column("cluster");
  const auto cx = r.require_column("home_x"), cy = r.require_column("home_y");
  std::vector<TruthRow> out;
  std::vector<std::string_view> f;
  while (r.next(f)) {
    const auto ctx = r.where();
    out.push_back({std::string(f[cp]), std::string(f[ct]), std::string(f[cm]), std::string(f[cph]),
                   static_cast<int>(textio::parse_int(f[cs], ctx)), static_cast<int>(textio::parse_int(f[cc], ctx)),
                   {textio::parse_double(f[cx], ctx), textio::parse_double(f[cy], ctx)}});
  }
  return out;
}

League generate_league(const LeagueConfig& cfg, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  League lg = plan_league(cfg);
  std::unique_ptr<ingest::PitchProjection> proj;
  if (cfg.geo) {
    ingest::validate(cfg.calibration);
    proj = std::make_unique<ingest::PitchProjection>(cfg.calibration);
    nlohmann::ordered_json j;
    j["length"] = cfg.calibration.length;
    j["width"] = cfg.calibration.width;
    auto& corners = j["corners"] = nlohmann::ordered_json::array();
    for (const auto& c : cfg.calibration.corners) corners.push_back({c.lat, c.lon});
    textio::write_file_atomic(dir / "calibration.json", j.dump(2) + "\n");
  }

  textio::AtomicWriter tw(dir / "tracking.csv");
  tw.stream() << (cfg.geo ? "match_id,team,player_id,t,lat,lon,speed\n" : "match_id,team,player_id,t,x,y,speed\n");
  const std::size_t batch = std::max<std::size_t>(1, job_limit());
  std::string buf;
  for (std::size_t m0 = 0; m0 < lg.matches.size(); m0 += batch) {
    const std::size_t m1 = std::min(lg.matches.size(), m0 + batch);
    std::vector<ingest::RawMatch> sims(m1 - m0);
    parallel_for(m1 - m0, [&](std::size_t i) { sims[i] = simulate_match(lg, m0 + i); });
    for (const auto& sim : sims) {
      for (const auto& [pid, tr] : sim.players) {
        buf.clear();
        for (std::size_t k = 0; k < tr.t.size(); ++k) {
          if (proj) {
            const auto g = proj->unproject(tr.xy[k]);
            fmt::format_to(std::back_inserter(buf), "{},{},{},{:.1f},{:.9f},{:.9f},{}\n", sim.match_id, tr.team,
                           pid, tr.t[k], g.lat, g.lon, textio::format_double(tr.speed[k]));
          } else {
            fmt::format_to(std::back_inserter(buf), "{},{},{},{:.1f},{:.3f},{:.3f},{}\n", sim.match_id, tr.team,
                           pid, tr.t[k], tr.xy[k].x, tr.xy[k].y, textio::format_double(tr.speed[k]));
          }
        }
        tw.stream() << buf;
      }
    }
  }
  tw.commit();

  textio::AtomicWriter ew(dir / "events.csv");
  ew.stream() << "match_id,event_type,t,team,attack_dir\n";
  for (std::size_t m = 0; m < lg.matches.size(); ++m) {
    const auto ev = match_events(lg, m);
    const auto& dirs = ev.attacks_positive_x.at(lg.matches[m].team);
    int half = 0;
    for (const auto& e : ev.events) {
      std::string dir_field;
      if (e.type == ingest::EventType::kHalfStart) {
        dir_field = dirs[static_cast<std::size_t>(half)] ? "+x" : "-x";
        ++half;
      }
      ew.stream() << fmt::format("{},{},{:.1f},{},{}\n", lg.matches[m].match_id, ingest::to_string(e.type), e.t,
                                 e.team, dir_field);
    }
  }
  ew.commit();
  write_truth(dir / "truth.csv", lg.truth);
  return lg;
}

}  // namespace sixmap::synth
