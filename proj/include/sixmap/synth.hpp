#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sixmap/common.hpp"
#include "sixmap/ingest.hpp"

namespace sixmap::synth {

// Per-player movement style.
struct StyleProfile {
  Vec2 offset;              // personal shift of the slot home (m)
  double jitter = 1.0;      // std of the smooth wandering velocity (m/s)
  double run_rate = 1.5;    // sprints per minute
  double run_speed = 6.0;   // mean sprint speed (m/s)
  double run_speed_std = 0.6;
  double run_duration = 2.5;  // mean sprint length (s)
  double heading = 0.0;     // preferred sprint direction (rad)
  double focus = 0.7;       // share of sprints along the preferred direction
};

struct LeagueConfig {
  int teams = 4;
  int players_per_team = 10;
  int matches_per_team = 5;
  double half_duration = 2700.0;
  // Substitution times split each half into equal parts.
  int cuts_first_half = 1;
  int cuts_second_half = 2;
  double multi_role_fraction = 0.1;
  // Scales how far apart individual styles are drawn.
  double style_separation = 1.0;
  double length = 105.0;
  double width = 68.0;
  // Emit lat/lon through `calibration` instead of pitch metres.
  bool geo = false;
  ingest::PitchCalibration calibration;
  std::uint64_t seed = 0;
};

// Outfield slot homes of the formation for a team attacking toward +x.
std::vector<Vec2> formation_slots(double length, double width);

struct PlayerTruth {
  std::string player_id;
  std::string team;
  int slot = 0;
  bool multi_role = false;
  Vec2 home;
  Vec2 alt_home;  // used in odd matches by multi-role players
  StyleProfile style;
};

struct TruthRow {
  std::string player_id;
  std::string team;
  std::string match_id;
  std::string phase_id;
  int slot = 0;
  int cluster = 0;
  Vec2 home;
};

struct MatchPlan {
  std::string match_id;
  std::string team;
  int index = 0;  // match number within the team
  bool first_half_positive_x = true;
  std::vector<double> substitutions;
};

struct League {
  LeagueConfig config;
  std::vector<PlayerTruth> players;
  std::vector<MatchPlan> matches;
  std::vector<TruthRow> truth;
};

// Draws styles, match schedule and ground truth; throws on an inconsistent
// config.
League plan_league(const LeagueConfig& cfg);

// Track of every player of one match at 10 Hz, in physical (unrotated)
// coordinates; positions rounded to the millimetre, speeds from central
// differences of the rounded positions within each half.
ingest::RawMatch simulate_match(const League& league, std::size_t match);

ingest::MatchEvents match_events(const League& league, std::size_t match);

// Writes tracking.csv, events.csv, truth.csv (and calibration.json in geo
// mode) into `dir`.
League generate_league(const LeagueConfig& cfg, const std::filesystem::path& dir);

void write_truth(const std::filesystem::path& path, const std::vector<TruthRow>& rows);
std::vector<TruthRow> read_truth(const std::filesystem::path& path);

}  // namespace sixmap::synth
