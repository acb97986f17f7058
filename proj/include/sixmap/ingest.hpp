#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sixmap/common.hpp"

namespace sixmap::ingest {

struct GeoPoint {
  double lat = 0.0;
  double lon = 0.0;
};

// Corner order: A maps to (0, 0), B to (L, 0), C to (L, W), D to (0, W).
// Attacking direction in the first half is toward +x (from A to B).
struct PitchCalibration {
  std::array<GeoPoint, 4> corners{};
  double length = 105.0;
  double width = 68.0;
};

// Planar homography from the calibrated corners to pitch metres.  Geographic
// coordinates are first flattened to a local east/north plane around corner A.
class PitchProjection {
 public:
  explicit PitchProjection(const PitchCalibration& cal);

  Vec2 project(GeoPoint p) const;
  GeoPoint unproject(Vec2 xy) const;

  // Intersection of the corner diagonals; projects to (L/2, W/2).
  GeoPoint geo_center() const;

  double length() const { return length_; }
  double width() const { return width_; }

 private:
  Eigen::Vector2d to_local(GeoPoint p) const;
  GeoPoint from_local(const Eigen::Vector2d& en) const;

  double lat0_ = 0.0;
  double lon0_ = 0.0;
  double m_per_deg_lat_ = 0.0;
  double m_per_deg_lon_ = 0.0;
  double length_ = 0.0;
  double width_ = 0.0;
  std::array<GeoPoint, 4> corners_{};
  Eigen::Matrix3d h_;
  Eigen::Matrix3d h_inv_;
};

// Throws kValidation for a non-convex quadrilateral or L <= W <= 0.
void validate(const PitchCalibration& cal);

constexpr double kBoundsMargin = 5.0;

bool out_of_bounds(Vec2 p, double length, double width, double margin = kBoundsMargin);

// 180 degree rotation about the pitch centre.
inline Vec2 rotate_second_half(Vec2 pos, double length, double width) {
  return {length - pos.x, width - pos.y};
}

struct DiffOptions {
  double dt = 0.1;
  // Centered moving average applied to positions first; 1 disables it.
  int smoothing_window = 5;
  // Samples further apart than this are treated as separate segments.
  double max_gap = 0.5;
};

// Centered moving average whose half-width shrinks symmetrically near the
// ends, so linear signals pass unchanged.
std::vector<Vec2> smooth(std::span<const Vec2> positions, int window);

// Central differences at interior samples and one-sided differences at the
// ends of each gap-free segment.  Isolated samples get NaN velocity.
std::vector<Vec2> differentiate(std::span<const double> t, std::span<const Vec2> positions,
                                const DiffOptions& opt = {});

enum class EventType { kHalfStart, kHalfEnd, kSubstitution, kDismissal };

struct MatchEvent {
  EventType type = EventType::kSubstitution;
  double t = 0.0;
  std::string team;
};

struct MatchEvents {
  std::vector<MatchEvent> events;
  // Per team and half: true when the team attacks toward +x in that half.
  // Teams not listed follow the convention {true, false}.
  std::map<std::string, std::array<bool, 2>> attacks_positive_x;

  bool needs_rotation(const std::string& team, int half) const;
};

struct PhaseInterval {
  double t0 = 0.0;
  double t1 = 0.0;
  int half = 0;

  double length() const { return t1 - t0; }
  friend bool operator==(const PhaseInterval&, const PhaseInterval&) = default;
};

struct HalfBounds {
  std::array<PhaseInterval, 2> halves;
};

HalfBounds half_bounds(double duration, const MatchEvents& events);

// Throws kValidation when event times fall outside the match.
void validate(const MatchEvents& events, double duration);

// Splits each half at substitution and dismissal times and absorbs intervals
// of at most `min_phase` seconds into the earlier neighbour of the same half
// (the later one for the first interval).  Never merges across halves.
std::vector<PhaseInterval> segment_phases(double duration, const MatchEvents& events,
                                          double min_phase = 600.0);

struct PlayerSeries {
  std::string player_id;
  std::string team;
  std::vector<double> t;
  std::vector<Vec2> pos;
  std::vector<Vec2> vel;
  std::vector<bool> out_of_bounds;

  std::size_t size() const { return t.size(); }
};

struct TrackedPhase {
  std::string phase_id;
  std::string match_id;
  double t0 = 0.0;
  double t1 = 0.0;
  int half = 0;
  std::vector<PlayerSeries> players;
};

// Raw per-player track of one match as read from a tracking file.
struct RawTrack {
  std::string team;
  std::vector<double> t;
  std::vector<Vec2> xy;  // pitch metres, unrotated
  std::vector<double> speed;
};

struct RawMatch {
  std::string match_id;
  std::map<std::string, RawTrack> players;
};

struct IngestOptions {
  double length = 105.0;
  double width = 68.0;
  double min_phase = 600.0;
  DiffOptions diff;
};

struct IngestTally {
  std::size_t samples = 0;
  std::size_t out_of_bounds = 0;
  std::size_t outside_halves = 0;
  std::size_t phases = 0;
};

// Rotates, differentiates and segments one match.
std::vector<TrackedPhase> build_phases(const RawMatch& match, const MatchEvents& events,
                                       const IngestOptions& opt, IngestTally* tally = nullptr);

// Tracking file: header selects geographic (lat, lon) or projected (x, y)
// mode.  Required columns: match_id, player_id, t; optional: speed, team.
std::map<std::string, RawMatch> read_tracking(const std::filesystem::path& path,
                                              const PitchCalibration* cal = nullptr);

// Events file columns: match_id, event_type, t, team, and an optional
// attack_dir column ("+x" or "-x") read on half_start rows.
std::map<std::string, MatchEvents> read_events(const std::filesystem::path& path);

// Phase file columns: phase_id, team, player_id, t, s_x, s_y, v_x, v_y, oob.
void write_phase(const std::filesystem::path& path, const TrackedPhase& phase);
TrackedPhase read_phase(const std::filesystem::path& path);

PitchCalibration read_calibration(const std::filesystem::path& path);

std::string to_string(EventType type);
EventType parse_event_type(std::string_view s);

}  // namespace sixmap::ingest
