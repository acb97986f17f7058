#include "sixmap/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <set>

#include <fmt/format.h>
#include <json.hpp>

#include "sixmap/textio.hpp"

namespace sixmap::ingest {
namespace {

constexpr double kEarthRadius = 6371008.8;

double cross(const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
  return a.x() * b.y() - a.y() * b.x();
}

Eigen::Matrix3d solve_homography(const std::array<Eigen::Vector2d, 4>& src,
                                 const std::array<Eigen::Vector2d, 4>& dst) {
  Eigen::Matrix<double, 8, 8> a;
  Eigen::Matrix<double, 8, 1> b;
  for (int i = 0; i < 4; ++i) {
    const double x = src[i].x(), y = src[i].y();
    const double u = dst[i].x(), v = dst[i].y();
    a.row(2 * i) << x, y, 1, 0, 0, 0, -u * x, -u * y;
    a.row(2 * i + 1) << 0, 0, 0, x, y, 1, -v * x, -v * y;
    b(2 * i) = u;
    b(2 * i + 1) = v;
  }
  Eigen::Matrix<double, 8, 1> h = a.fullPivLu().solve(b);
  Eigen::Matrix3d m;
  m << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), 1.0;
  return m;
}

Eigen::Vector2d apply(const Eigen::Matrix3d& m, const Eigen::Vector2d& p) {
  Eigen::Vector3d q = m * Eigen::Vector3d(p.x(), p.y(), 1.0);
  return {q.x() / q.z(), q.y() / q.z()};
}

}  // namespace

PitchProjection::PitchProjection(const PitchCalibration& cal)
    : length_(cal.length), width_(cal.width), corners_(cal.corners) {
  validate(cal);
  lat0_ = cal.corners[0].lat;
  lon0_ = cal.corners[0].lon;
  m_per_deg_lat_ = kEarthRadius * std::numbers::pi / 180.0;
  m_per_deg_lon_ = m_per_deg_lat_ * std::cos(lat0_ * std::numbers::pi / 180.0);
  std::array<Eigen::Vector2d, 4> src;
  for (int i = 0; i < 4; ++i) src[i] = to_local(cal.corners[i]);
  const std::array<Eigen::Vector2d, 4> dst = {
      Eigen::Vector2d(0, 0), Eigen::Vector2d(cal.length, 0),
      Eigen::Vector2d(cal.length, cal.width), Eigen::Vector2d(0, cal.width)};
  h_ = solve_homography(src, dst);
  h_inv_ = h_.inverse();
}

Eigen::Vector2d PitchProjection::to_local(GeoPoint p) const {
  return {(p.lon - lon0_) * m_per_deg_lon_, (p.lat - lat0_) * m_per_deg_lat_};
}

GeoPoint PitchProjection::from_local(const Eigen::Vector2d& en) const {
  return {lat0_ + en.y() / m_per_deg_lat_, lon0_ + en.x() / m_per_deg_lon_};
}

Vec2 PitchProjection::project(GeoPoint p) const {
  Eigen::Vector2d q = apply(h_, to_local(p));
  return {q.x(), q.y()};
}

GeoPoint PitchProjection::unproject(Vec2 xy) const {
  return from_local(apply(h_inv_, Eigen::Vector2d(xy.x, xy.y)));
}

GeoPoint PitchProjection::geo_center() const {
  // Solve a + s (c - a) = b + u (d - b) in the local plane.
  const Eigen::Vector2d a = to_local(corners_[0]), b = to_local(corners_[1]);
  const Eigen::Vector2d c = to_local(corners_[2]), d = to_local(corners_[3]);
  const Eigen::Vector2d r = c - a, q = d - b;
  const double s = cross(b - a, q) / cross(r, q);
  return from_local(a + s * r);
}

void validate(const PitchCalibration& cal) {
  require(cal.width > 0.0 && cal.length > cal.width,
          fmt::format("pitch dimensions must satisfy L > W > 0 (L={}, W={})", cal.length,
                      cal.width),
          ErrorCode::kValidation);
  // Convexity in the equirectangular plane: all turns have the same sign.
  const double k = std::cos(cal.corners[0].lat * std::numbers::pi / 180.0);
  std::array<Eigen::Vector2d, 4> p;
  for (int i = 0; i < 4; ++i) {
    p[i] = {(cal.corners[i].lon - cal.corners[0].lon) * k,
            cal.corners[i].lat - cal.corners[0].lat};
  }
  int pos = 0, neg = 0;
  for (int i = 0; i < 4; ++i) {
    const double z = cross(p[(i + 1) % 4] - p[i], p[(i + 2) % 4] - p[(i + 1) % 4]);
    if (z > 0) ++pos;
    if (z < 0) ++neg;
  }
  require(pos == 4 || neg == 4,
          "calibration corners do not form a convex quadrilateral", ErrorCode::kValidation);
}

bool out_of_bounds(Vec2 p, double length, double width, double margin) {
  return !(p.x >= -margin && p.x <= length + margin && p.y >= -margin &&
           p.y <= width + margin);
}

std::vector<Vec2> smooth(std::span<const Vec2> positions, int window) {
  const std::size_t n = positions.size();
  std::vector<Vec2> out(positions.begin(), positions.end());
  if (window <= 1 || n < 3) return out;
  const std::ptrdiff_t half = window / 2;
  for (std::size_t i = 0; i < n; ++i) {
    const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(i);
    const std::ptrdiff_t h =
        std::min({half, ii, static_cast<std::ptrdiff_t>(n) - 1 - ii});
    Vec2 acc;
    for (std::ptrdiff_t k = -h; k <= h; ++k) acc = acc + positions[i + k];
    out[i] = (1.0 / static_cast<double>(2 * h + 1)) * acc;
  }
  return out;
}

std::vector<Vec2> differentiate(std::span<const double> t, std::span<const Vec2> positions,
                                const DiffOptions& opt) {
  require(t.size() == positions.size(), "differentiate: size mismatch");
  const std::size_t n = t.size();
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<Vec2> vel(n, Vec2{nan, nan});
  std::size_t begin = 0;
  while (begin < n) {
    std::size_t end = begin + 1;
    while (end < n && t[end] - t[end - 1] <= opt.max_gap) ++end;
    const std::size_t len = end - begin;
    if (len >= 2) {
      auto s = smooth(positions.subspan(begin, len), opt.smoothing_window);
      auto at = [&](std::size_t k) { return t[begin + k]; };
      vel[begin] = (1.0 / (at(1) - at(0))) * (s[1] - s[0]);
      vel[end - 1] = (1.0 / (at(len - 1) - at(len - 2))) * (s[len - 1] - s[len - 2]);
      for (std::size_t k = 1; k + 1 < len; ++k) {
        vel[begin + k] = (1.0 / (at(k + 1) - at(k - 1))) * (s[k + 1] - s[k - 1]);
      }
    }
    begin = end;
  }
  return vel;
}

bool MatchEvents::needs_rotation(const std::string& team, int half) const {
  auto it = attacks_positive_x.find(team);
  if (it == attacks_positive_x.end()) return half == 1;
  return !it->second[static_cast<std::size_t>(half)];
}

HalfBounds half_bounds(double duration, const MatchEvents& events) {
  std::vector<double> starts, ends;
  for (const auto& e : events.events) {
    if (e.type == EventType::kHalfStart) starts.push_back(e.t);
    if (e.type == EventType::kHalfEnd && e.t < duration) ends.push_back(e.t);
  }
  std::sort(starts.begin(), starts.end());
  std::sort(ends.begin(), ends.end());
  double first_end;
  if (!ends.empty()) {
    first_end = ends.front();
  } else {
    auto it = std::find_if(starts.begin(), starts.end(), [](double s) { return s > 0.0; });
    first_end = it != starts.end() ? *it : duration / 2.0;
  }
  double first_start = 0.0;
  double second_start = first_end;
  for (double s : starts) {
    if (s < first_end) first_start = std::max(first_start, s);
  }
  for (double s : starts) {
    if (s >= first_end) {
      second_start = s;
      break;
    }
  }
  HalfBounds hb;
  hb.halves[0] = {first_start, first_end, 0};
  hb.halves[1] = {second_start, duration, 1};
  return hb;
}

void validate(const MatchEvents& events, double duration) {
  for (const auto& e : events.events) {
    const bool boundary = e.type == EventType::kHalfStart || e.type == EventType::kHalfEnd;
    const bool ok = boundary ? (e.t >= 0.0 && e.t <= duration) : (e.t > 0.0 && e.t < duration);
    require(ok,
            fmt::format("{} event at t={} lies outside the match (duration {})",
                        to_string(e.type), e.t, duration),
            ErrorCode::kValidation);
  }
  auto hb = half_bounds(duration, events);
  require(hb.halves[0].t0 < hb.halves[0].t1 && hb.halves[0].t1 <= hb.halves[1].t0 &&
              hb.halves[1].t0 < hb.halves[1].t1,
          "match halves overlap or are empty", ErrorCode::kValidation);
}

std::vector<PhaseInterval> segment_phases(double duration, const MatchEvents& events,
                                          double min_phase) {
  validate(events, duration);
  const HalfBounds hb = half_bounds(duration, events);
  std::vector<PhaseInterval> out;
  for (const auto& half : hb.halves) {
    std::set<double> cuts;
    for (const auto& e : events.events) {
      if ((e.type == EventType::kSubstitution || e.type == EventType::kDismissal) &&
          e.t > half.t0 && e.t < half.t1) {
        cuts.insert(e.t);
      }
    }
    std::vector<PhaseInterval> parts;
    double prev = half.t0;
    for (double c : cuts) {
      parts.push_back({prev, c, half.half});
      prev = c;
    }
    parts.push_back({prev, half.t1, half.half});

    while (parts.size() > 1) {
      auto it = std::find_if(parts.begin(), parts.end(),
                             [&](const PhaseInterval& p) { return p.length() <= min_phase; });
      if (it == parts.end()) break;
      if (it != parts.begin()) {
        std::prev(it)->t1 = it->t1;
        parts.erase(it);
      } else {
        std::next(it)->t0 = it->t0;
        parts.erase(it);
      }
    }
    out.insert(out.end(), parts.begin(), parts.end());
  }
  return out;
}

std::vector<TrackedPhase> build_phases(const RawMatch& match, const MatchEvents& events,
                                       const IngestOptions& opt, IngestTally* tally) {
  double duration = 0.0;
  for (const auto& e : events.events) {
    if (e.type == EventType::kHalfEnd) duration = std::max(duration, e.t);
  }
  if (duration == 0.0) {
    double tmax = 0.0;
    for (const auto& [id, track] : match.players) {
      if (!track.t.empty()) tmax = std::max(tmax, track.t.back());
    }
    duration = std::round((tmax + opt.diff.dt) / opt.diff.dt) * opt.diff.dt;
  }
  const HalfBounds hb = half_bounds(duration, events);
  const auto intervals = segment_phases(duration, events, opt.min_phase);

  std::vector<TrackedPhase> phases(intervals.size());
  for (std::size_t k = 0; k < intervals.size(); ++k) {
    auto& ph = phases[k];
    ph.phase_id = fmt::format("{}-P{}", match.match_id, k);
    ph.match_id = match.match_id;
    ph.t0 = intervals[k].t0;
    ph.t1 = intervals[k].t1;
    ph.half = intervals[k].half;
  }

  for (const auto& [player_id, track] : match.players) {
    if (tally) tally->samples += track.t.size();
    for (int half = 0; half < 2; ++half) {
      const auto& hi = hb.halves[static_cast<std::size_t>(half)];
      std::vector<double> t;
      std::vector<Vec2> pos;
      for (std::size_t i = 0; i < track.t.size(); ++i) {
        if (track.t[i] >= hi.t0 && track.t[i] < hi.t1) {
          t.push_back(track.t[i]);
          Vec2 p = track.xy[i];
          if (events.needs_rotation(track.team, half)) {
            p = rotate_second_half(p, opt.length, opt.width);
          }
          pos.push_back(p);
        }
      }
      if (t.empty()) continue;
      const auto vel = differentiate(t, pos, opt.diff);
      for (auto& ph : phases) {
        if (ph.half != half) continue;
        PlayerSeries s;
        s.player_id = player_id;
        s.team = track.team;
        for (std::size_t i = 0; i < t.size(); ++i) {
          if (t[i] < ph.t0 || t[i] >= ph.t1) continue;
          s.t.push_back(t[i]);
          s.pos.push_back(pos[i]);
          s.vel.push_back(vel[i]);
          const bool oob = out_of_bounds(pos[i], opt.length, opt.width);
          s.out_of_bounds.push_back(oob);
          if (oob && tally) ++tally->out_of_bounds;
        }
        if (!s.t.empty()) ph.players.push_back(std::move(s));
      }
    }
    if (tally) {
      std::size_t inside = 0;
      for (const auto& hi : hb.halves) {
        inside += static_cast<std::size_t>(std::count_if(
            track.t.begin(), track.t.end(), [&](double x) { return x >= hi.t0 && x < hi.t1; }));
      }
      tally->outside_halves += track.t.size() - inside;
    }
  }
  for (auto& ph : phases) {
    std::sort(ph.players.begin(), ph.players.end(),
              [](const PlayerSeries& a, const PlayerSeries& b) { return a.player_id < b.player_id; });
  }
  if (tally) tally->phases += phases.size();
  return phases;
}

std::map<std::string, RawMatch> read_tracking(const std::filesystem::path& path,
                                              const PitchCalibration* cal) {
  textio::DelimitedReader reader(path);
  const auto c_match = reader.require_column("match_id");
  const auto c_player = reader.require_column("player_id");
  const auto c_t = reader.require_column("t");
  const auto c_x = reader.column("x");
  const auto c_y = reader.column("y");
  const auto c_lat = reader.column("lat");
  const auto c_lon = reader.column("lon");
  const auto c_speed = reader.column("speed");
  const auto c_team = reader.column("team");
  const bool projected = c_x && c_y;
  if (!projected) {
    require(c_lat && c_lon,
            fmt::format("{}: header needs either x,y or lat,lon columns", path.string()),
            ErrorCode::kMalformedInput);
    require(cal != nullptr,
            fmt::format("{}: geographic tracking data needs a pitch calibration", path.string()),
            ErrorCode::kMissingInput);
  }
  std::optional<PitchProjection> proj;
  if (!projected) proj.emplace(*cal);

  std::map<std::string, RawMatch> out;
  std::vector<std::string_view> f;
  while (reader.next(f)) {
    const std::string ctx = reader.where();
    auto& m = out[std::string(f[c_match])];
    if (m.match_id.empty()) m.match_id = std::string(f[c_match]);
    auto& tr = m.players[std::string(f[c_player])];
    const double t = textio::parse_double(f[c_t], ctx);
    require(tr.t.empty() || t >= tr.t.back(),
            fmt::format("{}: time decreases for player {}", ctx, f[c_player]),
            ErrorCode::kMalformedInput);
    tr.t.push_back(t);
    if (projected) {
      tr.xy.push_back({textio::parse_double(f[*c_x], ctx), textio::parse_double(f[*c_y], ctx)});
    } else {
      tr.xy.push_back(proj->project(
          {textio::parse_double(f[*c_lat], ctx), textio::parse_double(f[*c_lon], ctx)}));
    }
    tr.speed.push_back(c_speed ? textio::parse_double(f[*c_speed], ctx) : 0.0);
    if (c_team) {
      tr.team = std::string(f[*c_team]);
    } else if (tr.team.empty()) {
      tr.team = "team";
    }
  }
  return out;
}

std::string to_string(EventType type) {
  switch (type) {
    case EventType::kHalfStart: return "half_start";
    case EventType::kHalfEnd: return "half_end";
    case EventType::kSubstitution: return "substitution";
    case EventType::kDismissal: return "dismissal";
  }
  return "unknown";
}

EventType parse_event_type(std::string_view s) {
  if (s == "half_start") return EventType::kHalfStart;
  if (s == "half_end") return EventType::kHalfEnd;
  if (s == "substitution") return EventType::kSubstitution;
  if (s == "dismissal") return EventType::kDismissal;
  fail(ErrorCode::kMalformedInput, fmt::format("unknown event type '{}'", s));
}

std::map<std::string, MatchEvents> read_events(const std::filesystem::path& path) {
  textio::DelimitedReader reader(path);
  const auto c_match = reader.require_column("match_id");
  const auto c_type = reader.require_column("event_type");
  const auto c_t = reader.require_column("t");
  const auto c_team = reader.require_column("team");
  const auto c_dir = reader.column("attack_dir");
  std::map<std::string, MatchEvents> out;
  std::map<std::string, int> half_index;
  std::vector<std::string_view> f;
  while (reader.next(f)) {
    const std::string ctx = reader.where();
    auto& ev = out[std::string(f[c_match])];
    MatchEvent e{parse_event_type(textio::trim(f[c_type])), textio::parse_double(f[c_t], ctx),
                 std::string(textio::trim(f[c_team]))};
    if (c_dir && e.type == EventType::kHalfStart && !textio::trim(f[*c_dir]).empty()) {
      const auto dir = textio::trim(f[*c_dir]);
      require(dir == "+x" || dir == "-x", fmt::format("{}: attack_dir must be +x or -x", ctx),
              ErrorCode::kMalformedInput);
      const std::string key = std::string(f[c_match]) + "|" + e.team;
      const int h = half_index[key]++;
      require(h < 2, fmt::format("{}: more than two half_start rows for team {}", ctx, e.team),
              ErrorCode::kMalformedInput);
      auto [it, inserted] = ev.attacks_positive_x.try_emplace(e.team, std::array<bool, 2>{true, false});
      it->second[static_cast<std::size_t>(h)] = dir == "+x";
    }
    ev.events.push_back(std::move(e));
  }
  return out;
}

void write_phase(const std::filesystem::path& path, const TrackedPhase& phase) {
  textio::AtomicWriter w(path);
  auto& os = w.stream();
  os << fmt::format("# phase match_id={} t0={} t1={} half={}\n", phase.match_id,
                    textio::format_double(phase.t0), textio::format_double(phase.t1), phase.half);
  os << "phase_id,team,player_id,t,s_x,s_y,v_x,v_y,oob\n";
  auto num = [](double v) { return std::isnan(v) ? std::string("nan") : textio::format_fixed(v, 4); };
  std::string buf;
  for (const auto& p : phase.players) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      buf.clear();
      fmt::format_to(std::back_inserter(buf), "{},{},{},{},{},{},{},{},{}\n", phase.phase_id,
                     p.team, p.player_id, textio::format_fixed(p.t[i], 2), num(p.pos[i].x),
                     num(p.pos[i].y), num(p.vel[i].x), num(p.vel[i].y),
                     p.out_of_bounds[i] ? 1 : 0);
      os << buf;
    }
  }
  w.commit();
}

TrackedPhase read_phase(const std::filesystem::path& path) {
  TrackedPhase ph;
  {
    std::ifstream in(path);
    require(static_cast<bool>(in), fmt::format("cannot open {}", path.string()),
            ErrorCode::kMissingInput);
    std::string first;
    std::getline(in, first);
    require(first.rfind("# phase ", 0) == 0,
            fmt::format("{}: missing phase metadata line", path.string()),
            ErrorCode::kMalformedInput);
    for (auto kv : textio::split(std::string_view(first).substr(8), ' ')) {
      auto eq = kv.find('=');
      if (eq == std::string_view::npos) continue;
      auto key = kv.substr(0, eq), val = kv.substr(eq + 1);
      if (key == "match_id") ph.match_id = std::string(val);
      if (key == "t0") ph.t0 = textio::parse_double(val, path.string());
      if (key == "t1") ph.t1 = textio::parse_double(val, path.string());
      if (key == "half") ph.half = static_cast<int>(textio::parse_int(val, path.string()));
    }
  }
  textio::DelimitedReader reader(path);
  const auto c_phase = reader.require_column("phase_id");
  const auto c_team = reader.require_column("team");
  const auto c_player = reader.require_column("player_id");
  const auto c_t = reader.require_column("t");
  const auto c_sx = reader.require_column("s_x");
  const auto c_sy = reader.require_column("s_y");
  const auto c_vx = reader.require_column("v_x");
  const auto c_vy = reader.require_column("v_y");
  const auto c_oob = reader.require_column("oob");
  auto num = [](std::string_view s, const std::string& ctx) {
    return textio::trim(s) == "nan" ? std::numeric_limits<double>::quiet_NaN()
                                    : textio::parse_double(s, ctx);
  };
  std::vector<std::string_view> f;
  PlayerSeries* cur = nullptr;
  while (reader.next(f)) {
    const std::string ctx = reader.where();
    if (ph.phase_id.empty()) ph.phase_id = std::string(f[c_phase]);
    if (!cur || cur->player_id != f[c_player]) {
      ph.players.emplace_back();
      cur = &ph.players.back();
      cur->player_id = std::string(f[c_player]);
      cur->team = std::string(f[c_team]);
    }
    cur->t.push_back(textio::parse_double(f[c_t], ctx));
    cur->pos.push_back({num(f[c_sx], ctx), num(f[c_sy], ctx)});
    cur->vel.push_back({num(f[c_vx], ctx), num(f[c_vy], ctx)});
    cur->out_of_bounds.push_back(textio::parse_int(f[c_oob], ctx) != 0);
  }
  return ph;
}

PitchCalibration read_calibration(const std::filesystem::path& path) {
  const auto text = textio::read_file(path);
  PitchCalibration cal;
  try {
    const auto j = nlohmann::json::parse(text);
    cal.length = j.value("length", 105.0);
    cal.width = j.value("width", 68.0);
    const auto& corners = j.at("corners");
    require(corners.size() == 4, "calibration needs exactly four corners",
            ErrorCode::kMalformedInput);
    for (std::size_t i = 0; i < 4; ++i) {
      cal.corners[i] = {corners[i].at(0).get<double>(), corners[i].at(1).get<double>()};
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kMalformedInput, fmt::format("{}: {}", path.string(), e.what()));
  }
  validate(cal);
  return cal;
}

}  // namespace sixmap::ingest
