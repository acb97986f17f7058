#include "sixmap/pipeline.hpp"

#include <algorithm>
#include <map>
#include <numbers>
#include <set>

#include <fmt/format.h>

#include "json.hpp"
#include "sixmap/checkpoint.hpp"
#include "sixmap/common.hpp"
#include "sixmap/parallel.hpp"
#include "sixmap/random.hpp"
#include "sixmap/textio.hpp"

namespace sixmap::pipeline {
namespace fs = std::filesystem;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

// Reads known keys of one JSON object and rejects the rest.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    require(j_.is_object(), fmt::format("config: '{}' must be an object", path_));
  }

  template <typename T>
  void get(const char* key, T& out) {
    used_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      fail(ErrorCode::kInvalidArgument, fmt::format("config: '{}.{}' has the wrong type", path_, key));
    }
  }

  template <typename Fn>
  void section(const char* key, Fn&& fn) {
    used_.insert(key);
    if (!j_.contains(key)) return;
    Section s(j_.at(key), path_ + "." + key);
    fn(s);
    s.finish();
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      require(used_.count(item.key()) > 0, fmt::format("config: unknown key '{}.{}'", path_, item.key()));
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

void check(bool ok, const std::string& what) { require(ok, "config: " + what); }

void validate_config(const PipelineConfig& c) {
  check(c.jobs >= 1, "jobs must be at least 1");
  check(c.length > c.width && c.width > 0.0, "pitch must satisfy length > width > 0");
  check(c.ingest.min_phase >= 0.0, "ingest.min_phase must be non-negative");
  check(c.ingest.diff.dt > 0.0, "ingest.dt must be positive");
  check(c.ingest.diff.smoothing_window >= 1 && c.ingest.diff.smoothing_window % 2 == 1,
        "ingest.smoothing_window must be a positive odd number");
  check(c.ingest.diff.max_gap > 0.0, "ingest.max_gap must be positive");
  check(c.roles.max_iter >= 1, "roles.max_iter must be at least 1");
  check(c.roles.cov_floor > 0.0, "roles.cov_floor must be positive");
  check(c.roles.min_players >= 2, "roles.min_players must be at least 2");
  check(c.roles.min_coverage > 0.0 && c.roles.min_coverage <= 1.0, "roles.min_coverage must be in (0, 1]");
  check(c.clustering.k_min >= 2 && c.clustering.k_max >= c.clustering.k_min, "clustering k range is invalid");
  check(c.clustering.threshold >= -1.0 && c.clustering.threshold <= 1.0, "clustering.threshold must be in [-1, 1]");
  check(c.clustering.restarts >= 1, "clustering.restarts must be at least 1");
  check(c.direction.threshold >= 0.0 && c.direction.vx_max > 0.0 && c.direction.vy_max > 0.0,
        "heatmap direction parameters must be positive");
  check(c.split.test_min_phases >= c.split.test_phases && c.split.val_min_phases >= c.split.val_phases,
        "split minimums must cover the sampled phase counts");
  check(c.split.test_phases >= 3 && c.split.val_phases >= 3, "split phase counts must be at least 3");
  check(c.train_augment_factor >= 1, "augment.train_factor must be at least 1");
  const auto& t = c.train;
  check(t.alpha >= 0.0, "train.alpha must be non-negative");
  check(t.lr > 0.0 && t.lr_decay > 0.0 && t.lr_decay <= 1.0, "train learning-rate settings are invalid");
  check(t.batch_size >= 1 && t.max_epochs >= 1 && t.max_selections >= 1, "train loop limits must be positive");
  check(t.select.per_identity >= 2 && t.select.nearest >= 1, "train selection sizes are invalid");
  const auto& b = t.branch;
  check(b.c1 > 0 && b.c2 > 0 && b.c3 > 0 && b.c4 > 0 && b.fc1 > 0 && b.out > 0, "network widths must be positive");
  check(b.dropout >= 0.0 && b.dropout < 1.0, "train.dropout must be in [0, 1)");
  check(c.identify.ridge > 0.0, "identify.ridge must be positive");
  for (const auto& name : c.conditions) identify::parse_condition(name);
}

struct StageLog {
  std::vector<std::string> lines;

  void add(const std::string& event, ojson fields = ojson::object()) {
    ojson j;
    j["event"] = event;
    for (auto it = fields.begin(); it != fields.end(); ++it) j[it.key()] = it.value();
    lines.push_back(j.dump());
  }

  void write(const fs::path& path) const {
    fs::create_directories(path.parent_path());
    std::string text;
    for (const auto& l : lines) text += l + "\n";
    textio::write_file_atomic(path, text);
  }
};

void say(const Context& ctx, const std::string& msg) {
  if (ctx.progress) ctx.progress(msg);
}

void need(const fs::path& p) {
  if (!fs::exists(p)) fail(ErrorCode::kMissingInput, "missing input " + p.string());
}

std::vector<std::string> read_index(const fs::path& path) {
  need(path);
  std::vector<std::string> out;
  for (auto& l : textio::read_lines(path)) {
    if (!l.empty()) out.push_back(l);
  }
  return out;
}

std::map<std::string, int> label_map(const std::vector<heatmap::HeatmapPair>& pairs) {
  std::map<std::string, int> m;
  for (const auto& p : pairs) m.emplace(p.entity_id, 0);
  int k = 0;
  for (auto& [id, v] : m) v = k++;
  return m;
}

std::vector<int> labels_of(const std::vector<heatmap::HeatmapPair>& pairs, const std::map<std::string, int>& m) {
  std::vector<int> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(m.at(p.entity_id));
  return out;
}

std::string join(const std::vector<std::string>& v, char sep) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += sep;
    s += v[i];
  }
  return s;
}

}  // namespace

PipelineConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    fail(ErrorCode::kMalformedInput, std::string("config: ") + e.what());
  }
  PipelineConfig c;
  Section root(j, "config");
  root.get("seed", c.seed);
  root.get("jobs", c.jobs);
  root.get("calibration", c.calibration);
  root.section("pitch", [&](Section& s) {
    s.get("length", c.length);
    s.get("width", c.width);
  });
  root.section("ingest", [&](Section& s) {
    s.get("min_phase", c.ingest.min_phase);
    s.get("dt", c.ingest.diff.dt);
    s.get("smoothing_window", c.ingest.diff.smoothing_window);
    s.get("max_gap", c.ingest.diff.max_gap);
  });
  root.section("roles", [&](Section& s) {
    s.get("max_iter", c.roles.max_iter);
    s.get("change_tol", c.roles.change_tol);
    s.get("cov_floor", c.roles.cov_floor);
    s.get("centroid_relative", c.roles.centroid_relative);
    s.get("min_players", c.roles.min_players);
    s.get("min_coverage", c.roles.min_coverage);
  });
  root.section("clustering", [&](Section& s) {
    s.get("threshold", c.clustering.threshold);
    s.get("k_min", c.clustering.k_min);
    s.get("k_max", c.clustering.k_max);
    s.get("restarts", c.clustering.restarts);
  });
  root.section("heatmap", [&](Section& s) {
    int rows = heatmap::kRows, cols = heatmap::kCols;
    s.get("rows", rows);
    s.get("cols", cols);
    check(rows == heatmap::kRows && cols == heatmap::kCols,
          fmt::format("heatmap grid is fixed at {} x {}", heatmap::kRows, heatmap::kCols));
    s.get("threshold", c.direction.threshold);
    s.get("vx_max", c.direction.vx_max);
    s.get("vy_max", c.direction.vy_max);
  });
  root.section("split", [&](Section& s) {
    s.get("test_min_phases", c.split.test_min_phases);
    s.get("test_phases", c.split.test_phases);
    s.get("val_min_phases", c.split.val_min_phases);
    s.get("val_phases", c.split.val_phases);
  });
  root.section("augment", [&](Section& s) { s.get("train_factor", c.train_augment_factor); });
  root.section("train", [&](Section& s) {
    auto& t = c.train;
    s.get("alpha", t.alpha);
    s.get("lr", t.lr);
    s.get("lr_decay", t.lr_decay);
    s.get("batch_size", t.batch_size);
    s.get("max_epochs", t.max_epochs);
    s.get("max_selections", t.max_selections);
    s.get("min_improvement", t.min_improvement);
    s.get("loss_patience", t.loss_patience);
    s.get("accuracy_patience", t.accuracy_patience);
    s.get("per_identity", t.select.per_identity);
    s.get("nearest", t.select.nearest);
    s.get("dropout", t.branch.dropout);
    s.get("embedding_half_dim", t.branch.out);
    s.section("widths", [&](Section& w) {
      w.get("conv1", t.branch.c1);
      w.get("conv2", t.branch.c2);
      w.get("conv3", t.branch.c3);
      w.get("conv4", t.branch.c4);
      w.get("fc1", t.branch.fc1);
    });
  });
  root.section("identify", [&](Section& s) {
    s.get("ridge", c.identify.ridge);
    std::string cov = "full", agg = "centroid", rank = "gallery";
    s.get("covariance", cov);
    s.get("lp_aggregation", agg);
    s.get("ranking", rank);
    check(cov == "full" || cov == "diagonal", "identify.covariance must be 'full' or 'diagonal'");
    check(agg == "centroid" || agg == "pairwise", "identify.lp_aggregation must be 'centroid' or 'pairwise'");
    check(rank == "gallery" || rank == "probe", "identify.ranking must be 'gallery' or 'probe'");
    c.identify.diagonal = cov == "diagonal";
    c.identify.lp = agg == "centroid" ? identify::LpAggregation::kCentroid : identify::LpAggregation::kPairwise;
    c.identify.rank_by = rank == "gallery" ? identify::RankBy::kGallery : identify::RankBy::kProbe;
    s.get("conditions", c.conditions);
  });
  root.section("synth", [&](Section& s) {
    auto& l = c.synth;
    s.get("teams", l.teams);
    s.get("players_per_team", l.players_per_team);
    s.get("matches_per_team", l.matches_per_team);
    s.get("half_duration", l.half_duration);
    s.get("cuts_first_half", l.cuts_first_half);
    s.get("cuts_second_half", l.cuts_second_half);
    s.get("multi_role_fraction", l.multi_role_fraction);
    s.get("style_separation", l.style_separation);
    s.get("geo", l.geo);
  });
  root.finish();
  validate_config(c);
  return c;
}

PipelineConfig load_config(const fs::path& path) {
  need(path);
  return parse_config(textio::read_file(path));
}

std::string dump_config(const PipelineConfig& c) {
  ojson j;
  j["seed"] = c.seed;
  j["jobs"] = c.jobs;
  j["calibration"] = c.calibration;
  j["pitch"] = {{"length", c.length}, {"width", c.width}};
  j["ingest"] = {{"min_phase", c.ingest.min_phase}, {"dt", c.ingest.diff.dt},
                 {"smoothing_window", c.ingest.diff.smoothing_window}, {"max_gap", c.ingest.diff.max_gap}};
  j["roles"] = {{"max_iter", c.roles.max_iter}, {"change_tol", c.roles.change_tol}, {"cov_floor", c.roles.cov_floor},
                {"centroid_relative", c.roles.centroid_relative}, {"min_players", c.roles.min_players},
                {"min_coverage", c.roles.min_coverage}};
  j["clustering"] = {{"threshold", c.clustering.threshold}, {"k_min", c.clustering.k_min},
                     {"k_max", c.clustering.k_max}, {"restarts", c.clustering.restarts}};
  j["heatmap"] = {{"rows", heatmap::kRows}, {"cols", heatmap::kCols}, {"threshold", c.direction.threshold},
                  {"vx_max", c.direction.vx_max}, {"vy_max", c.direction.vy_max}};
  j["split"] = {{"test_min_phases", c.split.test_min_phases}, {"test_phases", c.split.test_phases},
                {"val_min_phases", c.split.val_min_phases}, {"val_phases", c.split.val_phases}};
  j["augment"] = {{"train_factor", c.train_augment_factor}};
  const auto& t = c.train;
  j["train"] = {{"alpha", t.alpha}, {"lr", t.lr}, {"lr_decay", t.lr_decay}, {"batch_size", t.batch_size},
                {"max_epochs", t.max_epochs}, {"max_selections", t.max_selections},
                {"min_improvement", t.min_improvement}, {"loss_patience", t.loss_patience},
                {"accuracy_patience", t.accuracy_patience}, {"per_identity", t.select.per_identity},
                {"nearest", t.select.nearest}, {"dropout", t.branch.dropout},
                {"embedding_half_dim", t.branch.out},
                {"widths", {{"conv1", t.branch.c1}, {"conv2", t.branch.c2}, {"conv3", t.branch.c3},
                            {"conv4", t.branch.c4}, {"fc1", t.branch.fc1}}}};
  j["identify"] = {{"ridge", c.identify.ridge}, {"covariance", c.identify.diagonal ? "diagonal" : "full"},
                   {"lp_aggregation", c.identify.lp == identify::LpAggregation::kCentroid ? "centroid" : "pairwise"},
                   {"ranking", c.identify.rank_by == identify::RankBy::kGallery ? "gallery" : "probe"},
                   {"conditions", c.conditions}};
  const auto& l = c.synth;
  j["synth"] = {{"teams", l.teams}, {"players_per_team", l.players_per_team},
                {"matches_per_team", l.matches_per_team}, {"half_duration", l.half_duration},
                {"cuts_first_half", l.cuts_first_half}, {"cuts_second_half", l.cuts_second_half},
                {"multi_role_fraction", l.multi_role_fraction}, {"style_separation", l.style_separation},
                {"geo", l.geo}};
  return j.dump(2) + "\n";
}

void run_synth(const Context& ctx) {
  auto cfg = ctx.config.synth;
  cfg.seed = derive_seed(ctx.config.seed, "synth");
  cfg.length = ctx.config.length;
  cfg.width = ctx.config.width;
  if (cfg.geo) {
    // A pitch near 37.5N 127.0E, rotated slightly off north.
    const ingest::GeoPoint a{37.5, 127.0};
    const double mlat = 111132.954, mlon = 111319.49 * std::cos(37.5 * std::numbers::pi / 180.0);
    auto at = [&](double x, double y) {
      const double c = std::cos(0.3), s = std::sin(0.3);
      return ingest::GeoPoint{a.lat + (x * s + y * c) / mlat, a.lon + (x * c - y * s) / mlon};
    };
    cfg.calibration.length = cfg.length;
    cfg.calibration.width = cfg.width;
    cfg.calibration.corners = {at(0, 0), at(cfg.length, 0), at(cfg.length, cfg.width), at(0, cfg.width)};
  }
  say(ctx, "synth: generating league");
  const auto lg = synth::generate_league(cfg, ctx.layout.root);
  StageLog log;
  log.add("league", {{"players", lg.players.size()},
                     {"matches", lg.matches.size()},
                     {"multi_role_players",
                      std::count_if(lg.players.begin(), lg.players.end(), [](auto& p) { return p.multi_role; })},
                     {"truth_rows", lg.truth.size()}});
  log.write(ctx.layout.stage_log("synth"));
}

void run_ingest(const Context& ctx) {
  const auto& L = ctx.layout;
  need(L.tracking());
  need(L.events());
  std::optional<ingest::PitchCalibration> cal;
  if (!ctx.config.calibration.empty()) {
    cal = ingest::read_calibration(ctx.config.calibration);
  } else if (fs::exists(L.calibration())) {
    cal = ingest::read_calibration(L.calibration());
  }
  say(ctx, "ingest: reading tracking data");
  const auto tracking = ingest::read_tracking(L.tracking(), cal ? &*cal : nullptr);
  const auto events = ingest::read_events(L.events());
  auto opt = ctx.config.ingest;
  opt.length = ctx.config.length;
  opt.width = ctx.config.width;

  fs::remove_all(L.phases_dir());
  fs::create_directories(L.phases_dir());
  StageLog log;
  std::vector<std::string> index;
  for (const auto& [match_id, raw] : tracking) {
    auto ev = events.find(match_id);
    if (ev == events.end()) {
      fail(ErrorCode::kValidation, fmt::format("ingest: no events for match {}", match_id));
    }
    ingest::IngestTally tally;
    const auto phases = ingest::build_phases(raw, ev->second, opt, &tally);
    for (const auto& ph : phases) {
      ingest::write_phase(L.phases_dir() / (ph.phase_id + ".csv"), ph);
      index.push_back(ph.phase_id);
    }
    log.add("match", {{"match_id", match_id},
                      {"players", raw.players.size()},
                      {"phases", phases.size()},
                      {"samples", tally.samples},
                      {"out_of_bounds", tally.out_of_bounds},
                      {"outside_halves", tally.outside_halves}});
    say(ctx, fmt::format("ingest: {} -> {} phases", match_id, phases.size()));
  }
  for (const auto& [match_id, ev] : events) {
    if (!tracking.count(match_id)) log.add("events_without_tracking", {{"match_id", match_id}});
  }
  textio::write_file_atomic(L.phase_index(), join(index, '\n') + (index.empty() ? "" : "\n"));
  log.add("summary", {{"matches", tracking.size()}, {"phases", index.size()}});
  log.write(L.stage_log("ingest"));
}

void run_roles(const Context& ctx) {
  const auto& L = ctx.layout;
  const auto index = read_index(L.phase_index());
  auto ropt = ctx.config.roles;
  ropt.dt = ctx.config.ingest.diff.dt;

  struct PhaseResult {
    std::vector<roles::PlayerPhaseEntity> entities;
    std::vector<ojson> notes;
  };
  std::vector<PhaseResult> results(index.size());
  say(ctx, fmt::format("roles: fitting {} phases", index.size()));
  parallel_for(index.size(), [&](std::size_t i) {
    const auto phase = ingest::read_phase(L.phases_dir() / (index[i] + ".csv"));
    std::set<std::string> teams;
    for (const auto& p : phase.players) teams.insert(p.team);
    for (const auto& team : teams) {
      const auto fit = roles::fit_roles(phase, team, ropt);
      if (!fit) {
        const auto n = std::count_if(phase.players.begin(), phase.players.end(), [&](auto& p) { return p.team == team; });
        results[i].notes.push_back({{"event", "excluded_phase"}, {"phase_id", phase.phase_id}, {"team", team},
                                    {"players", n}, {"reason", "fewer than min_players measured players"}});
        continue;
      }
      for (std::size_t k = 0; k < fit->player_ids.size(); ++k) {
        roles::PlayerPhaseEntity e;
        e.player_id = fit->player_ids[k];
        e.phase_id = phase.phase_id;
        e.role = fit->fit.modal[k];
        e.role_mean = fit->fit.model.roles[static_cast<std::size_t>(e.role)].mean;
        e.duration = fit->duration;
        results[i].entities.push_back(e);
      }
      std::set<std::string> fitted(fit->player_ids.begin(), fit->player_ids.end());
      for (const auto& p : phase.players) {
        if (p.team == team && !fitted.count(p.player_id)) {
          results[i].notes.push_back({{"event", "excluded_player"}, {"phase_id", phase.phase_id},
                                      {"player_id", p.player_id}, {"reason", "coverage below min_coverage"}});
        }
      }
      results[i].notes.push_back({{"event", "phase"}, {"phase_id", phase.phase_id}, {"team", team},
                                  {"players", fit->player_ids.size()}, {"iterations", fit->fit.iterations},
                                  {"last_change_fraction", fit->fit.last_change_fraction}});
    }
  });

  StageLog log;
  std::vector<roles::PlayerPhaseEntity> entities;
  for (auto& r : results) {
    entities.insert(entities.end(), r.entities.begin(), r.entities.end());
    for (auto& n : r.notes) log.lines.push_back(n.dump());
  }
  auto copt = ctx.config.clustering;
  copt.seed = derive_seed(ctx.config.seed, "cluster");
  const auto groups = roles::label_entities(entities, copt);
  roles::write_labels(L.labels(), entities);
  std::map<std::string, int> clusters;
  for (const auto& g : groups) clusters[g.player_id] += 1;
  for (const auto& [player, k] : clusters) log.add("player", {{"player_id", player}, {"clusters", k}});
  log.add("summary", {{"phases", index.size()}, {"player_phases", entities.size()}, {"entities", groups.size()}});
  log.write(L.stage_log("roles"));
  say(ctx, fmt::format("roles: {} player-phases, {} player-role entities", entities.size(), groups.size()));
}

void run_heatmaps(const Context& ctx) {
  const auto& L = ctx.layout;
  need(L.labels());
  const auto labels = roles::read_labels(L.labels());
  std::map<std::string, std::vector<std::size_t>> by_phase;
  for (std::size_t i = 0; i < labels.size(); ++i) by_phase[labels[i].phase_id].push_back(i);
  std::vector<std::string> phase_ids;
  for (const auto& [p, v] : by_phase) phase_ids.push_back(p);

  std::vector<heatmap::HeatmapPair> pairs(labels.size());
  std::vector<heatmap::PhaseHeatmapTally> tallies(phase_ids.size());
  std::vector<std::vector<std::string>> missing(phase_ids.size()), empty(phase_ids.size());
  say(ctx, fmt::format("heatmaps: {} player-phases", labels.size()));
  parallel_for(phase_ids.size(), [&](std::size_t k) {
    const auto phase = ingest::read_phase(L.phases_dir() / (phase_ids[k] + ".csv"));
    for (auto i : by_phase.at(phase_ids[k])) {
      const auto& e = labels[i];
      auto it = std::find_if(phase.players.begin(), phase.players.end(),
                             [&](const auto& s) { return s.player_id == e.player_id; });
      if (it == phase.players.end()) {
        fail(ErrorCode::kValidation,
             fmt::format("heatmaps: player {} has no data in phase {}", e.player_id, e.phase_id));
      }
      pairs[i] = heatmap::phase_heatmaps(*it, phase.phase_id, ctx.config.length, ctx.config.width,
                                         ctx.config.direction, &tallies[k]);
      pairs[i].entity_id = e.entity_id;
      if (pairs[i].location.total() == 0) empty[k].push_back(pairs[i].record_id);
    }
  });
  StageLog log;
  std::size_t dropped = 0, oob = 0;
  for (std::size_t k = 0; k < phase_ids.size(); ++k) {
    dropped += tallies[k].location_dropped;
    oob += tallies[k].out_of_bounds;
    for (const auto& r : empty[k]) log.add("warning_empty_heatmap", {{"record_id", r}});
  }
  heatmap::write_store(L.heatmaps(), pairs);
  const auto split = heatmap::split_dataset(pairs, derive_seed(ctx.config.seed, "split"), ctx.config.split);
  fs::create_directories(L.split("train").parent_path());
  auto ids = [&](const std::vector<std::size_t>& idx) {
    std::vector<std::string> v;
    for (auto i : idx) v.push_back(pairs[i].record_id);
    return v;
  };
  heatmap::write_manifest(L.split("train"), ids(split.train));
  heatmap::write_manifest(L.split("val"), ids(split.validation));
  heatmap::write_manifest(L.split("test"), ids(split.test));
  std::size_t empty_n = 0;
  for (const auto& e : empty) empty_n += e.size();
  log.add("summary", {{"pairs", pairs.size()},
                      {"entities", split.phases_per_entity.size()},
                      {"out_of_bounds_samples", oob},
                      {"location_dropped", dropped},
                      {"empty_heatmaps", empty_n},
                      {"train", split.train.size()},
                      {"val", split.validation.size()},
                      {"test", split.test.size()}});
  log.write(L.stage_log("heatmaps"));
}

void run_augment(const Context& ctx) {
  const auto& L = ctx.layout;
  need(L.heatmaps());
  const auto pairs = heatmap::read_store(L.heatmaps());
  std::map<std::string, const heatmap::HeatmapPair*> by_id;
  for (const auto& p : pairs) by_id[p.record_id] = &p;
  StageLog log;
  for (const std::string part : {"train", "val", "test"}) {
    need(L.split(part));
    std::map<std::string, std::vector<heatmap::HeatmapPair>> by_entity;
    for (const auto& id : heatmap::read_manifest(L.split(part))) {
      auto it = by_id.find(id);
      if (it == by_id.end()) fail(ErrorCode::kValidation, fmt::format("augment: unknown record {} in {} split", id, part));
      by_entity[it->second->entity_id].push_back(*it->second);
    }
    std::vector<heatmap::HeatmapPair> out;
    std::size_t excluded = 0;
    for (auto& [entity, list] : by_entity) {
      std::sort(list.begin(), list.end(), [](auto& a, auto& b) { return a.record_id < b.record_id; });
      if (list.size() < 3) {
        ++excluded;
        log.add("excluded_entity", {{"split", part}, {"entity_id", entity}, {"pairs", list.size()}});
        continue;
      }
      auto aug = part == "train"
                     ? heatmap::augment_random(list, derive_seed(ctx.config.seed, "augment", entity),
                                               ctx.config.train_augment_factor)
                     : heatmap::augment_exhaustive(list);
      for (auto& a : aug) out.push_back(std::move(a));
    }
    heatmap::write_store(L.augmented(part), out);
    log.add("split", {{"split", part}, {"entities", by_entity.size() - excluded}, {"excluded", excluded},
                      {"augmented", out.size()}});
    say(ctx, fmt::format("augment: {} -> {} pairs", part, out.size()));
  }
  log.write(L.stage_log("augment"));
}

void run_train(const Context& ctx) {
  const auto& L = ctx.layout;
  need(L.augmented("train"));
  need(L.augmented("val"));
  const auto tr = heatmap::read_store(L.augmented("train"));
  const auto va = heatmap::read_store(L.augmented("val"));
  require(!tr.empty(), "train: no augmented training pairs", ErrorCode::kValidation);
  require(!va.empty(), "train: no augmented validation pairs", ErrorCode::kValidation);
  const auto tl = label_map(tr), vl = label_map(va);
  const auto train_labels = labels_of(tr, tl), val_labels = labels_of(va, vl);
  const auto train_in = net::make_inputs(tr), val_in = net::make_inputs(va);

  auto tcfg = ctx.config.train;
  tcfg.seed = derive_seed(ctx.config.seed, "train");
  say(ctx, fmt::format("train: {} training pairs ({} identities), {} validation pairs", tr.size(), tl.size(), va.size()));
  auto result = trainer::train(train_in, train_labels, val_in, val_labels, tcfg, [&](const trainer::TrainRecord& r) {
    say(ctx, fmt::format("train: epoch {} selection {} loss {:.4f} val_loss {:.4f} val_acc {:.4f} lr {:.4g}", r.epoch,
                         r.selection, r.loss, r.val_loss, r.val_accuracy, r.lr));
  });
  say(ctx, fmt::format("train: stopped ({}) after {:.1f} s", result.log.stop_reason, result.log.wall_seconds));
  net::write_checkpoint(L.model(), result.model);
  trainer::write_train_log(L.train_log(), result.log);
  net::Manifest m;
  m["format"] = fmt::format("SIXMAPNT v{}", net::kCheckpointVersion);
  m["alpha"] = textio::format_double(tcfg.alpha);
  m["embedding_dim"] = std::to_string(result.model.embedding_dim());
  m["train_pairs"] = std::to_string(tr.size());
  m["train_identities"] = std::to_string(tl.size());
  m["val_pairs"] = std::to_string(va.size());
  m["val_identities"] = std::to_string(vl.size());
  m["epochs"] = std::to_string(result.log.records.size());
  m["best_val_accuracy"] = textio::format_double(result.log.best_accuracy);
  m["best_epoch"] = result.log.best_record >= 0
                        ? std::to_string(result.log.records[static_cast<std::size_t>(result.log.best_record)].epoch)
                        : "-1";
  m["stop_reason"] = result.log.stop_reason;
  m["seed"] = std::to_string(ctx.config.seed);
  net::write_checkpoint_manifest(L.model_manifest(), m);
  StageLog log;
  log.add("summary", {{"epochs", result.log.records.size()},
                      {"best_val_accuracy", result.log.best_accuracy},
                      {"stop_reason", result.log.stop_reason}});
  log.write(L.stage_log("train"));
}

void run_embed(const Context& ctx) {
  const auto& L = ctx.layout;
  need(L.model());
  auto model = net::read_checkpoint(L.model());
  StageLog log;
  for (const std::string part : {"train", "val", "test"}) {
    need(L.augmented(part));
    const auto pairs = heatmap::read_store(L.augmented(part));
    const auto in = net::make_inputs(pairs);
    net::EmbedStats stats;
    const auto emb = trainer::embed_batch(model, in, &stats);
    const std::size_t dim = model.embedding_dim();
    std::vector<EmbeddingRecord> recs(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      recs[i].record_id = pairs[i].record_id;
      recs[i].entity_id = pairs[i].entity_id;
      recs[i].sources = pairs[i].sources;
      recs[i].vector.assign(emb.begin() + static_cast<std::ptrdiff_t>(i * dim),
                            emb.begin() + static_cast<std::ptrdiff_t>((i + 1) * dim));
    }
    write_embeddings(L.embeddings(part), recs);
    log.add("split", {{"split", part}, {"vectors", recs.size()}, {"zero_vectors", stats.zero_vectors}});
    if (stats.zero_vectors) say(ctx, fmt::format("embed: warning: {} zero vectors in {}", stats.zero_vectors, part));
  }
  log.write(L.stage_log("embed"));
}

void run_identify(const Context& ctx) {
  const auto& L = ctx.layout;
  need(L.embeddings("train"));
  need(L.embeddings("test"));
  const auto gallery_vecs = group_embeddings(read_embeddings(L.embeddings("train")));
  const auto probes = group_embeddings(read_embeddings(L.embeddings("test")));
  auto opt = ctx.config.identify;
  opt.seed = derive_seed(ctx.config.seed, "identify");
  const auto gallery = identify::build_gallery(gallery_vecs, opt);
  StageLog log;
  for (const auto& e : gallery.excluded) log.add("excluded_gallery_entity", {{"entity_id", e}, {"reason", "fewer than 2 vectors"}});
  std::vector<identify::Condition> conds;
  if (ctx.config.conditions.empty()) {
    conds = identify::default_conditions();
  } else {
    for (const auto& c : ctx.config.conditions) conds.push_back(identify::parse_condition(c));
  }
  std::vector<identify::SimilarityReport> reports;
  for (const auto& c : conds) {
    reports.push_back(identify::identify(gallery, probes, c, opt));
    const auto& r = reports.back();
    say(ctx, fmt::format("identify: {} top-1 {:.3f} top-10 {:.3f} MRR {:.3f} over {}", c.name, r.top_k[0], r.top_k[3],
                         r.mrr, r.entities));
    log.add("condition", {{"condition", c.name}, {"entities", r.entities}, {"short_probes", r.short_probes}});
  }
  identify::write_results(L.results(), reports, opt);
  identify::write_rankings(L.rankings(), reports);
  log.write(L.stage_log("identify"));
}

void run_report(const Context& ctx) {
  const auto& L = ctx.layout;
  need(L.results());
  const auto reports = identify::read_results(L.results());
  std::size_t entities = reports.empty() ? 0 : reports.front().entities;
  std::string text = "Player identification\n\n";
  text += fmt::format("Entities: {} (chance top-1 {:.1f}%)\n", entities, entities ? 100.0 / static_cast<double>(entities) : 0.0);
  if (fs::exists(L.model_manifest())) {
    const auto m = net::read_checkpoint_manifest(L.model_manifest());
    if (m.count("best_val_accuracy")) {
      const double acc = textio::parse_double(m.at("best_val_accuracy"), L.model_manifest().string());
      text += fmt::format("Validation accuracy: {:.1f}%\n", 100.0 * acc);
    }
  }
  text += "\n" + identify::render_table(reports);
  textio::write_file_atomic(L.report(), text);
  say(ctx, "report:\n" + text);
}

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names = {"synth", "ingest", "roles", "heatmaps", "augment",
                                                 "train", "embed", "identify", "report"};
  return names;
}

void run_stage(const std::string& stage, const Context& ctx) {
  fs::create_directories(ctx.layout.root);
  set_jobs(ctx.config.jobs);
  if (stage == "synth") return run_synth(ctx);
  if (stage == "ingest") return run_ingest(ctx);
  if (stage == "roles") return run_roles(ctx);
  if (stage == "heatmaps") return run_heatmaps(ctx);
  if (stage == "augment") return run_augment(ctx);
  if (stage == "train") return run_train(ctx);
  if (stage == "embed") return run_embed(ctx);
  if (stage == "identify") return run_identify(ctx);
  if (stage == "report") return run_report(ctx);
  fail(ErrorCode::kInvalidArgument, "unknown stage '" + stage + "'");
}

void run_chain(const Context& ctx) {
  for (const auto& s : stage_names()) {
    if (s != "synth") run_stage(s, ctx);
  }
}

void write_embeddings(const fs::path& path, const std::vector<EmbeddingRecord>& records) {
  textio::AtomicWriter w(path);
  w.stream() << "record_id\tentity_id\tsources\tvector\n";
  std::string buf;
  for (const auto& r : records) {
    buf.clear();
    fmt::format_to(std::back_inserter(buf), "{}\t{}\t{}\t", r.record_id, r.entity_id, join(r.sources, ';'));
    for (std::size_t i = 0; i < r.vector.size(); ++i) {
      if (i) buf.push_back(',');
      fmt::format_to(std::back_inserter(buf), "{}", r.vector[i]);
    }
    buf.push_back('\n');
    w.stream() << buf;
  }
  w.commit();
}

std::vector<EmbeddingRecord> read_embeddings(const fs::path& path) {
  need(path);
  textio::DelimitedReader r(path, '\t');
  const auto cr = r.require_column("record_id"), ce = r.require_column("entity_id");
  const auto cs = r.require_column("sources"), cv = r.require_column("vector");
  std::vector<EmbeddingRecord> out;
  std::vector<std::string_view> f;
  while (r.next(f)) {
    const auto ctx = r.where();
    EmbeddingRecord e;
    e.record_id = std::string(f[cr]);
    e.entity_id = std::string(f[ce]);
    for (auto s : textio::split(f[cs], ';')) {
      if (!s.empty()) e.sources.emplace_back(s);
    }
    for (auto v : textio::split(f[cv], ',')) e.vector.push_back(static_cast<float>(textio::parse_double(v, ctx)));
    if (!out.empty() && e.vector.size() != out.front().vector.size()) {
      fail(ErrorCode::kMalformedInput, ctx + ": embedding dimension differs from earlier rows");
    }
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<identify::EntityVectors> group_embeddings(const std::vector<EmbeddingRecord>& records) {
  std::map<std::string, std::vector<const EmbeddingRecord*>> by;
  for (const auto& r : records) by[r.entity_id].push_back(&r);
  std::vector<identify::EntityVectors> out;
  for (const auto& [id, list] : by) {
    identify::EntityVectors e;
    e.entity_id = id;
    const auto dim = static_cast<Eigen::Index>(list.front()->vector.size());
    e.vectors.resize(static_cast<Eigen::Index>(list.size()), dim);
    for (std::size_t i = 0; i < list.size(); ++i) {
      for (Eigen::Index d = 0; d < dim; ++d) e.vectors(static_cast<Eigen::Index>(i), d) = list[i]->vector[static_cast<std::size_t>(d)];
      e.sources.push_back(list[i]->sources);
    }
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace sixmap::pipeline
