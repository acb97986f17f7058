#include "sixmap/heatmap.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <fmt/format.h>

#include "sixmap/random.hpp"
#include "sixmap/textio.hpp"

namespace sixmap::heatmap {

void HeatmapGrid::increment(int row, int col, std::int32_t by) {
  counts_[static_cast<std::size_t>(row * kCols + col)] += by;
  total_ += by;
}

HeatmapGrid& HeatmapGrid::operator+=(const HeatmapGrid& other) {
  require(bounds_ == other.bounds_, "heatmap add: mismatched axis bounds");
  for (int i = 0; i < kCells; ++i) counts_[static_cast<std::size_t>(i)] += other.counts_[static_cast<std::size_t>(i)];
  total_ += other.total_;
  return *this;
}

HeatmapGrid add(const HeatmapGrid& a, const HeatmapGrid& b) {
  HeatmapGrid out = a;
  out += b;
  return out;
}

int bin_index(double v, double lo, double hi, int n) {
  if (!(v >= lo && v <= hi)) return -1;
  if (v == hi) return n - 1;
  const int i = static_cast<int>(std::floor((v - lo) * n / (hi - lo)));
  return std::clamp(i, 0, n - 1);
}

Bounds location_bounds(double length, double width) { return {0.0, length, 0.0, width}; }

HeatmapGrid location_heatmap(std::span<const Vec2> positions, double length, double width,
                             std::size_t* dropped) {
  HeatmapGrid g(location_bounds(length, width));
  std::size_t drop = 0;
  for (auto p : positions) {
    const int c = bin_index(p.x, 0.0, length, kCols);
    const int r = bin_index(p.y, 0.0, width, kRows);
    if (c < 0 || r < 0) {
      ++drop;
      continue;
    }
    g.increment(r, c);
  }
  if (dropped) *dropped += drop;
  return g;
}

Bounds direction_bounds(const DirectionOptions& opt) {
  return {-opt.vx_max, opt.vx_max, -opt.vy_max, opt.vy_max};
}

HeatmapGrid direction_heatmap(std::span<const Vec2> velocities, const DirectionOptions& opt) {
  HeatmapGrid g(direction_bounds(opt));
  for (auto v : velocities) {
    if (std::isnan(v.x) || std::isnan(v.y)) continue;
    if (v.norm() < opt.threshold) continue;
    const double x = std::clamp(v.x, -opt.vx_max, opt.vx_max);
    const double y = std::clamp(v.y, -opt.vy_max, opt.vy_max);
    g.increment(bin_index(y, -opt.vy_max, opt.vy_max, kRows),
                bin_index(x, -opt.vx_max, opt.vx_max, kCols));
  }
  return g;
}

std::vector<float> normalized(const HeatmapGrid& grid) {
  std::vector<float> out(kCells, 0.0f);
  if (grid.total() == 0) return out;
  const double inv = 1.0 / static_cast<double>(grid.total());
  auto c = grid.counts();
  for (int i = 0; i < kCells; ++i) out[static_cast<std::size_t>(i)] = static_cast<float>(c[static_cast<std::size_t>(i)] * inv);
  return out;
}

std::string phase_record_id(const std::string& phase_id, const std::string& player_id) {
  return phase_id + ":" + player_id;
}

HeatmapPair phase_heatmaps(const ingest::PlayerSeries& series, const std::string& phase_id,
                           double length, double width, const DirectionOptions& opt,
                           PhaseHeatmapTally* tally) {
  std::vector<Vec2> pos, vel;
  pos.reserve(series.size());
  vel.reserve(series.size());
  std::size_t oob = 0;
  for (std::size_t i = 0; i < series.size(); ++i) {
    if (series.out_of_bounds[i]) {
      ++oob;
      continue;
    }
    pos.push_back(series.pos[i]);
    vel.push_back(series.vel[i]);
  }
  HeatmapPair pair;
  pair.record_id = phase_record_id(phase_id, series.player_id);
  pair.sources = {phase_id};
  std::size_t dropped = 0;
  pair.location = location_heatmap(pos, length, width, &dropped);
  pair.direction = direction_heatmap(vel, opt);
  if (tally) {
    tally->location_dropped += dropped;
    tally->out_of_bounds += oob;
  }
  return pair;
}

DatasetSplit split_dataset(const std::vector<HeatmapPair>& pairs, std::uint64_t seed,
                           const SplitOptions& opt) {
  std::map<std::string, std::vector<std::size_t>> by_entity;
  for (std::size_t i = 0; i < pairs.size(); ++i) by_entity[pairs[i].entity_id].push_back(i);

  DatasetSplit split;
  for (auto& [entity, idx] : by_entity) {
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return pairs[a].record_id < pairs[b].record_id;
    });
    split.phases_per_entity[entity] = idx.size();
    Rng rng(derive_seed(seed, "split", entity));
    shuffle(idx, rng);
    std::size_t pos = 0;
    if (idx.size() >= opt.test_min_phases) {
      split.test.insert(split.test.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(opt.test_phases));
      pos = opt.test_phases;
    }
    if (idx.size() - pos >= opt.val_min_phases) {
      split.validation.insert(split.validation.end(), idx.begin() + static_cast<std::ptrdiff_t>(pos),
                              idx.begin() + static_cast<std::ptrdiff_t>(pos + opt.val_phases));
      pos += opt.val_phases;
    }
    split.train.insert(split.train.end(), idx.begin() + static_cast<std::ptrdiff_t>(pos), idx.end());
  }
  for (auto* v : {&split.train, &split.validation, &split.test}) std::sort(v->begin(), v->end());
  return split;
}

HeatmapPair accumulate(std::span<const HeatmapPair* const> parts) {
  require(!parts.empty(), "accumulate: no parts");
  HeatmapPair out;
  out.entity_id = parts.front()->entity_id;
  out.location = parts.front()->location;
  out.direction = parts.front()->direction;
  out.sources = parts.front()->sources;
  for (std::size_t i = 1; i < parts.size(); ++i) {
    require(parts[i]->entity_id == out.entity_id, "accumulate: parts from different entities");
    out.location += parts[i]->location;
    out.direction += parts[i]->direction;
    out.sources.insert(out.sources.end(), parts[i]->sources.begin(), parts[i]->sources.end());
  }
  std::string id = out.entity_id + "|";
  for (std::size_t i = 0; i < out.sources.size(); ++i) id += (i ? "+" : "") + out.sources[i];
  out.record_id = std::move(id);
  return out;
}

std::uint64_t binomial(std::uint64_t n, std::uint64_t k) {
  if (k > n) return 0;
  k = std::min(k, n - k);
  std::uint64_t r = 1;
  for (std::uint64_t i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

std::vector<HeatmapPair> augment_exhaustive(std::span<const HeatmapPair> entity_pairs, int r) {
  const int n = static_cast<int>(entity_pairs.size());
  std::vector<HeatmapPair> out;
  if (r <= 0 || n < r) return out;
  out.reserve(binomial(static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(r)));
  std::vector<int> comb(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) comb[static_cast<std::size_t>(i)] = i;
  std::vector<const HeatmapPair*> parts(static_cast<std::size_t>(r));
  while (true) {
    for (int i = 0; i < r; ++i) parts[static_cast<std::size_t>(i)] = &entity_pairs[static_cast<std::size_t>(comb[static_cast<std::size_t>(i)])];
    out.push_back(accumulate(parts));
    int i = r - 1;
    while (i >= 0 && comb[static_cast<std::size_t>(i)] == n - r + i) --i;
    if (i < 0) break;
    ++comb[static_cast<std::size_t>(i)];
    for (int j = i + 1; j < r; ++j) comb[static_cast<std::size_t>(j)] = comb[static_cast<std::size_t>(j - 1)] + 1;
  }
  return out;
}

std::vector<HeatmapPair> augment_random(std::span<const HeatmapPair> entity_pairs,
                                        std::uint64_t seed, int factor) {
  const std::size_t n = entity_pairs.size();
  std::vector<HeatmapPair> out;
  if (n < 3) return out;
  Rng rng(seed);
  std::set<std::array<std::size_t, 3>> seen;
  const std::size_t draws = static_cast<std::size_t>(factor) * n;
  for (std::size_t d = 0; d < draws; ++d) {
    auto pick = sample_without_replacement(rng, n, 3);
    std::array<std::size_t, 3> key{pick[0], pick[1], pick[2]};
    std::sort(key.begin(), key.end());
    if (!seen.insert(key).second) continue;
    const std::array<const HeatmapPair*, 3> parts{&entity_pairs[key[0]], &entity_pairs[key[1]],
                                                  &entity_pairs[key[2]]};
    out.push_back(accumulate(parts));
  }
  return out;
}

namespace {

void write_cells(std::string& buf, std::span<const std::int32_t> cells) {
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) buf.push_back(',');
    fmt::format_to(std::back_inserter(buf), "{}", cells[i]);
  }
}

HeatmapGrid parse_cells(std::string_view text, Bounds bounds, const std::string& ctx) {
  HeatmapGrid g(bounds);
  auto cells = textio::split(text, ',');
  require(cells.size() == static_cast<std::size_t>(kCells),
          fmt::format("{}: expected {} cells, found {}", ctx, kCells, cells.size()),
          ErrorCode::kMalformedInput);
  for (int i = 0; i < kCells; ++i) {
    const auto v = textio::parse_int(cells[static_cast<std::size_t>(i)], ctx);
    require(v >= 0, fmt::format("{}: negative count", ctx), ErrorCode::kMalformedInput);
    if (v) g.increment(i / kCols, i % kCols, static_cast<std::int32_t>(v));
  }
  return g;
}

Bounds parse_bounds(std::string_view s, const std::string& ctx) {
  auto f = textio::split(s, ',');
  require(f.size() == 4, fmt::format("{}: malformed bounds", ctx), ErrorCode::kMalformedInput);
  return {textio::parse_double(f[0], ctx), textio::parse_double(f[1], ctx),
          textio::parse_double(f[2], ctx), textio::parse_double(f[3], ctx)};
}

std::string format_bounds(const Bounds& b) {
  return fmt::format("{},{},{},{}", textio::format_double(b.x0), textio::format_double(b.x1),
                     textio::format_double(b.y0), textio::format_double(b.y1));
}

}  // namespace

void write_store(const std::filesystem::path& path, const std::vector<HeatmapPair>& pairs) {
  textio::AtomicWriter w(path);
  auto& os = w.stream();
  const Bounds lb = pairs.empty() ? location_bounds(105, 68) : pairs.front().location.bounds();
  const Bounds db = pairs.empty() ? direction_bounds() : pairs.front().direction.bounds();
  os << "# heatmaps rows=" << kRows << " cols=" << kCols << " location_bounds=" << format_bounds(lb)
     << " direction_bounds=" << format_bounds(db) << "\n";
  os << "record_id\tentity_id\tsources\tlocation\tdirection\n";
  std::string buf;
  for (const auto& p : pairs) {
    require(p.location.bounds() == lb && p.direction.bounds() == db,
            "write_store: records with different bounds");
    buf.clear();
    buf += p.record_id;
    buf += '\t';
    buf += p.entity_id;
    buf += '\t';
    for (std::size_t i = 0; i < p.sources.size(); ++i) {
      if (i) buf += ';';
      buf += p.sources[i];
    }
    buf += '\t';
    write_cells(buf, p.location.counts());
    buf += '\t';
    write_cells(buf, p.direction.counts());
    buf += '\n';
    os << buf;
  }
  w.commit();
}

std::vector<HeatmapPair> read_store(const std::filesystem::path& path) {
  Bounds lb = location_bounds(105, 68), db = direction_bounds();
  {
    std::ifstream in(path);
    require(static_cast<bool>(in), fmt::format("cannot open {}", path.string()),
            ErrorCode::kMissingInput);
    std::string first;
    std::getline(in, first);
    require(first.rfind("# heatmaps", 0) == 0,
            fmt::format("{}: not a heatmap store", path.string()), ErrorCode::kMalformedInput);
    for (auto kv : textio::split(first, ' ')) {
      auto eq = kv.find('=');
      if (eq == std::string_view::npos) continue;
      auto key = kv.substr(0, eq), val = kv.substr(eq + 1);
      if (key == "location_bounds") lb = parse_bounds(val, path.string());
      if (key == "direction_bounds") db = parse_bounds(val, path.string());
      if (key == "rows")
        require(textio::parse_int(val, path.string()) == kRows, "heatmap store: row count mismatch",
                ErrorCode::kMalformedInput);
      if (key == "cols")
        require(textio::parse_int(val, path.string()) == kCols, "heatmap store: column count mismatch",
                ErrorCode::kMalformedInput);
    }
  }
  textio::DelimitedReader r(path, '\t');
  std::vector<HeatmapPair> out;
  std::vector<std::string_view> f;
  while (r.next(f)) {
    const auto ctx = r.where();
    HeatmapPair p;
    p.record_id = std::string(f[0]);
    p.entity_id = std::string(f[1]);
    for (auto s : textio::split(f[2], ';')) p.sources.emplace_back(s);
    p.location = parse_cells(f[3], lb, ctx);
    p.direction = parse_cells(f[4], db, ctx);
    out.push_back(std::move(p));
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, const std::vector<std::string>& ids) {
  std::string s;
  for (const auto& id : ids) {
    s += id;
    s += '\n';
  }
  textio::write_file_atomic(path, s);
}

std::vector<std::string> read_manifest(const std::filesystem::path& path) {
  return textio::read_lines(path);
}

}  // namespace sixmap::heatmap
