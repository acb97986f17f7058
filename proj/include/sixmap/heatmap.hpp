#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "sixmap/common.hpp"
#include "sixmap/ingest.hpp"

namespace sixmap::heatmap {

constexpr int kRows = 35;
constexpr int kCols = 50;
constexpr int kCells = kRows * kCols;

// Axis-aligned domain of a grid: columns split [x0, x1], rows split [y0, y1].
struct Bounds {
  double x0 = 0.0, x1 = 1.0, y0 = 0.0, y1 = 1.0;
  friend bool operator==(const Bounds&, const Bounds&) = default;
};

// 35 x 50 grid of non-negative counts, row-major, row index along y.
class HeatmapGrid {
 public:
  HeatmapGrid() : HeatmapGrid(Bounds{}) {}
  explicit HeatmapGrid(Bounds bounds) : bounds_(bounds), counts_(kCells, 0) {}

  const Bounds& bounds() const { return bounds_; }
  std::int64_t total() const { return total_; }
  std::int32_t at(int row, int col) const { return counts_[static_cast<std::size_t>(row * kCols + col)]; }
  std::span<const std::int32_t> counts() const { return counts_; }

  void increment(int row, int col, std::int32_t by = 1);

  // Cellwise sum; throws kInvalidArgument when the bounds differ.
  HeatmapGrid& operator+=(const HeatmapGrid& other);

  friend bool operator==(const HeatmapGrid&, const HeatmapGrid&) = default;

 private:
  Bounds bounds_;
  std::vector<std::int32_t> counts_;
  std::int64_t total_ = 0;
};

HeatmapGrid add(const HeatmapGrid& a, const HeatmapGrid& b);

// Bin index for v in [lo, hi] split into n half-open cells, last cell closed.
// Returns -1 outside the range.
int bin_index(double v, double lo, double hi, int n);

Bounds location_bounds(double length, double width);

// Positions outside [0, L] x [0, W] are dropped and counted in `dropped`.
HeatmapGrid location_heatmap(std::span<const Vec2> positions, double length, double width,
                             std::size_t* dropped = nullptr);

struct DirectionOptions {
  double threshold = 4.0;
  double vx_max = 12.0;
  double vy_max = 8.0;
};

Bounds direction_bounds(const DirectionOptions& opt = {});

// Counts velocity endpoints with speed >= threshold; endpoints outside the
// rectangle are clamped to the nearest boundary cell.  NaN samples are skipped.
HeatmapGrid direction_heatmap(std::span<const Vec2> velocities, const DirectionOptions& opt = {});

// Cell values divided by the total count (all zeros for an empty grid).
std::vector<float> normalized(const HeatmapGrid& grid);

struct HeatmapPair {
  std::string record_id;
  std::string entity_id;
  std::vector<std::string> sources;  // phase ids
  HeatmapGrid location;
  HeatmapGrid direction;
};

struct PhaseHeatmapTally {
  std::size_t location_dropped = 0;
  std::size_t out_of_bounds = 0;
};

// Heatmap pair for one player's series in one phase; samples flagged out of
// bounds are excluded from both grids.
HeatmapPair phase_heatmaps(const ingest::PlayerSeries& series, const std::string& phase_id,
                           double length, double width, const DirectionOptions& opt = {},
                           PhaseHeatmapTally* tally = nullptr);

std::string phase_record_id(const std::string& phase_id, const std::string& player_id);

struct SplitOptions {
  std::size_t test_min_phases = 20;
  std::size_t test_phases = 10;
  std::size_t val_min_phases = 15;
  std::size_t val_phases = 5;
};

// Indices into the input pair list.
struct DatasetSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
  std::map<std::string, std::size_t> phases_per_entity;
};

// Entities with at least test_min_phases phases send test_phases sampled
// phases to test; of what remains, entities with at least val_min_phases
// send val_phases to validation; the rest is training data.
DatasetSplit split_dataset(const std::vector<HeatmapPair>& pairs, std::uint64_t seed,
                           const SplitOptions& opt = {});

// All C(n, r) sums of one entity's pairs, combinations in lexicographic order.
std::vector<HeatmapPair> augment_exhaustive(std::span<const HeatmapPair> entity_pairs, int r = 3);

// factor * n uniform 3-combination draws with replacement, deduplicated by
// source triple (first-draw order kept).
std::vector<HeatmapPair> augment_random(std::span<const HeatmapPair> entity_pairs,
                                        std::uint64_t seed, int factor = 4);

HeatmapPair accumulate(std::span<const HeatmapPair* const> parts);

std::uint64_t binomial(std::uint64_t n, std::uint64_t k);

// Heatmap store: tab-separated records (record_id, entity_id, sources joined
// by ';', location cells, direction cells), cells comma-separated row-major.
void write_store(const std::filesystem::path& path, const std::vector<HeatmapPair>& pairs);
std::vector<HeatmapPair> read_store(const std::filesystem::path& path);

void write_manifest(const std::filesystem::path& path, const std::vector<std::string>& ids);
std::vector<std::string> read_manifest(const std::filesystem::path& path);

}  // namespace sixmap::heatmap
