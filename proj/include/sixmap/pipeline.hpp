#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "sixmap/clustering.hpp"
#include "sixmap/heatmap.hpp"
#include "sixmap/identify.hpp"
#include "sixmap/ingest.hpp"
#include "sixmap/roles.hpp"
#include "sixmap/synth.hpp"
#include "sixmap/trainer.hpp"

namespace sixmap::pipeline {

struct PipelineConfig {
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  double length = 105.0;
  double width = 68.0;
  // Optional calibration file for geographic tracking data.
  std::string calibration;
  ingest::IngestOptions ingest;
  roles::RoleFitOptions roles;
  roles::ClusterOptions clustering;
  heatmap::DirectionOptions direction;
  heatmap::SplitOptions split;
  int train_augment_factor = 4;
  trainer::TrainConfig train;
  identify::IdentifyOptions identify;
  std::vector<std::string> conditions;
  synth::LeagueConfig synth;
};

// Parses a JSON document; absent keys keep their defaults, unknown keys and
// out-of-range values throw kInvalidArgument.
PipelineConfig parse_config(const std::string& json_text);
PipelineConfig load_config(const std::filesystem::path& path);
std::string dump_config(const PipelineConfig& cfg);

// Fixed file layout inside a work directory.
struct Layout {
  std::filesystem::path root;

  std::filesystem::path tracking() const { return root / "tracking.csv"; }
  std::filesystem::path events() const { return root / "events.csv"; }
  std::filesystem::path truth() const { return root / "truth.csv"; }
  std::filesystem::path calibration() const { return root / "calibration.json"; }
  std::filesystem::path phases_dir() const { return root / "phases"; }
  std::filesystem::path phase_index() const { return root / "phases" / "index.txt"; }
  std::filesystem::path labels() const { return root / "labels.csv"; }
  std::filesystem::path heatmaps() const { return root / "heatmaps.tsv"; }
  std::filesystem::path split(const std::string& part) const { return root / "split" / (part + ".txt"); }
  std::filesystem::path augmented(const std::string& part) const { return root / ("aug_" + part + ".tsv"); }
  std::filesystem::path model() const { return root / "model.bin"; }
  std::filesystem::path model_manifest() const { return root / "model.manifest"; }
  std::filesystem::path train_log() const { return root / "train_log.jsonl"; }
  std::filesystem::path embeddings(const std::string& part) const {
    return root / ("embeddings_" + part + ".tsv");
  }
  std::filesystem::path results() const { return root / "results.json"; }
  std::filesystem::path rankings() const { return root / "rankings.tsv"; }
  std::filesystem::path report() const { return root / "report.txt"; }
  std::filesystem::path stage_log(const std::string& stage) const { return root / "logs" / (stage + ".jsonl"); }
};

using Progress = std::function<void(const std::string&)>;

struct Context {
  PipelineConfig config;
  Layout layout;
  Progress progress;
};

void run_synth(const Context& ctx);
void run_ingest(const Context& ctx);
void run_roles(const Context& ctx);
void run_heatmaps(const Context& ctx);
void run_augment(const Context& ctx);
void run_train(const Context& ctx);
void run_embed(const Context& ctx);
void run_identify(const Context& ctx);
void run_report(const Context& ctx);

const std::vector<std::string>& stage_names();
void run_stage(const std::string& stage, const Context& ctx);
// Every stage after synth, in order.
void run_chain(const Context& ctx);

// Embedding file: record_id, entity_id, sources, comma-separated components.
struct EmbeddingRecord {
  std::string record_id;
  std::string entity_id;
  std::vector<std::string> sources;
  std::vector<float> vector;
};
void write_embeddings(const std::filesystem::path& path, const std::vector<EmbeddingRecord>& records);
std::vector<EmbeddingRecord> read_embeddings(const std::filesystem::path& path);
std::vector<identify::EntityVectors> group_embeddings(const std::vector<EmbeddingRecord>& records);

}  // namespace sixmap::pipeline
