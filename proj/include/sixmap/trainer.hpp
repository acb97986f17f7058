#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sixmap/net.hpp"

namespace sixmap::trainer {

struct SelectOptions {
  std::size_t per_identity = 5;
  std::size_t nearest = 10;
};

// Candidate set S: up to per_identity sample indices per label, sorted.
std::vector<std::uint32_t> sample_candidates(std::span<const int> labels, std::uint64_t seed,
                                             std::size_t per_identity = 5);

struct TripletBatchPlan {
  std::vector<net::Triplet> triplets;
  std::vector<std::uint32_t> candidates;
  int selection = 0;
  // Anchors whose identity has no candidate other than the anchor itself.
  std::size_t anchors_without_positive = 0;
  std::size_t hard = 0;
  std::size_t nearest_fallback = 0;
};

// Every sample is an anchor paired with each candidate of its own label
// (except itself).  Per positive, the negative is a uniform pick among the
// candidates of other labels that violate the margin, or failing that a
// uniform pick among the `nearest` such candidates closest to the anchor.
TripletBatchPlan select_triplets(std::span<const float> emb, std::size_t dim,
                                 std::span<const int> labels, double alpha, std::uint64_t seed,
                                 const SelectOptions& opt = {});

// Fraction of positive pairs (anchor, candidate of the same label) whose
// margin inequality holds against every candidate of another label.  nullopt
// without positive pairs.
std::optional<double> validation_accuracy(std::span<const float> emb, std::size_t dim,
                                          std::span<const int> labels, double alpha,
                                          std::span<const std::uint32_t> candidates);

// Infer-mode embeddings for every row of a batch.
std::vector<float> embed_batch(net::Model<float>& model, const net::InputBatch& batch,
                               net::EmbedStats* stats = nullptr);

struct TrainConfig {
  net::BranchConfig branch;
  double alpha = 0.1;
  double lr = 0.05;
  double lr_decay = 0.5;
  std::size_t batch_size = 1000;
  int max_epochs = 10;
  int max_selections = 50;
  double min_improvement = 1e-4;
  int loss_patience = 1;
  int accuracy_patience = 1;
  SelectOptions select;
  std::uint64_t seed = 0;
};

struct TrainRecord {
  int epoch = 0;
  int selection = 0;
  double loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
  double lr = 0.0;
  std::size_t triplets = 0;
  std::size_t skipped_steps = 0;
};

using RecordCallback = std::function<void(const TrainRecord&)>;

struct TrainLog {
  std::vector<TrainRecord> records;
  int best_record = -1;
  double best_accuracy = 0.0;
  std::string stop_reason;
  double wall_seconds = 0.0;
};

struct TrainResult {
  net::Model<float> model;
  TrainLog log;
};

// Alternates triplet selection with up to max_epochs epochs on the selected
// plan; returns the parameters with the highest validation accuracy.
TrainResult train(const net::InputBatch& train_set, std::span<const int> train_labels,
                  const net::InputBatch& val_set, std::span<const int> val_labels,
                  const TrainConfig& cfg, const RecordCallback& on_record = {});

// One JSON object per epoch record.
void write_train_log(const std::filesystem::path& path, const TrainLog& log);
std::vector<TrainRecord> read_train_log(const std::filesystem::path& path);

}  // namespace sixmap::trainer
