#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sixmap/heatmap.hpp"

namespace sixmap::net {

// kCalibrate normalises with batch statistics, disables dropout and
// accumulates population statistics for the running estimates.
enum class Mode { kTrain, kInfer, kCalibrate };

struct Shape3 {
  int c = 1, h = 1, w = 1;
  std::size_t size() const { return static_cast<std::size_t>(c) * h * w; }
  friend bool operator==(const Shape3&, const Shape3&) = default;
};

template <typename T>
struct Param {
  std::string name;
  std::vector<int> shape;
  std::vector<T> value;
  std::vector<T> grad;
  // Batch-norm running statistics are state, not optimised parameters.
  bool trainable = true;
};

// Channel widths of one branch.  Spatial shapes are fixed by the 35 x 50
// input; the defaults give the full-size network.
struct BranchConfig {
  int c1 = 4;
  int c2 = 16;
  int c3 = 32;
  int c4 = 64;
  int fc1 = 128;
  int out = 10;
  double dropout = 0.25;
  // Weight of the current batch in the running statistics.
  double bn_momentum = 0.1;
  double bn_eps = 1e-3;
};

struct LayerTrace {
  std::string name;
  Shape3 output;
};

template <typename T>
class Layer;

// One branch CNN: four conv blocks (conv, batch norm, ReLU), max pooling and
// dropout between blocks, then FC1 (batch norm, ReLU) and a linear FC2.
template <typename T>
class Branch {
 public:
  Branch(std::string name, const BranchConfig& cfg, std::uint64_t seed);
  ~Branch();
  Branch(Branch&&) noexcept;
  Branch& operator=(Branch&&) noexcept;

  // input: n grids of 35 x 50, row-major.  out: n x cfg.out.  Train mode
  // uses batch statistics and dropout and caches activations for backward().
  void forward(std::span<const T> input, std::size_t n, Mode mode, std::uint64_t dropout_seed,
               std::vector<T>& out);

  // Accumulates parameter gradients for the last train-mode forward pass.
  void backward(std::span<const T> dout);

  std::vector<Param<T>*> params();
  void zero_grad();
  // Drops cached activations.
  void release();

  // Replaces the batch-norm running statistics with population statistics of
  // `input`, streamed in fixed-size chunks.
  void calibrate(std::span<const T> input, std::size_t n);

  // Output shape after each table row (conv blocks, pools, FC layers).
  std::vector<LayerTrace> shape_trace() const;

  const BranchConfig& config() const { return cfg_; }
  const std::string& name() const { return name_; }

 private:
  std::string name_;
  BranchConfig cfg_;
  std::vector<std::unique_ptr<Layer<T>>> layers_;
  std::vector<std::vector<T>> acts_;
  std::size_t batch_ = 0;
};

struct Triplet {
  std::uint32_t anchor = 0;
  std::uint32_t positive = 0;
  std::uint32_t negative = 0;
  friend bool operator==(const Triplet&, const Triplet&) = default;
};

// [||a - p||^2 - ||a - n||^2 + alpha]_+ for one triplet.
template <typename T>
T triplet_loss(std::span<const T> a, std::span<const T> p, std::span<const T> n, T alpha);

// Summed hinge over triplets of rows of `emb` (rows of length dim).  When
// grad is non-null it receives dLoss/d emb (same layout, overwritten).
template <typename T>
T batch_triplet_loss(std::span<const T> emb, std::size_t dim, std::span<const Triplet> triplets,
                     T alpha, std::vector<T>* grad);

struct ModelConfig {
  BranchConfig branch;
  double alpha = 0.1;
};

struct EmbedStats {
  std::size_t zero_vectors = 0;
};

// Two branches whose outputs are concatenated and scaled to unit norm.  The
// anchor, positive and negative subnetworks are the same object.
template <typename T>
class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed);

  std::size_t embedding_dim() const { return 2 * static_cast<std::size_t>(cfg_.branch.out); }
  const ModelConfig& config() const { return cfg_; }

  // loc, dir: n normalized grids each.  Returns n x embedding_dim().
  std::vector<T> embed(std::span<const T> loc, std::span<const T> dir, std::size_t n, Mode mode,
                       std::uint64_t dropout_seed = 0, EmbedStats* stats = nullptr);

  // Train-mode forward over n distinct inputs, summed triplet loss over
  // `triplets` (indices into the inputs), and gradients for every parameter.
  T loss_and_gradient(std::span<const T> loc, std::span<const T> dir, std::size_t n,
                      std::span<const Triplet> triplets, T alpha, std::uint64_t dropout_seed);

  // Train-mode loss only (no gradients), with the same dropout masks as
  // loss_and_gradient for the same seed.
  T train_loss(std::span<const T> loc, std::span<const T> dir, std::size_t n,
               std::span<const Triplet> triplets, T alpha, std::uint64_t dropout_seed);

  std::vector<Param<T>*> params();
  void zero_grad();
  void calibrate(std::span<const T> loc, std::span<const T> dir, std::size_t n);

  Branch<T>& location() { return loc_; }
  Branch<T>& direction() { return dir_; }

 private:
  ModelConfig cfg_;
  Branch<T> loc_;
  Branch<T> dir_;
  std::vector<T> z_;
  std::vector<T> norm_;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

enum class StepResult { kApplied, kSkippedZeroGradient, kSkippedNonFinite };

// Adam with bias correction over the trainable parameters.  A step whose
// gradient is entirely zero leaves parameters and moments untouched; a step
// with any non-finite gradient entry is skipped.
template <typename T>
class Adam {
 public:
  Adam(std::vector<Param<T>*> params, AdamConfig cfg = {});

  StepResult step(double lr);
  long long steps() const { return t_; }

 private:
  std::vector<Param<T>*> params_;
  AdamConfig cfg_;
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
  long long t_ = 0;
};

// Copies all parameter values (and running statistics) between models of the
// same configuration.
template <typename Dst, typename Src>
void copy_params(Model<Dst>& dst, Model<Src>& src);

// n x 1750 normalized location and direction inputs for a list of pairs.
struct InputBatch {
  std::vector<float> loc;
  std::vector<float> dir;
  std::size_t n = 0;
};

InputBatch make_inputs(std::span<const heatmap::HeatmapPair> pairs);
InputBatch gather(const InputBatch& all, std::span<const std::uint32_t> rows);

}  // namespace sixmap::net
