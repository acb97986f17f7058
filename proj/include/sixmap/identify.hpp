#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace sixmap::identify {

struct GaussianModel {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  // Lower Cholesky factor of cov.
  Eigen::MatrixXd chol;
  double log_norm = 0.0;

  double log_density(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  // One value per row of X.
  Eigen::VectorXd log_density_rows(const Eigen::Ref<const Eigen::MatrixXd>& X) const;
};

// Sample mean and (biased) covariance of the rows of X plus ridge * I.  With
// `diagonal`, off-diagonal covariance terms are dropped.
GaussianModel fit_gaussian(const Eigen::Ref<const Eigen::MatrixXd>& X, double ridge = 1e-3,
                           bool diagonal = false);

// Mean of the m largest values.
double atl_sim(std::span<const double> log_densities, std::size_t m);
double atl_sim(const GaussianModel& model, const Eigen::Ref<const Eigen::MatrixXd>& test, std::size_t m);

enum class LpAggregation { kCentroid, kPairwise };

// Negative mean L^p distance from each test row to the centroid of the
// training rows (or, pairwise, to every training row).
double lp_similarity(const Eigen::Ref<const Eigen::MatrixXd>& train,
                     const Eigen::Ref<const Eigen::MatrixXd>& test, int p,
                     LpAggregation agg = LpAggregation::kCentroid);

enum class Similarity { kL1, kL2, kAtl };

struct Condition {
  std::string name;
  int phases = 10;
  Similarity kind = Similarity::kAtl;
  // Share of the probe vectors averaged by ATL-sim; fixed_m > 0 overrides it.
  double fraction = 1.0;
  std::size_t fixed_m = 0;
};

// p10-L1, p10-L2, p10-AL, p10-ATL75, p10-ATL50, p6-ATL25, p8-ATL25,
// p10-ATL25, p10-ML.
std::vector<Condition> default_conditions();
// Parses names of the form p<n>-{L1,L2,AL,ML,ATL<percent>}.
Condition parse_condition(const std::string& name);

// round(fraction * M) clamped to [1, M].
std::size_t top_m(const Condition& c, std::size_t M);

struct EntityVectors {
  std::string entity_id;
  Eigen::MatrixXd vectors;  // one embedding per row
  // Phase ids summed into each row.
  std::vector<std::vector<std::string>> sources;
};

// Which side is ranked.  kGallery: each anonymized gallery entity ranks the
// probe entities.  kProbe: each probe ranks the gallery entities.
enum class RankBy { kGallery, kProbe };

struct IdentifyOptions {
  double ridge = 1e-3;
  bool diagonal = false;
  LpAggregation lp = LpAggregation::kCentroid;
  RankBy rank_by = RankBy::kGallery;
  std::uint64_t seed = 0;
};

struct Gallery {
  std::vector<std::string> ids;
  std::vector<GaussianModel> models;
  std::vector<Eigen::MatrixXd> train;
  // Entities with fewer than two training vectors.
  std::vector<std::string> excluded;
};

Gallery build_gallery(const std::vector<EntityVectors>& train, const IdentifyOptions& opt = {});

struct Ranking {
  std::string query;
  std::vector<std::string> candidates;  // best first
  std::vector<double> scores;
  std::size_t true_rank = 0;            // 1-based
};

struct SimilarityReport {
  Condition condition;
  std::vector<Ranking> rankings;
  std::array<double, 4> top_k{};  // k = 1, 3, 5, 10
  double mrr = 0.0;
  std::size_t entities = 0;
  // Probes with fewer than `phases` test phases.
  std::size_t short_probes = 0;
};

constexpr std::array<std::size_t, 4> kTopK = {1, 3, 5, 10};

double top_k_accuracy(std::span<const std::size_t> ranks, std::size_t k);
double mean_reciprocal_rank(std::span<const std::size_t> ranks);

// Ranks by descending score, ties by ascending id.  Returns the order.
std::vector<std::size_t> rank_order(std::span<const double> scores, std::span<const std::string> ids);

// Evaluates one condition over the entities present in both the gallery and
// the probe set.  Probes for p<n> with n below the available phase count use
// a seeded choice of n phases and keep the vectors built only from them.
SimilarityReport identify(const Gallery& gallery, const std::vector<EntityVectors>& probes,
                          const Condition& condition, const IdentifyOptions& opt = {});

// Summary per condition as JSON, per-query rankings as TSV, and the
// human-readable table.
void write_results(const std::filesystem::path& path, const std::vector<SimilarityReport>& reports,
                   const IdentifyOptions& opt);
std::vector<SimilarityReport> read_results(const std::filesystem::path& path);
void write_rankings(const std::filesystem::path& path, const std::vector<SimilarityReport>& reports);
std::string render_table(const std::vector<SimilarityReport>& reports);

}  // namespace sixmap::identify
