#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "sixmap/clustering.hpp"
#include "sixmap/common.hpp"
#include "sixmap/hungarian.hpp"
#include "sixmap/ingest.hpp"

namespace sixmap::roles {

struct Gaussian2 {
  Vec2 mean;
  Eigen::Matrix2d cov = Eigen::Matrix2d::Identity();

  double log_density(Vec2 p) const;
};

// Sample mean and covariance with eigenvalues clipped from below at `floor`
// (the maximum-likelihood fit under that constraint).
Gaussian2 fit_gaussian2(std::span<const Vec2> points, double floor);

struct RoleModel {
  std::vector<Gaussian2> roles;
};

struct RoleFitOptions {
  int max_iter = 50;
  // Stop once fewer than this fraction of frame assignments change.
  double change_tol = 0.005;
  double cov_floor = 1.0;
  // Fit relative to the per-frame team centroid instead of absolute pitch
  // coordinates.
  bool centroid_relative = false;
  std::size_t min_players = 8;
  // A player counts as measured for the phase above this coverage.
  double min_coverage = 0.9;
  double dt = 0.1;
};

// frames[f][p]: position of player p at frame f.
struct RoleFit {
  RoleModel model;
  std::vector<std::vector<int>> frame_roles;  // [frame][player]
  std::vector<int> modal;                     // per player
  // Log-likelihood after each E step and each M step, interleaved.
  std::vector<double> log_likelihood;
  int iterations = 0;
  double last_change_fraction = 0.0;
};

// Frame-wise role assignment by alternating Hungarian matching of players to
// role Gaussians (E) and refitting the Gaussians (M).  Role k is initialised
// from player k's own positions.
RoleFit fit_roles_frames(const std::vector<std::vector<Vec2>>& frames,
                         const RoleFitOptions& opt = {});

struct PhaseRoles {
  std::vector<std::string> player_ids;
  RoleFit fit;
  double duration = 0.0;
};

// Builds frames for one team of a phase and fits roles.  Returns nullopt when
// fewer than `min_players` players are measured for the whole phase.
std::optional<PhaseRoles> fit_roles(const ingest::TrackedPhase& phase, const std::string& team,
                                    const RoleFitOptions& opt = {});

// Most frequent value; ties go to the smallest.
int modal_role(std::span<const int> roles);

struct PlayerPhaseEntity {
  std::string player_id;
  std::string phase_id;
  int role = 0;
  Vec2 role_mean;
  double duration = 0.0;
  std::string entity_id;
};

struct PlayerRoleEntity {
  std::string entity_id;
  std::string player_id;
  int cluster = 0;
  std::vector<std::string> phases;
};

std::string make_entity_id(const std::string& player_id, int cluster);

// Clusters each player's role means and assigns entity ids in place.
std::vector<PlayerRoleEntity> label_entities(std::vector<PlayerPhaseEntity>& entities,
                                             const ClusterOptions& opt = {});

// Label file columns: player_id, phase_id, role, mean_x, mean_y, entity_id.
void write_labels(const std::filesystem::path& path,
                  const std::vector<PlayerPhaseEntity>& entities);
std::vector<PlayerPhaseEntity> read_labels(const std::filesystem::path& path);

}  // namespace sixmap::roles
