#include "sixmap/roles.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

#include <Eigen/Eigenvalues>
#include <fmt/format.h>

#include "sixmap/textio.hpp"

namespace sixmap::roles {
namespace {

// Precomputed inverse and normaliser for fast per-frame costs.
struct RoleDensity {
  Vec2 mean;
  double i00 = 1, i01 = 0, i11 = 1;
  double log_norm = 0.0;

  explicit RoleDensity(const Gaussian2& g) : mean(g.mean) {
    const double det = g.cov.determinant();
    i00 = g.cov(1, 1) / det;
    i11 = g.cov(0, 0) / det;
    i01 = -g.cov(0, 1) / det;
    log_norm = -std::log(2.0 * std::numbers::pi) - 0.5 * std::log(det);
  }

  double operator()(Vec2 p) const {
    const double dx = p.x - mean.x, dy = p.y - mean.y;
    return log_norm - 0.5 * (i00 * dx * dx + 2.0 * i01 * dx * dy + i11 * dy * dy);
  }
};

double assignment_log_likelihood(const std::vector<std::vector<Vec2>>& frames,
                                 const std::vector<std::vector<int>>& assign,
                                 const std::vector<RoleDensity>& dens) {
  double ll = 0.0;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    for (std::size_t p = 0; p < frames[f].size(); ++p) ll += dens[assign[f][p]](frames[f][p]);
  }
  return ll;
}

}  // namespace

double Gaussian2::log_density(Vec2 p) const { return RoleDensity(*this)(p); }

Gaussian2 fit_gaussian2(std::span<const Vec2> points, double floor) {
  Gaussian2 g;
  if (points.empty()) {
    g.cov = floor * Eigen::Matrix2d::Identity();
    return g;
  }
  Vec2 sum;
  for (auto p : points) sum = sum + p;
  g.mean = (1.0 / static_cast<double>(points.size())) * sum;
  Eigen::Matrix2d c = Eigen::Matrix2d::Zero();
  for (auto p : points) {
    const Eigen::Vector2d d(p.x - g.mean.x, p.y - g.mean.y);
    c += d * d.transpose();
  }
  c /= static_cast<double>(points.size());
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(c);
  Eigen::Vector2d ev = es.eigenvalues().cwiseMax(floor);
  g.cov = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  return g;
}

RoleFit fit_roles_frames(const std::vector<std::vector<Vec2>>& frames,
                         const RoleFitOptions& opt) {
  require(!frames.empty(), "fit_roles: no frames");
  const std::size_t k = frames.front().size();
  for (const auto& fr : frames) require(fr.size() == k, "fit_roles: ragged frames");
  const std::size_t nf = frames.size();

  RoleFit fit;
  fit.model.roles.resize(k);
  std::vector<std::vector<Vec2>> by_role(k);
  for (std::size_t p = 0; p < k; ++p) {
    by_role[p].reserve(nf);
    for (const auto& fr : frames) by_role[p].push_back(fr[p]);
    fit.model.roles[p] = fit_gaussian2(by_role[p], opt.cov_floor);
  }
  std::vector<int> identity(k);
  for (std::size_t p = 0; p < k; ++p) identity[p] = static_cast<int>(p);
  fit.frame_roles.assign(nf, identity);

  Eigen::MatrixXd cost(k, k);
  for (int it = 0; it < opt.max_iter; ++it) {
    std::vector<RoleDensity> dens;
    for (const auto& g : fit.model.roles) dens.emplace_back(g);

    std::size_t changed = 0;
    for (std::size_t f = 0; f < nf; ++f) {
      for (std::size_t p = 0; p < k; ++p) {
        for (std::size_t r = 0; r < k; ++r) cost(p, r) = -dens[r](frames[f][p]);
      }
      auto a = hungarian(cost);
      for (std::size_t p = 0; p < k; ++p) {
        if (fit.frame_roles[f][p] != a.col_of_row[p]) ++changed;
      }
      fit.frame_roles[f] = std::move(a.col_of_row);
    }
    fit.log_likelihood.push_back(assignment_log_likelihood(frames, fit.frame_roles, dens));

    for (auto& v : by_role) v.clear();
    for (std::size_t f = 0; f < nf; ++f) {
      for (std::size_t p = 0; p < k; ++p) by_role[fit.frame_roles[f][p]].push_back(frames[f][p]);
    }
    for (std::size_t r = 0; r < k; ++r) fit.model.roles[r] = fit_gaussian2(by_role[r], opt.cov_floor);
    dens.clear();
    for (const auto& g : fit.model.roles) dens.emplace_back(g);
    fit.log_likelihood.push_back(assignment_log_likelihood(frames, fit.frame_roles, dens));

    fit.iterations = it + 1;
    fit.last_change_fraction = static_cast<double>(changed) / static_cast<double>(nf * k);
    if (fit.last_change_fraction < opt.change_tol) break;
  }

  fit.modal.resize(k);
  std::vector<int> col(nf);
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t f = 0; f < nf; ++f) col[f] = fit.frame_roles[f][p];
    fit.modal[p] = modal_role(col);
  }
  return fit;
}

std::optional<PhaseRoles> fit_roles(const ingest::TrackedPhase& phase, const std::string& team,
                                    const RoleFitOptions& opt) {
  const double span = phase.t1 - phase.t0;
  const auto expected = static_cast<std::size_t>(std::llround(span / opt.dt));
  std::vector<const ingest::PlayerSeries*> players;
  for (const auto& p : phase.players) {
    if (p.team == team && static_cast<double>(p.size()) >= opt.min_coverage * static_cast<double>(expected)) {
      players.push_back(&p);
    }
  }
  if (players.size() < opt.min_players) return std::nullopt;

  // Frame index -> per-player position; keep frames where everyone is present.
  const std::size_t np = players.size();
  std::map<long long, std::vector<Vec2>> table;
  std::map<long long, std::size_t> seen;
  for (std::size_t p = 0; p < np; ++p) {
    const auto& s = *players[p];
    for (std::size_t i = 0; i < s.size(); ++i) {
      const long long key = std::llround(s.t[i] / opt.dt);
      auto& row = table[key];
      if (row.empty()) row.resize(np, Vec2{std::nan(""), std::nan("")});
      if (std::isnan(row[p].x)) ++seen[key];
      row[p] = s.pos[i];
    }
  }
  std::vector<std::vector<Vec2>> frames;
  frames.reserve(table.size());
  for (auto& [key, row] : table) {
    if (seen[key] != np) continue;
    if (opt.centroid_relative) {
      Vec2 c;
      for (auto q : row) c = c + q;
      c = (1.0 / static_cast<double>(np)) * c;
      for (auto& q : row) q = q - c;
    }
    frames.push_back(std::move(row));
  }
  if (frames.empty()) return std::nullopt;

  PhaseRoles out;
  for (auto* p : players) out.player_ids.push_back(p->player_id);
  out.fit = fit_roles_frames(frames, opt);
  out.duration = span;
  return out;
}

int modal_role(std::span<const int> roles) {
  require(!roles.empty(), "modal_role: empty sequence");
  std::map<int, std::size_t> counts;
  for (int r : roles) ++counts[r];
  int best = counts.begin()->first;
  std::size_t best_n = 0;
  for (const auto& [r, n] : counts) {
    if (n > best_n) {
      best = r;
      best_n = n;
    }
  }
  return best;
}

std::string make_entity_id(const std::string& player_id, int cluster) {
  return fmt::format("{}#{}", player_id, cluster);
}

std::vector<PlayerRoleEntity> label_entities(std::vector<PlayerPhaseEntity>& entities,
                                             const ClusterOptions& opt) {
  std::map<std::string, std::vector<std::size_t>> by_player;
  for (std::size_t i = 0; i < entities.size(); ++i) by_player[entities[i].player_id].push_back(i);

  std::vector<PlayerRoleEntity> out;
  for (const auto& [player, idx] : by_player) {
    std::vector<Vec2> means;
    for (auto i : idx) means.push_back(entities[i].role_mean);
    const auto cl = cluster_player(means, opt);
    const std::size_t first = out.size();
    for (int c = 0; c < cl.k; ++c) out.push_back({make_entity_id(player, c), player, c, {}});
    for (std::size_t j = 0; j < idx.size(); ++j) {
      auto& e = entities[idx[j]];
      auto& pre = out[first + static_cast<std::size_t>(cl.labels[j])];
      e.entity_id = pre.entity_id;
      pre.phases.push_back(e.phase_id);
    }
  }
  return out;
}

void write_labels(const std::filesystem::path& path,
                  const std::vector<PlayerPhaseEntity>& entities) {
  textio::AtomicWriter w(path);
  w.stream() << "player_id,phase_id,role,mean_x,mean_y,entity_id\n";
  for (const auto& e : entities) {
    w.stream() << fmt::format("{},{},{},{},{},{}\n", e.player_id, e.phase_id, e.role,
                              textio::format_fixed(e.role_mean.x, 4),
                              textio::format_fixed(e.role_mean.y, 4), e.entity_id);
  }
  w.commit();
}

std::vector<PlayerPhaseEntity> read_labels(const std::filesystem::path& path) {
  textio::DelimitedReader r(path);
  const auto cp = r.require_column("player_id"), cph = r.require_column("phase_id");
  const auto cr = r.require_column("role"), cx = r.require_column("mean_x");
  const auto cy = r.require_column("mean_y"), ce = r.require_column("entity_id");
  std::vector<PlayerPhaseEntity> out;
  std::vector<std::string_view> f;
  while (r.next(f)) {
    const auto ctx = r.where();
    PlayerPhaseEntity e;
    e.player_id = std::string(f[cp]);
    e.phase_id = std::string(f[cph]);
    e.role = static_cast<int>(textio::parse_int(f[cr], ctx));
    e.role_mean = {textio::parse_double(f[cx], ctx), textio::parse_double(f[cy], ctx)};
    e.entity_id = std::string(f[ce]);
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace sixmap::roles
