#include "sixmap/identify.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numbers>
#include <set>

#include <Eigen/Cholesky>
#include <fmt/format.h>

#include "json.hpp"
#include "sixmap/common.hpp"
#include "sixmap/parallel.hpp"
#include "sixmap/random.hpp"
#include "sixmap/textio.hpp"

namespace sixmap::identify {

double GaussianModel::log_density(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  const Eigen::VectorXd z = chol.triangularView<Eigen::Lower>().solve(x - mean);
  return log_norm - 0.5 * z.squaredNorm();
}

Eigen::VectorXd GaussianModel::log_density_rows(const Eigen::Ref<const Eigen::MatrixXd>& X) const {
  Eigen::MatrixXd d = (X.rowwise() - mean.transpose()).transpose();
  chol.triangularView<Eigen::Lower>().solveInPlace(d);
  return (log_norm - 0.5 * d.colwise().squaredNorm().array()).matrix().transpose();
}

GaussianModel fit_gaussian(const Eigen::Ref<const Eigen::MatrixXd>& X, double ridge, bool diagonal) {
  require(X.rows() >= 2, "fit_gaussian: need at least two vectors", ErrorCode::kValidation);
  require(ridge > 0.0, "fit_gaussian: ridge must be positive");
  GaussianModel g;
  const auto n = static_cast<double>(X.rows());
  g.mean = X.colwise().mean().transpose();
  const Eigen::MatrixXd c = X.rowwise() - g.mean.transpose();
  g.cov = (c.transpose() * c) / n;
  if (diagonal) g.cov = Eigen::MatrixXd(g.cov.diagonal().asDiagonal());
  g.cov.diagonal().array() += ridge;
  Eigen::LLT<Eigen::MatrixXd> llt(g.cov);
  require(llt.info() == Eigen::Success, "fit_gaussian: covariance not positive definite", ErrorCode::kNumerical);
  g.chol = llt.matrixL();
  const double logdet = 2.0 * g.chol.diagonal().array().log().sum();
  g.log_norm = -0.5 * (static_cast<double>(g.mean.size()) * std::log(2.0 * std::numbers::pi) + logdet);
  return g;
}

double atl_sim(std::span<const double> log_densities, std::size_t m) {
  require(m >= 1 && m <= log_densities.size(),
          fmt::format("atl_sim: m = {} outside [1, {}]", m, log_densities.size()));
  std::vector<double> v(log_densities.begin(), log_densities.end());
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(m - 1), v.end(), std::greater<>());
  std::sort(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(m), std::greater<>());
  double s = 0.0;
  for (std::size_t i = 0; i < m; ++i) s += v[i];
  return s / static_cast<double>(m);
}

double atl_sim(const GaussianModel& model, const Eigen::Ref<const Eigen::MatrixXd>& test, std::size_t m) {
  const Eigen::VectorXd ld = model.log_density_rows(test);
  return atl_sim(std::span<const double>(ld.data(), static_cast<std::size_t>(ld.size())), m);
}

double lp_similarity(const Eigen::Ref<const Eigen::MatrixXd>& train,
                     const Eigen::Ref<const Eigen::MatrixXd>& test, int p, LpAggregation agg) {
  require(train.rows() > 0 && test.rows() > 0, "lp_similarity: empty vector set");
  require(p == 1 || p == 2, "lp_similarity: p must be 1 or 2");
  auto dist = [p](const Eigen::VectorXd& d) { return p == 1 ? d.lpNorm<1>() : d.norm(); };
  double s = 0.0;
  if (agg == LpAggregation::kCentroid) {
    const Eigen::VectorXd c = train.colwise().mean().transpose();
    for (Eigen::Index i = 0; i < test.rows(); ++i) s += dist(test.row(i).transpose() - c);
    return -s / static_cast<double>(test.rows());
  }
  for (Eigen::Index i = 0; i < test.rows(); ++i) {
    for (Eigen::Index j = 0; j < train.rows(); ++j) s += dist((test.row(i) - train.row(j)).transpose());
  }
  return -s / static_cast<double>(test.rows() * train.rows());
}

std::vector<Condition> default_conditions() {
  std::vector<Condition> out;
  for (const char* n : {"p10-L1", "p10-L2", "p10-AL", "p10-ATL75", "p10-ATL50", "p6-ATL25",
                        "p8-ATL25", "p10-ATL25", "p10-ML"}) {
    out.push_back(parse_condition(n));
  }
  return out;
}

Condition parse_condition(const std::string& name) {
  const auto dash = name.find('-');
  auto bad = [&] { fail(ErrorCode::kInvalidArgument, "unknown condition '" + name + "'"); };
  if (name.size() < 4 || name[0] != 'p' || dash == std::string::npos) bad();
  Condition c;
  c.name = name;
  try {
    c.phases = static_cast<int>(textio::parse_int(std::string_view(name).substr(1, dash - 1), "condition"));
  } catch (const Error&) {
    bad();
  }
  if (c.phases < 3) bad();
  const std::string kind = name.substr(dash + 1);
  if (kind == "L1") {
    c.kind = Similarity::kL1;
  } else if (kind == "L2") {
    c.kind = Similarity::kL2;
  } else if (kind == "AL") {
    c.fraction = 1.0;
  } else if (kind == "ML") {
    c.fixed_m = 1;
  } else if (kind.rfind("ATL", 0) == 0 && kind.size() > 3) {
    std::int64_t pct = 0;
    try {
      pct = textio::parse_int(std::string_view(kind).substr(3), "condition");
    } catch (const Error&) {
      bad();
    }
    if (pct < 1 || pct > 100) bad();
    c.fraction = static_cast<double>(pct) / 100.0;
  } else {
    bad();
  }
  return c;
}

std::size_t top_m(const Condition& c, std::size_t M) {
  require(M > 0, "top_m: no probe vectors");
  if (c.fixed_m > 0) return std::min(c.fixed_m, M);
  const auto m = static_cast<std::size_t>(std::llround(c.fraction * static_cast<double>(M)));
  return std::clamp<std::size_t>(m, 1, M);
}

Gallery build_gallery(const std::vector<EntityVectors>& train, const IdentifyOptions& opt) {
  Gallery g;
  std::vector<const EntityVectors*> ok;
  for (const auto& e : train) {
    if (e.vectors.rows() < 2) {
      g.excluded.push_back(e.entity_id);
    } else {
      ok.push_back(&e);
    }
  }
  std::sort(ok.begin(), ok.end(), [](auto* a, auto* b) { return a->entity_id < b->entity_id; });
  g.models.resize(ok.size());
  parallel_for(ok.size(), [&](std::size_t i) { g.models[i] = fit_gaussian(ok[i]->vectors, opt.ridge, opt.diagonal); });
  for (auto* e : ok) {
    g.ids.push_back(e->entity_id);
    g.train.push_back(e->vectors);
  }
  return g;
}

double top_k_accuracy(std::span<const std::size_t> ranks, std::size_t k) {
  if (ranks.empty()) return 0.0;
  const auto hit = std::count_if(ranks.begin(), ranks.end(), [k](std::size_t r) { return r >= 1 && r <= k; });
  return static_cast<double>(hit) / static_cast<double>(ranks.size());
}

double mean_reciprocal_rank(std::span<const std::size_t> ranks) {
  if (ranks.empty()) return 0.0;
  double s = 0.0;
  for (auto r : ranks) {
    require(r >= 1, "mean_reciprocal_rank: ranks are 1-based");
    s += 1.0 / static_cast<double>(r);
  }
  return s / static_cast<double>(ranks.size());
}

std::vector<std::size_t> rank_order(std::span<const double> scores, std::span<const std::string> ids) {
  require(scores.size() == ids.size(), "rank_order: size mismatch");
  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return ids[a] < ids[b];
  });
  return order;
}

namespace {

// Rows of a probe built only from a seeded choice of n of its phases.
Eigen::MatrixXd probe_rows(const EntityVectors& e, int n, std::uint64_t seed, bool* short_probe) {
  std::set<std::string> phases;
  for (const auto& s : e.sources) phases.insert(s.begin(), s.end());
  *short_probe = phases.size() < static_cast<std::size_t>(n);
  if (phases.size() <= static_cast<std::size_t>(n)) return e.vectors;
  require(e.sources.size() == static_cast<std::size_t>(e.vectors.rows()),
          "identify: probe sources do not match its vectors");
  std::vector<std::string> all(phases.begin(), phases.end());
  Rng rng(derive_seed(seed, fmt::format("probe-phases-{}", n), e.entity_id));
  std::set<std::string> keep;
  for (auto i : sample_without_replacement(rng, all.size(), static_cast<std::size_t>(n))) keep.insert(all[i]);
  std::vector<Eigen::Index> rows;
  for (std::size_t r = 0; r < e.sources.size(); ++r) {
    if (std::all_of(e.sources[r].begin(), e.sources[r].end(), [&](const auto& p) { return keep.count(p) > 0; })) {
      rows.push_back(static_cast<Eigen::Index>(r));
    }
  }
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), e.vectors.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = e.vectors.row(rows[i]);
  return out;
}

}  // namespace

SimilarityReport identify(const Gallery& gallery, const std::vector<EntityVectors>& probes,
                          const Condition& condition, const IdentifyOptions& opt) {
  SimilarityReport rep;
  rep.condition = condition;
  std::map<std::string, const EntityVectors*> probe_by_id;
  for (const auto& p : probes) probe_by_id[p.entity_id] = &p;

  // The evaluated set: entities present on both sides, sorted by id.
  std::vector<std::string> ids;
  std::vector<std::size_t> gidx;
  for (std::size_t i = 0; i < gallery.ids.size(); ++i) {
    if (probe_by_id.count(gallery.ids[i])) {
      ids.push_back(gallery.ids[i]);
      gidx.push_back(i);
    }
  }
  const std::size_t n = ids.size();
  rep.entities = n;
  if (n == 0) return rep;

  std::vector<Eigen::MatrixXd> test(n);
  for (std::size_t b = 0; b < n; ++b) {
    bool is_short = false;
    test[b] = probe_rows(*probe_by_id.at(ids[b]), condition.phases, opt.seed, &is_short);
    require(test[b].rows() > 0, "identify: probe " + ids[b] + " has no vectors", ErrorCode::kValidation);
    rep.short_probes += is_short ? 1 : 0;
  }

  // score[a][b] = sim(gallery a, probe b)
  std::vector<std::vector<double>> score(n, std::vector<double>(n));
  parallel_for(n, [&](std::size_t a) {
    const std::size_t g = gidx[a];
    for (std::size_t b = 0; b < n; ++b) {
      switch (condition.kind) {
        case Similarity::kL1:
          score[a][b] = lp_similarity(gallery.train[g], test[b], 1, opt.lp);
          break;
        case Similarity::kL2:
          score[a][b] = lp_similarity(gallery.train[g], test[b], 2, opt.lp);
          break;
        case Similarity::kAtl:
          score[a][b] = atl_sim(gallery.models[g], test[b], top_m(condition, static_cast<std::size_t>(test[b].rows())));
          break;
      }
    }
  });

  std::vector<std::size_t> ranks;
  std::vector<double> row(n);
  for (std::size_t q = 0; q < n; ++q) {
    for (std::size_t c = 0; c < n; ++c) row[c] = opt.rank_by == RankBy::kGallery ? score[q][c] : score[c][q];
    const auto order = rank_order(row, ids);
    Ranking r;
    r.query = ids[q];
    for (std::size_t k = 0; k < n; ++k) {
      r.candidates.push_back(ids[order[k]]);
      r.scores.push_back(row[order[k]]);
      if (order[k] == q) r.true_rank = k + 1;
    }
    ranks.push_back(r.true_rank);
    rep.rankings.push_back(std::move(r));
  }
  for (std::size_t i = 0; i < kTopK.size(); ++i) rep.top_k[i] = top_k_accuracy(ranks, kTopK[i]);
  rep.mrr = mean_reciprocal_rank(ranks);
  return rep;
}

void write_results(const std::filesystem::path& path, const std::vector<SimilarityReport>& reports,
                   const IdentifyOptions& opt) {
  nlohmann::ordered_json j;
  j["ranking"] = opt.rank_by == RankBy::kGallery ? "gallery" : "probe";
  j["ridge"] = opt.ridge;
  j["covariance"] = opt.diagonal ? "diagonal" : "full";
  j["lp_aggregation"] = opt.lp == LpAggregation::kCentroid ? "centroid" : "pairwise";
  auto& arr = j["conditions"] = nlohmann::ordered_json::array();
  for (const auto& r : reports) {
    nlohmann::ordered_json c;
    c["condition"] = r.condition.name;
    c["entities"] = r.entities;
    c["short_probes"] = r.short_probes;
    c["top1"] = r.top_k[0];
    c["top3"] = r.top_k[1];
    c["top5"] = r.top_k[2];
    c["top10"] = r.top_k[3];
    c["mrr"] = r.mrr;
    arr.push_back(c);
  }
  textio::write_file_atomic(path, j.dump(2) + "\n");
}

std::vector<SimilarityReport> read_results(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(textio::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kMalformedInput, path.string() + ": " + e.what());
  }
  std::vector<SimilarityReport> out;
  try {
    for (const auto& c : j.at("conditions")) {
      SimilarityReport r;
      r.condition = parse_condition(c.at("condition").get<std::string>());
      r.entities = c.at("entities").get<std::size_t>();
      r.short_probes = c.at("short_probes").get<std::size_t>();
      r.top_k = {c.at("top1").get<double>(), c.at("top3").get<double>(), c.at("top5").get<double>(),
                 c.at("top10").get<double>()};
      r.mrr = c.at("mrr").get<double>();
      out.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kMalformedInput, path.string() + ": " + e.what());
  }
  return out;
}

void write_rankings(const std::filesystem::path& path, const std::vector<SimilarityReport>& reports) {
  textio::AtomicWriter w(path);
  w.stream() << "condition\tquery\ttrue_rank\tranking\n";
  for (const auto& r : reports) {
    for (const auto& q : r.rankings) {
      std::string list;
      for (std::size_t k = 0; k < q.candidates.size(); ++k) {
        if (k) list += ',';
        list += q.candidates[k] + ':' + textio::format_fixed(q.scores[k], 6);
      }
      w.stream() << r.condition.name << '\t' << q.query << '\t' << q.true_rank << '\t' << list << '\n';
    }
  }
  w.commit();
}

std::string render_table(const std::vector<SimilarityReport>& reports) {
  std::string out = fmt::format("{:<12} {:>7} {:>7} {:>7} {:>7} {:>6}\n", "Condition", "Top-1", "Top-3",
                                "Top-5", "Top-10", "MRR");
  for (const auto& r : reports) {
    out += fmt::format("{:<12} {:>6.1f}% {:>6.1f}% {:>6.1f}% {:>6.1f}% {:>6.3f}\n", r.condition.name,
                       100.0 * r.top_k[0], 100.0 * r.top_k[1], 100.0 * r.top_k[2], 100.0 * r.top_k[3], r.mrr);
  }
  return out;
}

}  // namespace sixmap::identify
