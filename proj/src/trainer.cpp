#include "sixmap/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>

#include <fmt/format.h>
#include "json.hpp"

#include "sixmap/common.hpp"
#include "sixmap/parallel.hpp"
#include "sixmap/random.hpp"
#include "sixmap/textio.hpp"

namespace sixmap::trainer {
namespace {

double sqdist(const float* a, const float* b, std::size_t dim) {
  double s = 0.0;
  for (std::size_t i = 0; i < dim; ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += d * d;
  }
  return s;
}

std::map<int, std::vector<std::uint32_t>> group_candidates(std::span<const int> labels,
                                                           std::span<const std::uint32_t> cand) {
  std::map<int, std::vector<std::uint32_t>> by;
  for (auto c : cand) by[labels[c]].push_back(c);
  return by;
}

// Mean hinge over a plan, in infer mode.
double plan_loss(std::span<const float> emb, std::size_t dim, std::span<const net::Triplet> plan,
                 double alpha) {
  if (plan.empty()) return 0.0;
  const double total = net::batch_triplet_loss<float>(emb, dim, plan, static_cast<float>(alpha), nullptr);
  return total / static_cast<double>(plan.size());
}

}  // namespace

std::vector<std::uint32_t> sample_candidates(std::span<const int> labels, std::uint64_t seed,
                                             std::size_t per_identity) {
  std::map<int, std::vector<std::uint32_t>> by;
  for (std::size_t i = 0; i < labels.size(); ++i) by[labels[i]].push_back(static_cast<std::uint32_t>(i));
  std::vector<std::uint32_t> out;
  for (const auto& [label, rows] : by) {
    if (rows.size() <= per_identity) {
      out.insert(out.end(), rows.begin(), rows.end());
      continue;
    }
    Rng rng(derive_seed(seed, "candidates", static_cast<std::uint64_t>(label)));
    for (auto k : sample_without_replacement(rng, rows.size(), per_identity)) out.push_back(rows[k]);
  }
  std::sort(out.begin(), out.end());
  return out;
}

TripletBatchPlan select_triplets(std::span<const float> emb, std::size_t dim,
                                 std::span<const int> labels, double alpha, std::uint64_t seed,
                                 const SelectOptions& opt) {
  const std::size_t n = labels.size();
  require(emb.size() == n * dim, "select_triplets: embedding/label count mismatch");
  TripletBatchPlan plan;
  plan.candidates = sample_candidates(labels, derive_seed(seed, "S"), opt.per_identity);
  const auto by = group_candidates(labels, plan.candidates);

  std::vector<std::vector<net::Triplet>> per_anchor(n);
  std::vector<std::size_t> hard(n, 0), fallback(n, 0);
  std::vector<char> lonely(n, 0);
  parallel_for(n, [&](std::size_t a) {
    const int la = labels[a];
    const float* fa = emb.data() + a * dim;
    std::vector<std::uint32_t> negs;
    for (auto c : plan.candidates) {
      if (labels[c] != la) negs.push_back(c);
    }
    std::vector<double> dn(negs.size());
    for (std::size_t j = 0; j < negs.size(); ++j) dn[j] = sqdist(fa, emb.data() + negs[j] * dim, dim);
    // Nearest negatives, ties by index.
    std::vector<std::size_t> order(negs.size());
    for (std::size_t j = 0; j < order.size(); ++j) order[j] = j;
    const std::size_t keep = std::min(opt.nearest, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(),
                      [&](std::size_t x, std::size_t y) {
                        return dn[x] != dn[y] ? dn[x] < dn[y] : negs[x] < negs[y];
                      });
    Rng rng(derive_seed(seed, "anchor", a));
    bool any = false;
    for (auto p : by.at(la)) {
      if (p == a) continue;
      any = true;
      if (negs.empty()) continue;
      const double dp = sqdist(fa, emb.data() + p * dim, dim);
      std::vector<std::size_t> viol;
      for (std::size_t j = 0; j < negs.size(); ++j) {
        if (!(dp + alpha < dn[j])) viol.push_back(j);
      }
      std::uint32_t neg;
      if (!viol.empty()) {
        neg = negs[viol[uniform_index(rng, viol.size())]];
        ++hard[a];
      } else {
        neg = negs[order[uniform_index(rng, keep)]];
        ++fallback[a];
      }
      per_anchor[a].push_back({static_cast<std::uint32_t>(a), p, neg});
    }
    lonely[a] = any ? 0 : 1;
  });
  for (std::size_t a = 0; a < n; ++a) {
    plan.triplets.insert(plan.triplets.end(), per_anchor[a].begin(), per_anchor[a].end());
    plan.hard += hard[a];
    plan.nearest_fallback += fallback[a];
    plan.anchors_without_positive += static_cast<std::size_t>(lonely[a]);
  }
  return plan;
}

std::optional<double> validation_accuracy(std::span<const float> emb, std::size_t dim,
                                          std::span<const int> labels, double alpha,
                                          std::span<const std::uint32_t> candidates) {
  const std::size_t n = labels.size();
  require(emb.size() == n * dim, "validation_accuracy: embedding/label count mismatch");
  const auto by = group_candidates(labels, candidates);
  std::vector<std::size_t> pairs(n, 0), good(n, 0);
  parallel_for(n, [&](std::size_t a) {
    const float* fa = emb.data() + a * dim;
    double nearest_neg = std::numeric_limits<double>::infinity();
    for (auto c : candidates) {
      if (labels[c] != labels[a]) nearest_neg = std::min(nearest_neg, sqdist(fa, emb.data() + c * dim, dim));
    }
    auto it = by.find(labels[a]);
    if (it == by.end()) return;
    for (auto p : it->second) {
      if (p == a) continue;
      ++pairs[a];
      if (sqdist(fa, emb.data() + p * dim, dim) + alpha < nearest_neg) ++good[a];
    }
  });
  std::size_t tp = 0, tg = 0;
  for (std::size_t a = 0; a < n; ++a) {
    tp += pairs[a];
    tg += good[a];
  }
  if (tp == 0) return std::nullopt;
  return static_cast<double>(tg) / static_cast<double>(tp);
}

std::vector<float> embed_batch(net::Model<float>& model, const net::InputBatch& batch,
                               net::EmbedStats* stats) {
  return model.embed(batch.loc, batch.dir, batch.n, net::Mode::kInfer, 0, stats);
}

TrainResult train(const net::InputBatch& train_set, std::span<const int> train_labels,
                  const net::InputBatch& val_set, std::span<const int> val_labels,
                  const TrainConfig& cfg, const RecordCallback& on_record) {
  require(train_set.n == train_labels.size() && train_set.n > 0, "train: empty or mislabelled training set");
  require(val_set.n == val_labels.size() && val_set.n > 0, "train: empty or mislabelled validation set");
  require(cfg.batch_size > 0 && cfg.max_epochs > 0 && cfg.lr > 0.0, "train: invalid configuration");
  const auto start = std::chrono::steady_clock::now();

  net::ModelConfig mcfg{cfg.branch, cfg.alpha};
  TrainResult out{net::Model<float>(mcfg, derive_seed(cfg.seed, "init")), {}};
  net::Model<float>& model = out.model;
  net::Model<float> best(mcfg, 0);
  net::Adam<float> adam(model.params());
  const std::size_t dim = model.embedding_dim();
  const auto val_cand = sample_candidates(val_labels, derive_seed(cfg.seed, "val-candidates"),
                                          cfg.select.per_identity);
  auto& log = out.log;
  log.best_accuracy = -1.0;

  double lr = cfg.lr;
  double prev_selection_best = -1.0;
  int stale_selections = 0;
  int global_epoch = 0;
  bool diverged = false;
  log.stop_reason = "max_selections";

  model.calibrate(train_set.loc, train_set.dir, train_set.n);
  net::copy_params(best, model);
  for (int sel = 0; sel < cfg.max_selections && !diverged; ++sel) {
    auto plan = select_triplets(embed_batch(model, train_set), dim, train_labels, cfg.alpha,
                                derive_seed(cfg.seed, "select", static_cast<std::uint64_t>(sel)), cfg.select);
    auto val_emb = embed_batch(model, val_set);
    const auto val_plan = select_triplets(val_emb, dim, val_labels, cfg.alpha,
                                          derive_seed(cfg.seed, "val-select", static_cast<std::uint64_t>(sel)),
                                          cfg.select);
    if (plan.triplets.empty()) {
      log.stop_reason = "no_triplets";
      break;
    }
    if (sel > 0) lr *= cfg.lr_decay;

    double best_val_loss = std::numeric_limits<double>::infinity();
    int stale_epochs = 0;
    double selection_best = -1.0;
    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
      std::vector<net::Triplet> order = plan.triplets;
      Rng rng(derive_seed(cfg.seed, "shuffle", static_cast<std::uint64_t>(global_epoch)));
      shuffle(order, rng);

      double total = 0.0;
      std::size_t skipped = 0;
      for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size) {
        const std::size_t b1 = std::min(order.size(), b0 + cfg.batch_size);
        // Each distinct sample enters the batch once, in order of first use.
        std::vector<std::uint32_t> rows;
        std::map<std::uint32_t, std::uint32_t> local;
        auto slot = [&](std::uint32_t r) {
          auto [it, inserted] = local.try_emplace(r, static_cast<std::uint32_t>(rows.size()));
          if (inserted) rows.push_back(r);
          return it->second;
        };
        std::vector<net::Triplet> batch;
        batch.reserve(b1 - b0);
        for (std::size_t i = b0; i < b1; ++i) {
          const auto& t = order[i];
          batch.push_back({slot(t.anchor), slot(t.positive), slot(t.negative)});
        }
        const auto in = net::gather(train_set, rows);
        const std::uint64_t dseed =
            derive_seed(cfg.seed, "dropout", static_cast<std::uint64_t>(global_epoch) * 1000003ULL + b0);
        const float loss = model.loss_and_gradient(in.loc, in.dir, in.n, batch,
                                                   static_cast<float>(cfg.alpha), dseed);
        if (!std::isfinite(loss)) {
          diverged = true;
          break;
        }
        total += static_cast<double>(loss);
        if (adam.step(lr) != net::StepResult::kApplied) ++skipped;
      }
      if (diverged) {
        log.stop_reason = "diverged";
        break;
      }
      model.location().release();
      model.direction().release();
      model.calibrate(train_set.loc, train_set.dir, train_set.n);

      val_emb = embed_batch(model, val_set);
      TrainRecord rec;
      rec.epoch = global_epoch++;
      rec.selection = sel;
      rec.loss = total / static_cast<double>(order.size());
      rec.val_loss = plan_loss(val_emb, dim, val_plan.triplets, cfg.alpha);
      rec.val_accuracy = validation_accuracy(val_emb, dim, val_labels, cfg.alpha, val_cand).value_or(0.0);
      rec.lr = lr;
      rec.triplets = order.size();
      rec.skipped_steps = skipped;
      log.records.push_back(rec);
      if (on_record) on_record(rec);

      if (rec.val_accuracy > log.best_accuracy) {
        log.best_accuracy = rec.val_accuracy;
        log.best_record = static_cast<int>(log.records.size()) - 1;
        net::copy_params(best, model);
      }
      selection_best = std::max(selection_best, rec.val_accuracy);
      if (rec.val_loss < best_val_loss - cfg.min_improvement) {
        best_val_loss = rec.val_loss;
        stale_epochs = 0;
      } else if (++stale_epochs >= cfg.loss_patience) {
        break;
      }
    }
    if (diverged) break;
    if (selection_best > prev_selection_best + cfg.min_improvement) {
      prev_selection_best = selection_best;
      stale_selections = 0;
    } else if (++stale_selections >= cfg.accuracy_patience) {
      log.stop_reason = "accuracy_plateau";
      break;
    }
  }
  net::copy_params(model, best);
  log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

void write_train_log(const std::filesystem::path& path, const TrainLog& log) {
  std::string text;
  for (std::size_t i = 0; i < log.records.size(); ++i) {
    const auto& r = log.records[i];
    nlohmann::ordered_json j;
    j["epoch"] = r.epoch;
    j["selection"] = r.selection;
    j["loss"] = r.loss;
    j["val_loss"] = r.val_loss;
    j["val_accuracy"] = r.val_accuracy;
    j["lr"] = r.lr;
    j["triplets"] = r.triplets;
    j["skipped_steps"] = r.skipped_steps;
    j["best"] = static_cast<int>(i) == log.best_record;
    text += j.dump() + "\n";
  }
  nlohmann::ordered_json end;
  end["stop"] = log.stop_reason;
  end["best_epoch"] = log.best_record >= 0 ? log.records[static_cast<std::size_t>(log.best_record)].epoch : -1;
  end["best_val_accuracy"] = log.best_accuracy;
  text += end.dump() + "\n";
  textio::write_file_atomic(path, text);
}

std::vector<TrainRecord> read_train_log(const std::filesystem::path& path) {
  std::vector<TrainRecord> out;
  for (const auto& line : textio::read_lines(path)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::kMalformedInput, path.string() + ": " + e.what());
    }
    if (!j.contains("epoch")) continue;
    TrainRecord r;
    r.epoch = j.at("epoch").get<int>();
    r.selection = j.at("selection").get<int>();
    r.loss = j.at("loss").get<double>();
    r.val_loss = j.at("val_loss").get<double>();
    r.val_accuracy = j.at("val_accuracy").get<double>();
    r.lr = j.at("lr").get<double>();
    r.triplets = j.at("triplets").get<std::size_t>();
    r.skipped_steps = j.at("skipped_steps").get<std::size_t>();
    out.push_back(r);
  }
  return out;
}

}  // namespace sixmap::trainer
