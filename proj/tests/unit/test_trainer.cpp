#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "sixmap/heatmap.hpp"
#include "sixmap/textio.hpp"
#include "sixmap/trainer.hpp"
#include "util.hpp"

using namespace sixmap;
using namespace sixmap::trainer;

namespace {

// count identities x per samples; identity k owns one point in the plane.
std::vector<float> clustered(int identities, int per, double spread, std::vector<int>& labels,
                             std::uint64_t seed, std::size_t dim = 4) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, spread);
  std::vector<float> e;
  labels.clear();
  for (int k = 0; k < identities; ++k) {
    for (int s = 0; s < per; ++s) {
      labels.push_back(k);
      for (std::size_t i = 0; i < dim; ++i) e.push_back(static_cast<float>((i == std::size_t(k) % dim ? 3.0 * (1 + k / int(dim)) : 0.0) + g(rng)));
    }
  }
  return e;
}

// Heatmap pairs whose identities occupy different pitch regions and run in
// different directions.
net::InputBatch planted(int identities, int per, std::vector<int>& labels, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<heatmap::HeatmapPair> pairs;
  labels.clear();
  for (int k = 0; k < identities; ++k) {
    const Vec2 home{20.0 + 60.0 * (k % 2), 15.0 + 38.0 * (k / 2)};
    const double heading = 1.5708 * k;
    for (int s = 0; s < per; ++s) {
      std::vector<Vec2> pos, vel;
      for (int i = 0; i < 400; ++i) {
        pos.push_back({home.x + 6 * g(rng), home.y + 6 * g(rng)});
        const double sp = 6 + g(rng), h = heading + 0.3 * g(rng);
        vel.push_back({sp * std::cos(h), sp * std::sin(h)});
      }
      heatmap::HeatmapPair p;
      p.location = heatmap::location_heatmap(pos, 105, 68);
      p.direction = heatmap::direction_heatmap(vel);
      pairs.push_back(std::move(p));
      labels.push_back(k);
    }
  }
  return net::make_inputs(pairs);
}

TrainConfig small_config() {
  TrainConfig c;
  c.max_selections = 3;
  c.max_epochs = 3;
  c.seed = 5;
  return c;
}

}  // namespace

TEST_SUITE("trainer") {
  TEST_CASE("candidate sampling") {
    std::vector<int> labels;
    for (int k = 0; k < 3; ++k)
      for (int s = 0; s < 4 + 3 * k; ++s) labels.push_back(k);
    const auto c = sample_candidates(labels, 1);
    CHECK(c.size() == 4 + 5 + 5);
    CHECK(std::is_sorted(c.begin(), c.end()));
    CHECK(c == sample_candidates(labels, 1));
    std::map<int, int> per;
    for (auto i : c) ++per[labels[i]];
    CHECK(per[0] == 4);
    CHECK(per[2] == 5);
  }

  TEST_CASE("collapsed embeddings: every negative is hard") {
    const std::vector<int> labels = {0, 0, 0, 0, 0, 1, 1, 1, 1, 1};
    const std::vector<float> emb(labels.size() * 4, 0.5f);
    const auto plan = select_triplets(emb, 4, labels, 0.1, 3);
    CHECK(plan.candidates.size() == 10);
    CHECK(plan.triplets.size() == 10 * 4);
    CHECK(plan.hard == plan.triplets.size());
    CHECK(plan.nearest_fallback == 0);
    for (const auto& t : plan.triplets) {
      CHECK(labels[t.anchor] == labels[t.positive]);
      CHECK(labels[t.anchor] != labels[t.negative]);
      CHECK(t.anchor != t.positive);
    }
    CHECK(validation_accuracy(emb, 4, labels, 0.1, plan.candidates).value() == 0.0);
  }

  TEST_CASE("plan size counts every positive except the anchor itself") {
    std::vector<int> labels;
    const auto emb = clustered(6, 9, 0.5, labels, 4);
    const auto plan = select_triplets(emb, 4, labels, 0.1, 7);
    std::size_t expected = 0;
    std::set<std::uint32_t> s(plan.candidates.begin(), plan.candidates.end());
    for (std::size_t a = 0; a < labels.size(); ++a) expected += s.count(static_cast<std::uint32_t>(a)) ? 4 : 5;
    CHECK(plan.triplets.size() == expected);
    CHECK(plan.anchors_without_positive == 0);
    // Anchors outside the candidate set get five positives: 5 x 24 + 4 x 30.
    CHECK(expected == 5 * (54 - 30) + 4 * 30);
  }

  TEST_CASE("paper-scale triplet count identity") {
    // 657 identities, 49,519 training pairs, every anchor in a set of five per
    // identity losing itself as a positive.
    CHECK(49519 * 5 - 657 * 5 == 244310);
  }

  TEST_CASE("separated identities fall back to the nearest negatives") {
    std::vector<int> labels;
    const auto emb = clustered(4, 6, 0.01, labels, 5);
    const auto plan = select_triplets(emb, 4, labels, 0.1, 9, SelectOptions{5, 3});
    CHECK(plan.hard == 0);
    CHECK(plan.nearest_fallback == plan.triplets.size());
    CHECK(validation_accuracy(emb, 4, labels, 0.1, plan.candidates).value() == 1.0);
    // Each negative is among the three candidates nearest to its anchor.
    for (const auto& t : plan.triplets) {
      std::vector<std::pair<double, std::uint32_t>> d;
      for (auto c : plan.candidates) {
        if (labels[c] == labels[t.anchor]) continue;
        double s = 0;
        for (int i = 0; i < 4; ++i) s += std::pow(double(emb[t.anchor * 4 + i]) - emb[c * 4 + i], 2);
        d.push_back({s, c});
      }
      std::sort(d.begin(), d.end());
      bool found = false;
      for (int i = 0; i < 3; ++i) found |= d[i].second == t.negative;
      CHECK(found);
    }
  }

  TEST_CASE("selection is deterministic") {
    std::vector<int> labels;
    const auto emb = clustered(5, 8, 2.0, labels, 6);
    const auto a = select_triplets(emb, 4, labels, 0.1, 11);
    const auto b = select_triplets(emb, 4, labels, 0.1, 11);
    CHECK(a.triplets == b.triplets);
    CHECK(a.triplets != select_triplets(emb, 4, labels, 0.1, 12).triplets);
  }

  TEST_CASE("lonely anchors and empty validation") {
    const std::vector<int> labels = {0, 1, 1};
    const std::vector<float> emb = {0, 0, 1, 1, 1, 1};
    const auto plan = select_triplets(emb, 2, labels, 0.1, 1);
    CHECK(plan.anchors_without_positive == 1);
    CHECK(plan.triplets.size() == 2);
    const std::vector<int> singles = {0, 1};
    const std::vector<float> e2 = {0, 0, 1, 1};
    const std::vector<std::uint32_t> cand = {0, 1};
    CHECK_FALSE(validation_accuracy(e2, 2, singles, 0.1, cand).has_value());
  }

  TEST_CASE("training separates planted identities") {
    std::vector<int> tl, vl;
    const auto tr = planted(4, 12, tl, 1);
    const auto va = planted(4, 5, vl, 2);
    const auto res = train(tr, tl, va, vl, small_config());
    REQUIRE_FALSE(res.log.records.empty());
    CHECK(res.log.best_accuracy >= 0.9);
    int max_sel = 0;
    for (const auto& r : res.log.records) max_sel = std::max(max_sel, r.selection);
    CHECK(max_sel <= 2);
    CHECK(res.log.records[0].lr == doctest::Approx(0.05));
    for (const auto& r : res.log.records) {
      if (r.selection == 1) CHECK(r.lr == doctest::Approx(0.025));
    }
  }

  TEST_CASE("training is reproducible") {
    std::vector<int> tl, vl;
    const auto tr = planted(4, 8, tl, 3);
    const auto va = planted(4, 5, vl, 4);
    auto cfg = small_config();
    cfg.max_selections = 2;
    cfg.max_epochs = 2;
    auto a = train(tr, tl, va, vl, cfg);
    auto b = train(tr, tl, va, vl, cfg);
    REQUIRE(a.log.records.size() == b.log.records.size());
    for (std::size_t i = 0; i < a.log.records.size(); ++i) {
      CHECK(a.log.records[i].loss == b.log.records[i].loss);
      CHECK(a.log.records[i].val_loss == b.log.records[i].val_loss);
      CHECK(a.log.records[i].val_accuracy == b.log.records[i].val_accuracy);
    }
    CHECK(a.log.stop_reason == b.log.stop_reason);
    const auto pa = a.model.params(), pb = b.model.params();
    for (std::size_t k = 0; k < pa.size(); ++k) CHECK(pa[k]->value == pb[k]->value);

    testutil::TempDir dir("trainlog");
    write_train_log(dir / "a.jsonl", a.log);
    write_train_log(dir / "b.jsonl", b.log);
    CHECK(textio::read_file(dir / "a.jsonl") == textio::read_file(dir / "b.jsonl"));
    const auto back = read_train_log(dir / "a.jsonl");
    REQUIRE(back.size() == a.log.records.size());
    CHECK(back[0].loss == a.log.records[0].loss);
    CHECK(back.back().val_accuracy == a.log.records.back().val_accuracy);
  }

  TEST_CASE("zero margin reaches zero loss and stops on the accuracy plateau") {
    std::vector<int> tl, vl;
    const auto tr = planted(4, 8, tl, 5);
    const auto va = planted(4, 5, vl, 6);
    auto cfg = small_config();
    cfg.alpha = 0.0;
    cfg.max_selections = 10;
    const auto res = train(tr, tl, va, vl, cfg);
    CHECK(res.log.stop_reason == "accuracy_plateau");
    bool zero = false;
    for (const auto& r : res.log.records) zero |= r.loss == 0.0;
    CHECK(zero);
  }
}
