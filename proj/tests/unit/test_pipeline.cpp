#include <algorithm>
#include <filesystem>

#include "doctest.h"
#include "json.hpp"
#include "sixmap/common.hpp"
#include "sixmap/pipeline.hpp"
#include "sixmap/textio.hpp"
#include "util.hpp"

using namespace sixmap;
using namespace sixmap::pipeline;
namespace fs = std::filesystem;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::kInvalidArgument;
}

// One team, five matches of five phases: ten identities with 25 phases each.
const char* kTinyConfig = R"({
  "seed": 3,
  "synth": {"teams": 1, "matches_per_team": 5, "half_duration": 1950, "multi_role_fraction": 0.0},
  "train": {"max_epochs": 1, "max_selections": 1, "batch_size": 200,
            "widths": {"conv1": 2, "conv2": 4, "conv3": 4, "conv4": 8, "fc1": 16}},
  "identify": {"conditions": ["p10-ATL25", "p10-L2"]}
})";

std::vector<std::string> lines_with(const fs::path& p, const std::string& needle) {
  std::vector<std::string> out;
  for (const auto& l : textio::read_lines(p)) {
    if (l.find(needle) != std::string::npos) out.push_back(l);
  }
  return out;
}

}  // namespace

TEST_SUITE("pipeline") {
  TEST_CASE("config defaults and overrides") {
    const auto d = parse_config("{}");
    CHECK(d.train.alpha == 0.1);
    CHECK(d.train.lr == 0.05);
    CHECK(d.train.batch_size == 1000);
    CHECK(d.direction.threshold == 4.0);
    CHECK(d.clustering.threshold == 0.6);
    const auto c = parse_config(R"({"seed": 12, "train": {"alpha": 0.3}, "pitch": {"length": 100, "width": 60}})");
    CHECK(c.seed == 12);
    CHECK(c.train.alpha == 0.3);
    CHECK(c.train.lr == 0.05);
    CHECK(c.length == 100.0);
    CHECK(c.width == 60.0);
  }

  TEST_CASE("config rejects unknown keys, wrong types and bad values") {
    CHECK(code_of([] { parse_config(R"({"sede": 1})"); }) == ErrorCode::kInvalidArgument);
    CHECK(code_of([] { parse_config(R"({"train": {"alpah": 1}})"); }) == ErrorCode::kInvalidArgument);
    CHECK(code_of([] { parse_config(R"({"train": {"lr": "fast"}})"); }) == ErrorCode::kInvalidArgument);
    CHECK(code_of([] { parse_config(R"({"train": {"lr": -1}})"); }) == ErrorCode::kInvalidArgument);
    CHECK(code_of([] { parse_config(R"({"pitch": {"length": 50, "width": 60}})"); }) == ErrorCode::kInvalidArgument);
    CHECK(code_of([] { parse_config(R"({"ingest": {"smoothing_window": 4}})"); }) == ErrorCode::kInvalidArgument);
    CHECK(code_of([] { parse_config(R"({"identify": {"conditions": ["p10-XYZ"]}})"); }) ==
          ErrorCode::kInvalidArgument);
    CHECK_THROWS(parse_config("{not json"));
  }

  TEST_CASE("dumped config parses back to the same document") {
    const auto c = parse_config(kTinyConfig);
    const auto text = dump_config(c);
    CHECK(dump_config(parse_config(text)) == text);
  }

  TEST_CASE("layout") {
    const Layout L{"/w"};
    CHECK(L.tracking() == fs::path("/w/tracking.csv"));
    CHECK(L.split("val") == fs::path("/w/split/val.txt"));
    CHECK(L.augmented("test") == fs::path("/w/aug_test.tsv"));
    CHECK(L.embeddings("train") == fs::path("/w/embeddings_train.tsv"));
    CHECK(L.stage_log("roles") == fs::path("/w/logs/roles.jsonl"));
  }

  TEST_CASE("stages report missing inputs") {
    testutil::TempDir dir("pipe-missing");
    Context ctx{parse_config("{}"), Layout{dir.path()}, {}};
    for (const auto& s : stage_names()) {
      if (s == "synth") continue;
      INFO(s);
      CHECK(code_of([&] { run_stage(s, ctx); }) == ErrorCode::kMissingInput);
    }
    CHECK(code_of([&] { run_stage("bogus", ctx); }) == ErrorCode::kInvalidArgument);
  }

  TEST_CASE("player-phases without in-bounds samples give zero grids and a warning") {
    testutil::TempDir dir("pipe-empty");
    Context ctx{parse_config("{}"), Layout{dir.path()}, {}};
    ingest::TrackedPhase ph;
    ph.phase_id = "M-P0";
    ph.match_id = "M";
    ph.t1 = 700.0;
    for (int p = 0; p < 2; ++p) {
      ingest::PlayerSeries s;
      s.player_id = p == 0 ? "A" : "B";
      s.team = "T";
      for (int k = 0; k < 50; ++k) {
        s.t.push_back(0.1 * k);
        s.pos.push_back({10.0 + 0.1 * k, 20.0});
        s.vel.push_back({p == 0 ? 5.0 : 1.0, 0.0});
        s.out_of_bounds.push_back(p == 0);
      }
      ph.players.push_back(s);
    }
    fs::create_directories(ctx.layout.phases_dir());
    ingest::write_phase(ctx.layout.phases_dir() / "M-P0.csv", ph);
    textio::write_file_atomic(ctx.layout.labels(),
                              "player_id,phase_id,role,mean_x,mean_y,entity_id\n"
                              "A,M-P0,0,10,20,A#0\n"
                              "B,M-P0,1,12,20,B#0\n");
    run_stage("heatmaps", ctx);
    const auto store = heatmap::read_store(ctx.layout.heatmaps());
    REQUIRE(store.size() == 2);
    const auto& a = store[0].entity_id == "A#0" ? store[0] : store[1];
    const auto& b = store[0].entity_id == "A#0" ? store[1] : store[0];
    CHECK(a.location.total() == 0);
    CHECK(a.direction.total() == 0);
    CHECK(b.location.total() == 50);
    const auto log = ctx.layout.stage_log("heatmaps");
    const auto warnings = lines_with(log, "warning_empty_heatmap");
    REQUIRE(warnings.size() == 1);
    CHECK(warnings[0].find(a.record_id) != std::string::npos);
    const auto summary = nlohmann::json::parse(lines_with(log, "\"summary\"").at(0));
    CHECK(summary["empty_heatmaps"] == 1);
    CHECK(summary["out_of_bounds_samples"] == 50);
  }

  TEST_CASE("embedding files round trip and group by entity") {
    testutil::TempDir dir("pipe-emb");
    std::vector<EmbeddingRecord> recs = {
        {"r1", "e2", {"p1", "p2", "p3"}, {0.5f, -0.25f}},
        {"r2", "e1", {"p4"}, {1.0f, 0.0f}},
        {"r3", "e2", {"p5", "p6", "p7"}, {0.125f, 0.75f}},
    };
    write_embeddings(dir / "e.tsv", recs);
    const auto back = read_embeddings(dir / "e.tsv");
    REQUIRE(back.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(back[i].record_id == recs[i].record_id);
      CHECK(back[i].entity_id == recs[i].entity_id);
      CHECK(back[i].sources == recs[i].sources);
      CHECK(back[i].vector == recs[i].vector);
    }
    const auto groups = group_embeddings(back);
    REQUIRE(groups.size() == 2);
    const auto& e2 = groups[0].entity_id == "e2" ? groups[0] : groups[1];
    REQUIRE(e2.vectors.rows() == 2);
    CHECK(e2.vectors(1, 1) == 0.75);
    CHECK(e2.sources[0] == std::vector<std::string>{"p1", "p2", "p3"});
  }

  TEST_CASE("tiny end-to-end run, reproducible stage by stage") {
    testutil::TempDir dir("pipe-chain");
    Context ctx{parse_config(kTinyConfig), Layout{dir.path()}, {}};
    const auto& L = ctx.layout;
    run_stage("synth", ctx);
    run_chain(ctx);
    for (const auto& p : {L.phase_index(), L.labels(), L.heatmaps(), L.split("test"), L.augmented("val"), L.model(),
                          L.train_log(), L.embeddings("test"), L.results(), L.rankings(), L.report()}) {
      INFO(p.string());
      CHECK(fs::exists(p));
    }
    const auto report = textio::read_file(L.report());
    CHECK(report.find("p10-ATL25") != std::string::npos);
    CHECK(report.find("p10-L2") != std::string::npos);
    const auto results = nlohmann::json::parse(textio::read_file(L.results()));
    CHECK(results.dump().find("p10-ATL25") != std::string::npos);

    // Each stage is a pure function of its inputs: rerunning leaves every
    // output byte-identical.
    const std::vector<std::pair<std::string, std::vector<fs::path>>> outputs = {
        {"ingest", {L.phase_index(), L.phases_dir() / (textio::read_lines(L.phase_index()).at(0) + ".csv")}},
        {"roles", {L.labels()}},
        {"heatmaps", {L.heatmaps(), L.split("train"), L.split("val"), L.split("test")}},
        {"augment", {L.augmented("train"), L.augmented("val"), L.augmented("test")}},
        {"train", {L.model(), L.train_log()}},
        {"embed", {L.embeddings("train"), L.embeddings("test")}},
        {"identify", {L.results(), L.rankings()}},
        {"report", {L.report()}},
    };
    for (const auto& [stage, files] : outputs) {
      std::vector<std::string> before;
      for (const auto& f : files) before.push_back(textio::read_file(f));
      run_stage(stage, ctx);
      for (std::size_t i = 0; i < files.size(); ++i) {
        INFO(stage << " " << files[i].string());
        CHECK(textio::read_file(files[i]) == before[i]);
      }
    }
  }
}
