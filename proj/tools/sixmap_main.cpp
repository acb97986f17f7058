#include <cstdio>
#include <iostream>

#include "CLI11.hpp"
#include "sixmap/common.hpp"
#include "sixmap/pipeline.hpp"

namespace {

constexpr const char* kStageHelp[][2] = {
    {"synth", "generate a synthetic league (tracking, events, ground truth)"},
    {"ingest", "project, rotate, differentiate and split tracking data into phases"},
    {"roles", "assign roles per phase and cluster players into player-role entities"},
    {"heatmaps", "build location/direction heatmaps and the train/val/test split"},
    {"augment", "accumulate 3-combinations of heatmaps per entity"},
    {"train", "train the triplet network"},
    {"embed", "embed augmented heatmaps with the trained model"},
    {"identify", "run the identification conditions"},
    {"report", "render the identification table"},
    {"all", "run every stage after synth"},
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Player style embeddings from tracking data"};
  app.require_subcommand(1);
  std::string workdir = ".";
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;
  bool quiet = false;
  app.add_option("-w,--workdir", workdir, "work directory holding all stage files")->capture_default_str();
  app.add_option("-c,--config", config_path, "JSON configuration file")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "root seed (overrides the config)");
  app.add_option("-j,--jobs", jobs, "worker threads (overrides the config)")->check(CLI::PositiveNumber);
  app.add_flag("-q,--quiet", quiet, "suppress progress messages");
  bool dump = false;
  auto* cfg_cmd = app.add_subcommand("config", "print the effective configuration as JSON");
  cfg_cmd->add_flag("--dump", dump);
  for (const auto& s : kStageHelp) app.add_subcommand(s[0], s[1]);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(sixmap::ErrorCode::kInvalidArgument);
  }

  try {
    sixmap::pipeline::Context ctx;
    if (!config_path.empty()) ctx.config = sixmap::pipeline::load_config(config_path);
    if (seed) ctx.config.seed = *seed;
    if (jobs) ctx.config.jobs = *jobs;
    ctx.layout.root = workdir;
    if (!quiet) ctx.progress = [](const std::string& m) { std::cerr << m << '\n'; };
    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "config") {
      std::cout << sixmap::pipeline::dump_config(ctx.config);
    } else if (cmd == "all") {
      sixmap::pipeline::run_chain(ctx);
    } else {
      sixmap::pipeline::run_stage(cmd, ctx);
    }
  } catch (const sixmap::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
