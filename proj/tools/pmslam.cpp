#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "pmslam/ablation.hpp"
#include "pmslam/error.hpp"
#include "pmslam/pipeline.hpp"

namespace fs = std::filesystem;
using namespace pmslam;

namespace {

struct RunArgs {
  std::string mode = "synthetic";
  std::string dataset;
  std::string config_path;
  std::uint64_t seed = 0;
  std::string out = "out";
  bool no_loop_closure = false;
  std::string window_policy;
  std::string residual;
  int max_views = 0;
};

Config load_config(const std::string& path) {
  return path.empty() ? Config{} : Config::load(path);
}

int run_command(const RunArgs& a) {
  Config config = load_config(a.config_path);
  if (a.no_loop_closure) config.set("loop_closure", "false");
  if (!a.window_policy.empty()) config.set("window_policy", a.window_policy);
  if (!a.residual.empty()) config.set("residual", a.residual);
  if (a.max_views > 0) config.set("window_max", std::to_string(a.max_views));

  const SlamConfig slam_config = SlamConfig::from_config(config);
  const auto provider = make_provider(a.mode, a.dataset, config, a.seed, slam_config.window_max);
  SlamSystem slam(*provider, slam_config);
  slam.run(config.get_int("max_frames", -1));

  fs::create_directories(a.out);
  export_trajectory(fs::path(a.out) / "trajectory.txt", slam.trajectory());
  export_map(fs::path(a.out) / "map.ply", slam.map_points(0.0));
  const RunReport report = evaluate_run(slam, *provider);
  export_metrics(fs::path(a.out) / "metrics.json", slam, report);

  std::printf("frames %zu keyframes %d loop_edges %d seconds %.2f", slam.metrics().size(), report.keyframes,
              report.loop_edges, report.seconds);
  if (report.ate) std::printf(" ate_rmse %.9g extent %.4g", report.ate->rmse, report.extent);
  if (report.closure_error) std::printf(" closure %.6g", *report.closure_error);
  std::printf("\n");
  return 0;
}

struct AblateArgs {
  std::string config_path;
  std::string out;
  std::string seeds = "0,1,2,3,4";
};

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const std::string item = text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    if (!item.empty()) seeds.push_back(std::stoull(item));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (seeds.empty()) throw Error(ErrorCode::kInvalidArgument, "no seeds given");
  return seeds;
}

int ablate_command(const std::string& which, const AblateArgs& a) {
  const Config config = load_config(a.config_path);
  const auto seeds = parse_seeds(a.seeds);
  const AblationTable table = which == "views" ? sweep_views(config, seeds) : sweep_residuals(config, seeds);
  const std::string text = format_table(table);
  std::cout << text;
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    write_table(fs::path(a.out) / ("ablation_" + which + ".tsv"), table);
    write_runs(fs::path(a.out) / ("ablation_" + which + "_runs.tsv"), table);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dense multi-view pointmap SLAM backend"};
  app.require_subcommand(1);

  RunArgs run;
  auto* run_cmd = app.add_subcommand("run", "Run the pipeline on a sequence");
  run_cmd->add_option("--mode", run.mode, "synthetic or replay")->check(CLI::IsMember({"synthetic", "replay"}));
  run_cmd->add_option("--dataset", run.dataset,
                      "replay: dataset directory; synthetic: scene preset (room_sweep, room_loop, wide_baseline, static)");
  run_cmd->add_option("--config", run.config_path, "key = value config file");
  run_cmd->add_option("--seed", run.seed, "noise seed");
  run_cmd->add_option("--out", run.out, "output directory");
  run_cmd->add_flag("--no-loop-closure", run.no_loop_closure, "disable loop detection and pose-graph optimization");
  run_cmd->add_option("--window-policy", run.window_policy, "sigma or recency")
      ->check(CLI::IsMember({"sigma", "recency"}));
  run_cmd->add_option("--residual", run.residual, "hybrid, ray or projection")
      ->check(CLI::IsMember({"hybrid", "ray", "projection"}));
  run_cmd->add_option("--max-views", run.max_views, "maximum window size")->check(CLI::Range(2, 16));

  auto* ablate = app.add_subcommand("ablate", "Ablation sweeps");
  ablate->require_subcommand(1);
  AblateArgs ablate_args;
  for (const char* name : {"views", "residuals"}) {
    auto* sub = ablate->add_subcommand(name, std::string(name) == "views"
                                                 ? "window policy x view count sweep"
                                                 : "residual mode sweep");
    sub->add_option("--config", ablate_args.config_path, "key = value config file");
    sub->add_option("--out", ablate_args.out, "directory for the tables");
    sub->add_option("--seeds", ablate_args.seeds, "comma-separated seeds");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*run_cmd) return run_command(run);
    for (const char* name : {"views", "residuals"}) {
      if (ablate->got_subcommand(name)) return ablate_command(name, ablate_args);
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s: %s\n", to_string(e.code()), e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 1;
}
