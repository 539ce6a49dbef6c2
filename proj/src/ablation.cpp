#include "pmslam/ablation.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "pmslam/error.hpp"
#include "pmslam/pipeline.hpp"

namespace pmslam {

const AblationCell& AblationTable::cell(const std::string& variant, int views) const {
  for (const auto& c : cells) {
    if (c.variant == variant && c.views == views) return c;
  }
  throw Error(ErrorCode::kInvalidArgument, "no ablation cell " + variant + "/" + std::to_string(views));
}

AblationRun ablation_run(const Config& config, std::uint64_t seed, const std::string& variant, int views) {
  AblationRun run;
  run.variant = variant;
  run.views = views;
  run.seed = seed;
  try {
    const SlamConfig slam_config = SlamConfig::from_config(config);
    const auto provider = make_provider("synthetic", config.get_string("scene", "wide_baseline"), config, seed,
                                        slam_config.window_max);
    SlamSystem slam(*provider, slam_config);
    slam.run();
    const RunReport report = evaluate_run(slam, *provider, false);
    run.seconds = report.seconds;
    run.expanded_windows = report.expanded_windows;
    if (report.ate) {
      run.ate = report.ate->rmse;
      run.extent = report.extent;
    }
    const double limit = config.get_double("divergence_ratio", 0.5) * run.extent;
    run.diverged = !report.ate || !std::isfinite(run.ate) || run.ate > limit;
  } catch (const Error&) {
    run.diverged = true;
  }
  return run;
}

namespace {

AblationCell summarize(const std::vector<AblationRun>& runs, const std::string& variant, int views) {
  AblationCell c;
  c.variant = variant;
  c.views = views;
  std::vector<double> values;
  for (const auto& r : runs) {
    if (r.variant != variant || r.views != views) continue;
    c.seeds.push_back(r.seed);
    if (r.diverged) {
      ++c.diverged;
    } else {
      values.push_back(r.ate);
    }
  }
  if (values.empty()) {
    c.mean = c.stddev = std::nan("");
    return c;
  }
  for (double v : values) c.mean += v;
  c.mean /= values.size();
  for (double v : values) c.stddev += (v - c.mean) * (v - c.mean);
  c.stddev = values.size() > 1 ? std::sqrt(c.stddev / (values.size() - 1)) : 0.0;
  return c;
}

std::string seed_list(const std::vector<std::uint64_t>& seeds) {
  std::string s;
  for (auto v : seeds) s += (s.empty() ? "" : ",") + std::to_string(v);
  return s;
}

}  // namespace

AblationTable sweep_views(const Config& config, const std::vector<std::uint64_t>& seeds,
                          const std::vector<int>& views) {
  AblationTable table;
  table.name = "views";
  for (const std::string policy : {"sigma", "recency"}) {
    for (int v : views) {
      Config c = config;
      c.set("window_policy", policy);
      c.set("window_max", std::to_string(v));
      for (auto seed : seeds) table.runs.push_back(ablation_run(c, seed, policy, v));
      table.cells.push_back(summarize(table.runs, policy, v));
    }
  }
  return table;
}

AblationTable sweep_residuals(const Config& config, const std::vector<std::uint64_t>& seeds) {
  AblationTable table;
  table.name = "residuals";
  const int views = config.get_int("window_max", 5);
  for (const std::string mode : {"hybrid", "ray", "projection"}) {
    Config c = config;
    c.set("residual", mode);
    for (auto seed : seeds) table.runs.push_back(ablation_run(c, seed, mode, views));
    table.cells.push_back(summarize(table.runs, mode, views));
  }
  return table;
}

std::string format_table(const AblationTable& table) {
  std::string out = "variant\tviews\tmean_ate\tstd_ate\tdiverged\tseeds\n";
  int diverged = 0;
  char buf[256];
  for (const auto& c : table.cells) {
    std::snprintf(buf, sizeof(buf), "%s\t%d\t%.6g\t%.6g\t%d%s\t%s\n", c.variant.c_str(), c.views, c.mean, c.stddev,
                  c.diverged, c.diverged > 0 ? "*" : "", seed_list(c.seeds).c_str());
    out += buf;
    diverged += c.diverged;
  }
  if (diverged > 0) {
    out += "# * " + std::to_string(diverged) + " divergent run(s) excluded from the means\n";
  }
  return out;
}

void write_table(const std::filesystem::path& path, const AblationTable& table) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << format_table(table);
}

void write_runs(const std::filesystem::path& path, const AblationTable& table) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << "variant\tviews\tseed\tate\textent\tdiverged\texpanded_windows\tseconds\n";
  char buf[256];
  for (const auto& r : table.runs) {
    std::snprintf(buf, sizeof(buf), "%s\t%d\t%llu\t%.9g\t%.6g\t%d\t%d\t%.3f\n", r.variant.c_str(), r.views,
                  static_cast<unsigned long long>(r.seed), r.ate, r.extent, r.diverged ? 1 : 0, r.expanded_windows,
                  r.seconds);
    out << buf;
  }
}

}  // namespace pmslam
