#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pmslam/config.hpp"

namespace pmslam {

struct AblationRun {
  std::string variant;  // policy or residual mode
  int views = 0;
  std::uint64_t seed = 0;
  double ate = 0.0;
  double extent = 0.0;
  bool diverged = false;
  double seconds = 0.0;
  int expanded_windows = 0;
};

struct AblationCell {
  std::string variant;
  int views = 0;
  double mean = 0.0;
  double stddev = 0.0;
  int diverged = 0;
  std::vector<std::uint64_t> seeds;
};

struct AblationTable {
  std::string name;
  std::vector<AblationCell> cells;
  std::vector<AblationRun> runs;

  const AblationCell& cell(const std::string& variant, int views) const;
};

/// One synthetic run; ATE is divergent when non-finite or above divergence_ratio x extent.
AblationRun ablation_run(const Config& config, std::uint64_t seed, const std::string& variant, int views);

/// Window policy (sigma, recency) x window_max sweep on the configured scene.
AblationTable sweep_views(const Config& config, const std::vector<std::uint64_t>& seeds,
                          const std::vector<int>& views = {2, 3, 4, 5, 6});
/// Residual mode sweep (hybrid, ray, projection).
AblationTable sweep_residuals(const Config& config, const std::vector<std::uint64_t>& seeds);

std::string format_table(const AblationTable& table);
void write_table(const std::filesystem::path& path, const AblationTable& table);
void write_runs(const std::filesystem::path& path, const AblationTable& table);

}  // namespace pmslam
