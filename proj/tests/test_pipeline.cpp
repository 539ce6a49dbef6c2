#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "pmslam/ablation.hpp"
#include "pmslam/error.hpp"
#include "pmslam/evaluation.hpp"
#include "pmslam/pipeline.hpp"
#include "run_support.hpp"
#include "support.hpp"

using namespace pmslam;
using pmslam::test::config_of;
using pmslam::test::run_synthetic;
namespace fs = std::filesystem;

namespace {

std::vector<TimedPose> circle(int n) {
  std::vector<TimedPose> poses;
  for (int i = 0; i < n; ++i) {
    TimedPose p;
    p.timestamp = 0.1 * i;
    const double a = 2 * M_PI * i / n;
    p.pose.translation = Vec3(std::cos(a), std::sin(a), 0.1 * std::sin(3 * a));
    p.pose.rotation = so3_exp(Vec3(0, 0, a));
    poses.push_back(p);
  }
  return poses;
}

}  // namespace

TEST_CASE("ATE of identical and similar trajectories") {
  const auto gt = circle(50);
  CHECK(evaluate_ate(gt, gt).rmse < 1e-12);

  Sim3 s;
  s.scale = 2.0;
  s.rotation = so3_exp(Vec3(0.3, -0.2, 0.5));
  s.translation = Vec3(1, 2, 3);
  auto moved = gt;
  for (auto& p : moved) p.pose = s * p.pose;
  CHECK(evaluate_ate(moved, gt).rmse < 1e-9);
}

TEST_CASE("ATE of isotropic position noise") {
  const auto gt = circle(1000);
  std::mt19937_64 rng(1);
  const double sigma = 0.01;
  auto noisy = gt;
  for (auto& p : noisy) p.pose.translation += pmslam::test::normal3(rng, sigma);
  const double ate = evaluate_ate(noisy, gt).rmse;
  CHECK(std::abs(ate / (sigma * std::sqrt(3.0)) - 1.0) < 0.1);
}

TEST_CASE("ATE needs two associations") {
  const auto gt = circle(5);
  std::vector<TimedPose> shifted = gt;
  for (auto& p : shifted) p.timestamp += 1000.0;
  CHECK_THROWS_AS(evaluate_ate(shifted, gt), Error);
}

TEST_CASE("association respects the gap") {
  std::vector<TimedPose> est(3), ref(3);
  est[0].timestamp = 0.0;
  est[1].timestamp = 1.01;
  est[2].timestamp = 2.5;
  ref[0].timestamp = 0.005;
  ref[1].timestamp = 1.0;
  ref[2].timestamp = 2.0;
  const auto pairs = associate(est, ref);
  REQUIRE(pairs.size() == 2);
  CHECK(pairs[0] == std::make_pair<std::size_t, std::size_t>(0, 0));
  CHECK(pairs[1] == std::make_pair<std::size_t, std::size_t>(1, 1));
}

TEST_CASE("TUM lines carry nine significant digits with w last") {
  TimedPose p;
  p.timestamp = 1.5;
  p.pose.translation = Vec3(1.0 / 3.0, 2, -0.125);
  CHECK(format_tum_line(p) == "1.5 0.333333333 2 -0.125 0 0 0 1");

  const fs::path path = fs::temp_directory_path() / "pmslam_test_tum.txt";
  const auto poses = circle(10);
  write_tum_trajectory(path, poses);
  const auto back = read_tum_trajectory(path);
  REQUIRE(back.size() == poses.size());
  for (std::size_t i = 0; i < poses.size(); ++i) {
    CHECK((back[i].pose.translation - poses[i].pose.translation).norm() < 1e-8);
    CHECK((back[i].pose.rotation - poses[i].pose.rotation).norm() < 1e-8);
  }
  std::ofstream(path) << "0 1 2 3\n";
  CHECK_THROWS_AS(read_tum_trajectory(path), Error);
  fs::remove(path);
}

TEST_CASE("map metrics agree with brute force") {
  std::mt19937_64 rng(2);
  std::vector<Vec3> a(400), b(300);
  for (auto& p : a) p = pmslam::test::normal3(rng);
  for (auto& p : b) p = pmslam::test::normal3(rng) + Vec3(0.1, 0, 0);
  auto brute = [](const std::vector<Vec3>& from, const std::vector<Vec3>& to) {
    double sum = 0.0;
    for (const auto& p : from) {
      double best = 1e300;
      for (const auto& q : to) best = std::min(best, (p - q).norm());
      sum += best;
    }
    return sum / from.size();
  };
  const MapReport r = evaluate_map(a, b);
  CHECK(r.accuracy == doctest::Approx(brute(a, b)).epsilon(1e-12));
  CHECK(r.completion == doctest::Approx(brute(b, a)).epsilon(1e-12));
  CHECK(r.chamfer == doctest::Approx(0.5 * (r.accuracy + r.completion)));
  CHECK(evaluate_map(a, a).chamfer == 0.0);
}

TEST_CASE("static camera is never promoted") {
  const auto out = run_synthetic("static", config_of({{"frames", "15"}}), 0);
  CHECK(out.keyframes == 1);
  for (const auto& p : out.trajectory) CHECK((p.pose.translation - out.trajectory[0].pose.translation).norm() < 1e-9);
}

TEST_CASE("noise-free sweep is exact and never expands") {
  const auto out = run_synthetic("room_sweep", config_of({{"frames", "30"}}), 0);
  REQUIRE(out.report.ate.has_value());
  CHECK(out.report.ate->rmse < 1e-6);
  CHECK(out.report.max_kappa < 1e-6);
  CHECK(out.report.expanded_windows == 0);
  CHECK(out.report.fallbacks == 0);
}

TEST_CASE("a noisy wide-baseline run expands some window") {
  const auto out = run_synthetic("wide_baseline",
                                 config_of({{"frames", "20"},
                                            {"noise_pixel_sigma", "1.0"},
                                            {"noise_depth_sigma_rel", "0.01"},
                                            {"noise_window_scale_sigma", "0.05"},
                                            {"residual_sigma_px", "0.2"}}),
                                 0);
  CHECK(out.report.expanded_windows > 0);
  for (const auto& m : out.metrics) {
    CHECK(static_cast<int>(m.window.size()) <= 5);
    if (m.window.size() >= 2) CHECK(m.window[0] == m.frame_id);
    if (m.promoted && m.window.size() > 1) CHECK(m.valid_ratio < 0.7);
  }
}

TEST_CASE("runs are deterministic and exports are well formed") {
  const Config c = config_of({{"frames", "12"}, {"noise_depth_sigma_rel", "0.01"}, {"noise_window_scale_sigma", "0.05"}});
  const auto a = run_synthetic("room_sweep", c, 3);
  const auto b = run_synthetic("room_sweep", c, 3);
  REQUIRE(a.trajectory.size() == b.trajectory.size());
  for (std::size_t i = 0; i < a.trajectory.size(); ++i) {
    CHECK(format_tum_line(a.trajectory[i]) == format_tum_line(b.trajectory[i]));
  }

  const fs::path ply = fs::temp_directory_path() / "pmslam_test_map.ply";
  export_map(ply, {{Vec3(1, 2, 3), 0.5}});
  std::ifstream in(ply);
  std::stringstream text;
  text << in.rdbuf();
  CHECK(text.str().find("property float confidence") != std::string::npos);
  CHECK(text.str().find("element vertex 1") != std::string::npos);
  fs::remove(ply);
}

TEST_CASE("unknown mode and scene are rejected") {
  CHECK_THROWS_AS(make_provider("video", "", Config{}, 0, 5), Error);
  CHECK_THROWS_AS(make_provider("synthetic", "nowhere", Config{}, 0, 5), Error);
  CHECK_THROWS_AS(make_provider("replay", "/nonexistent/dataset", Config{}, 0, 5), Error);
}

TEST_CASE("ablation table formatting") {
  AblationTable t;
  t.name = "views";
  t.cells.push_back({"sigma", 5, 0.00101, 0.0002, 0, {0, 1, 2}});
  t.cells.push_back({"recency", 5, 0.0012, 0.0003, 1, {0, 1, 2}});
  const std::string text = format_table(t);
  CHECK(text.rfind("variant\tviews\tmean_ate\tstd_ate\tdiverged\tseeds\n", 0) == 0);
  CHECK(text.find("sigma\t5\t0.00101\t0.0002\t0\t0,1,2\n") != std::string::npos);
  CHECK(text.find("recency\t5\t0.0012\t0.0003\t1*\t0,1,2\n") != std::string::npos);
  CHECK(text.find("1 divergent run(s) excluded") != std::string::npos);
  CHECK(t.cell("sigma", 5).mean == 0.00101);
  CHECK_THROWS(t.cell("sigma", 4));
}

TEST_CASE("two-view windows do not depend on the policy") {
  const Config c = config_of({{"frames", "15"}, {"noise_depth_sigma_rel", "0.01"}, {"noise_window_scale_sigma", "0.05"}});
  const AblationRun sigma = ablation_run(c, 0, "sigma", 2);
  const AblationRun recency = ablation_run(c, 0, "recency", 2);
  CHECK(sigma.ate == recency.ate);
}

TEST_CASE("noise-free residual sweep is exact in every mode") {
  const auto table = sweep_residuals(config_of({{"frames", "15"}}), {0});
  for (const auto& cell : table.cells) CHECK(cell.mean < 1e-6);
}
