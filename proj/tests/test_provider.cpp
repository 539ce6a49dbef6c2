#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "pmslam/error.hpp"
#include "pmslam/evaluation.hpp"
#include "pmslam/provider.hpp"

using namespace pmslam;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("pmslam_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

double stddev(const std::vector<double>& v) {
  double mean = 0.0, sq = 0.0;
  for (double x : v) mean += x;
  mean /= v.size();
  for (double x : v) sq += (x - mean) * (x - mean);
  return std::sqrt(sq / (v.size() - 1));
}

}  // namespace

TEST_CASE("zero-noise windows reproduce ground-truth geometry") {
  const SyntheticScene scene = make_synthetic_scene("room_sweep", 20, {});
  const SyntheticProvider provider(scene);
  const std::vector<FrameId> ids{4, 0, 9};
  const WindowInference w = provider.infer_window(ids);
  CHECK(w.reference_frame_id == 4);
  const Sim3 ref_inv = sim3_inverse(scene.trajectory[4]);
  const auto& k = scene.intrinsics;
  for (FrameId id : ids) {
    const FrameObservation& obs = w.at(id);
    const Sim3 rel = ref_inv * scene.trajectory[static_cast<std::size_t>(id)];
    CHECK((obs.reference_from_camera.translation - rel.translation).norm() < 1e-12);
    CHECK((obs.reference_from_camera.rotation - rel.rotation).norm() < 1e-12);
    const Grid<double> z = scene.render_depth(id);
    int checked = 0;
    for (int r = 0; r < k.height; ++r) {
      for (int c = 0; c < k.width; ++c) {
        if (z(r, c) <= 0.0) {
          CHECK(obs.confidence(r, c) == 0.0);
          continue;
        }
        const Vec3 cam(z(r, c) * (c - k.cx) / k.fx, z(r, c) * (r - k.cy) / k.fy, z(r, c));
        CHECK((obs.pointmap(r, c) - rel * cam).norm() < 1e-9);
        CHECK(obs.confidence(r, c) == 1.0);
        ++checked;
      }
    }
    CHECK(checked > 0);
  }
}

TEST_CASE("re-expression consistency across frames of one window") {
  const SyntheticScene scene = make_synthetic_scene("room_sweep", 20, {});
  const SyntheticProvider provider(scene);
  const std::vector<FrameId> ids{0, 3};
  const WindowInference w = provider.infer_window(ids);
  const Pointmap b = w.at(3).camera_points();
  const Sim3 t_ab = sim3_inverse(scene.trajectory[0]) * scene.trajectory[3];
  int total = 0, consistent = 0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    if (w.at(3).confidence[i] <= 0.0) continue;
    ++total;
    const Vec3 in_a = t_ab * b[i];
    CHECK((w.at(3).pointmap[i] - in_a).norm() < 1e-9);
    const Vec3 world = scene.trajectory[0] * in_a;
    const Vec3 origin = scene.trajectory[0].translation;
    const auto hit = scene.cast(origin, (world - origin).normalized());
    if (hit && std::abs(*hit - (world - origin).norm()) < 1e-9) ++consistent;
  }
  REQUIRE(total > 0);
  CHECK(consistent > 0.8 * total);
}

TEST_CASE("synthetic windows are deterministic") {
  SyntheticNoise noise;
  noise.pixel_sigma = 1.0;
  noise.depth_sigma_rel = 0.01;
  noise.window_scale_sigma = 0.05;
  noise.seed = 42;
  const SyntheticProvider provider(make_synthetic_scene("room_sweep", 20, noise));
  const std::vector<FrameId> ids{2, 5, 7};
  const WindowInference a = provider.infer_window(ids);
  const WindowInference b = provider.infer_window(ids);
  for (FrameId id : ids) {
    CHECK(a.at(id).pointmap == b.at(id).pointmap);
    CHECK(a.at(id).confidence == b.at(id).confidence);
  }
}

TEST_CASE("window scale jitter is shared by every frame of a window") {
  SyntheticNoise noise;
  noise.window_scale_sigma = 0.1;
  noise.seed = 3;
  const SyntheticScene scene = make_synthetic_scene("room_sweep", 20, noise);
  const SyntheticProvider noisy(scene);
  const SyntheticProvider clean(make_synthetic_scene("room_sweep", 20, {}));
  const std::vector<FrameId> ids{1, 6};
  const WindowInference wn = noisy.infer_window(ids), wc = clean.infer_window(ids);
  double ratio = 0.0;
  for (FrameId id : ids) {
    const auto& pn = wn.at(id).pointmap;
    const auto& pc = wc.at(id).pointmap;
    for (std::size_t i = 0; i < pn.size(); ++i) {
      if (pc[i].norm() < 1e-9) continue;
      const double r = pn[i].norm() / pc[i].norm();
      if (ratio == 0.0) ratio = r;
      CHECK(r == doctest::Approx(ratio).epsilon(1e-12));
    }
  }
  CHECK(ratio != doctest::Approx(1.0));
}

TEST_CASE("per-point noise matches the configured model") {
  SyntheticNoise noise;
  noise.pixel_sigma = 1.0;
  noise.depth_sigma_rel = 0.01;
  noise.seed = 9;
  const SyntheticScene scene = make_synthetic_scene("room_sweep", 60, noise);
  const SyntheticProvider provider(scene);
  const auto& k = scene.intrinsics;
  std::vector<double> depth_err, u_err;
  for (FrameId f = 0; f + 1 < 60 && depth_err.size() < 100000; f += 2) {
    const std::vector<FrameId> ids{f, f + 1};
    const WindowInference w = provider.infer_window(ids);
    for (FrameId id : ids) {
      const Pointmap cam = w.at(id).camera_points();
      const Grid<double> z = scene.render_depth(id);
      for (int r = 0; r < k.height; ++r) {
        for (int c = 0; c < k.width; ++c) {
          if (w.at(id).confidence(r, c) <= 0.0) continue;
          const Vec3& p = cam(r, c);
          depth_err.push_back(p.z() / z(r, c) - 1.0);
          u_err.push_back(k.fx * p.x() / p.z() + k.cx - c);
        }
      }
    }
  }
  REQUIRE(depth_err.size() >= 100000);
  CHECK(std::abs(stddev(depth_err) / 0.01 - 1.0) < 0.05);
  CHECK(std::abs(stddev(u_err) / 1.0 - 1.0) < 0.05);
}

TEST_CASE("window requests are validated") {
  const SyntheticProvider provider(make_synthetic_scene("room_sweep", 10, {}), 5);
  const std::vector<FrameId> too_many{0, 1, 2, 3, 4, 5};
  const std::vector<FrameId> unknown{0, 10};
  const std::vector<FrameId> single{0};
  CHECK_THROWS_AS(provider.infer_window(too_many), Error);
  CHECK_THROWS_AS(provider.infer_window(unknown), Error);
  CHECK_THROWS_AS(provider.infer_window(single), Error);
}

TEST_CASE("replay depth convention and zero-depth pixels") {
  const fs::path root = scratch_dir("replay_unit");
  fs::create_directories(root / "depth");
  Grid<std::uint16_t> img(4, 4, 5000);
  img(1, 2) = 0;
  write_depth_png(root / "depth/a.png", img);
  write_depth_png(root / "depth/b.png", img);
  std::ofstream(root / "associations.txt") << "0.0 depth/a.png\n0.1 depth/b.png\n";
  std::ofstream(root / "intrinsics.txt") << "10 10 2 2 5000\n";
  std::ofstream(root / "groundtruth.txt") << "0.0 0 0 0 0 0 0 1\n0.1 0.1 0 0 0 0 0 1\n";
  const auto provider = replay_load(root);
  const std::vector<FrameId> ids{0, 1};
  const WindowInference w = provider->infer_window(ids);
  const Pointmap cam = w.at(0).camera_points();
  CHECK(cam(0, 0).z() == doctest::Approx(1.0));
  CHECK(w.at(0).confidence(1, 2) == 0.0);
  CHECK(w.at(0).valid_count() == 15);
  CHECK(w.at(1).reference_from_camera.translation.isApprox(Vec3(0.1, 0, 0)));
  fs::remove_all(root);
}

TEST_CASE("replay reports malformed association lines") {
  const fs::path root = scratch_dir("replay_bad");
  fs::create_directories(root / "depth");
  write_depth_png(root / "depth/a.png", Grid<std::uint16_t>(4, 4, 5000));
  std::ofstream(root / "associations.txt") << "0.0 depth/a.png\nnot-a-number\n";
  std::ofstream(root / "intrinsics.txt") << "10 10 2 2 5000\n";
  std::ofstream(root / "groundtruth.txt") << "0.0 0 0 0 0 0 0 1\n";
  try {
    replay_load(root);
    FAIL("expected a parse error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  fs::remove_all(root);
  CHECK_THROWS_AS(replay_load(root), Error);
}

TEST_CASE("synthetic scene written as replay round-trips") {
  const SyntheticScene scene = make_synthetic_scene("room_sweep", 6, {});
  const fs::path root = scratch_dir("replay_roundtrip");
  write_replay_dataset(scene, root);
  const auto provider = replay_load(root);
  REQUIRE(provider->frame_count() == 6);
  const std::vector<FrameId> ids{0, 2};
  const WindowInference w = provider->infer_window(ids);
  const Grid<double> z = scene.render_depth(2);
  const Pointmap cam = w.at(2).camera_points();
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (z[i] <= 0.0 || z[i] * 5000.0 > 65535.0) continue;
    CHECK(std::abs(cam[i].z() - z[i]) <= 0.5 / 5000.0 + 1e-12);
  }
  const auto gt = provider->ground_truth_pose(2);
  REQUIRE(gt.has_value());
  CHECK((gt->translation - scene.trajectory[2].translation).norm() < 1e-8);
  fs::remove_all(root);
}

TEST_CASE("frame descriptors") {
  SyntheticNoise a, b;
  a.depth_sigma_rel = b.depth_sigma_rel = 0.01;
  a.seed = 1;
  b.seed = 2;
  const SyntheticProvider pa(make_synthetic_scene("room_sweep", 10, a));
  const SyntheticProvider pb(make_synthetic_scene("room_sweep", 10, b));
  const std::vector<FrameId> ids{3, 4};
  const FrameObservation oa = pa.infer_window(ids).at(3);
  const FrameObservation ob = pb.infer_window(ids).at(3);
  const FrameDescriptor da = frame_descriptor(oa), da2 = frame_descriptor(oa), db = frame_descriptor(ob);
  REQUIRE(da.usable);
  CHECK(da.values == da2.values);
  CHECK(std::abs(da.values.norm() - 1.0) < 1e-9);
  CHECK(da.values.dot(db.values) > 0.99);

  const Pointmap empty(8, 8, Vec3::Zero());
  const ConfidenceMap zero(8, 8, 0.0);
  CHECK_FALSE(pooled_inverse_depth_descriptor(empty, zero).usable);
}
