#include <doctest.h>

#include <cmath>
#include <random>

#include "pmslam/error.hpp"
#include "pmslam/matching.hpp"
#include "pmslam/provider.hpp"
#include "support.hpp"

using namespace pmslam;

namespace {

/// Camera-frame pointmap of the plane n . x = d (world frame) seen from `world_from_camera`.
Pointmap plane_view(const PinholeIntrinsics& k, const Sim3& world_from_camera, const Vec3& n, double d) {
  Pointmap p(k.height, k.width, Vec3::Zero());
  for (int r = 0; r < k.height; ++r) {
    for (int c = 0; c < k.width; ++c) {
      const Vec3 ray_cam((c - k.cx) / k.fx, (r - k.cy) / k.fy, 1.0);
      const Vec3 ray_world = world_from_camera.rotation * ray_cam;
      const Vec3 o = world_from_camera.translation;
      const double t = (d - n.dot(o)) / n.dot(ray_world);
      if (t > 0) p(r, c) = t * ray_cam;
    }
  }
  return p;
}

ConfidenceMap valid_confidence(const Pointmap& p) {
  ConfidenceMap c(p.height(), p.width(), 0.0);
  for (std::size_t i = 0; i < p.size(); ++i) c[i] = p[i].z() > 0 ? 1.0 : 0.0;
  return c;
}

}  // namespace

TEST_CASE("identical frames match themselves") {
  const SyntheticScene scene = make_synthetic_scene("room_sweep", 2, {});
  const std::vector<FrameId> ids{0, 1};
  const WindowInference w = SyntheticProvider(scene).infer_window(ids);
  const Pointmap cam = w.at(0).camera_points();
  const ConfidenceMap& conf = w.at(0).confidence;
  const CorrespondenceSet set = ray_match({&cam, &conf}, {&cam, &conf}, Sim3::identity(), scene.intrinsics);
  CHECK(set.valid_ratio == 1.0);
  CHECK(static_cast<int>(set.matches.size()) == w.at(0).valid_count());
  for (const Match& m : set.matches) {
    CHECK(m.target_pixel_row() == m.source_row);
    CHECK(m.target_pixel_col() == m.source_col);
    CHECK(m.angular_error < 1e-12);
  }
}

TEST_CASE("cameras facing opposite directions do not match") {
  const SyntheticScene scene = make_synthetic_scene("room_sweep", 2, {});
  const std::vector<FrameId> ids{0, 1};
  const WindowInference w = SyntheticProvider(scene).infer_window(ids);
  const Pointmap cam = w.at(0).camera_points();
  const ConfidenceMap& conf = w.at(0).confidence;
  Sim3 flip;
  flip.rotation = so3_exp(Vec3(0, M_PI, 0));
  const CorrespondenceSet set = ray_match({&cam, &conf}, {&cam, &conf}, flip, scene.intrinsics);
  CHECK(set.valid_ratio < 0.05);
}

TEST_CASE("two-view plane matches the geometric oracle") {
  const PinholeIntrinsics k = PinholeIntrinsics::centered(60, 60, 64, 64);
  const Vec3 n = Vec3(0.2, -0.1, 1.0).normalized();
  const double d = 3.0;
  const Sim3 world_from_a = Sim3::identity();
  Sim3 world_from_b;
  world_from_b.rotation = so3_exp(Vec3(0.02, -0.05, 0.01));
  world_from_b.translation = Vec3(0.2, 0.05, 0.1);
  const Pointmap a = plane_view(k, world_from_a, n, d), b = plane_view(k, world_from_b, n, d);
  const ConfidenceMap ca = valid_confidence(a), cb = valid_confidence(b);
  const Sim3 a_from_b = sim3_inverse(world_from_a) * world_from_b;
  const CorrespondenceSet set = ray_match({&a, &ca}, {&b, &cb}, a_from_b, k);
  REQUIRE(set.matches.size() > 1000);
  const Sim3 b_from_a = sim3_inverse(a_from_b);
  int close = 0;
  for (const Match& m : set.matches) {
    const Vec2 gt = psi_pi(k, b_from_a * a(m.source_row, m.source_col));
    if (std::hypot(gt.x() - m.target_col, gt.y() - m.target_row) <= 1.0) ++close;
  }
  CHECK(close >= 0.95 * set.matches.size());
}

TEST_CASE("matching is invariant to a global rescaling of the target") {
  const SyntheticScene scene = make_synthetic_scene("room_sweep", 4, {});
  const std::vector<FrameId> ids{0, 3};
  const WindowInference w = SyntheticProvider(scene).infer_window(ids);
  const Pointmap a = w.at(0).camera_points(), b = w.at(3).camera_points();
  Pointmap b2 = b;
  for (std::size_t i = 0; i < b2.size(); ++i) b2[i] *= 2.5;
  const Sim3 t = sim3_inverse(scene.trajectory[0]) * scene.trajectory[3];
  Sim3 t2 = t;
  t2.scale /= 2.5;
  const auto m1 = ray_match({&a, &w.at(0).confidence}, {&b, &w.at(3).confidence}, t, scene.intrinsics);
  const auto m2 = ray_match({&a, &w.at(0).confidence}, {&b2, &w.at(3).confidence}, t2, scene.intrinsics);
  REQUIRE(m1.matches.size() == m2.matches.size());
  for (std::size_t i = 0; i < m1.matches.size(); ++i) {
    CHECK(m1.matches[i].source_row == m2.matches[i].source_row);
    CHECK(m1.matches[i].target_col == doctest::Approx(m2.matches[i].target_col));
  }
}

TEST_CASE("valid ratio does not grow when theta_max tightens") {
  SyntheticNoise noise;
  noise.pixel_sigma = 0.5;
  noise.seed = 2;
  const SyntheticScene scene = make_synthetic_scene("room_sweep", 4, noise);
  const std::vector<FrameId> ids{0, 2};
  const WindowInference w = SyntheticProvider(scene).infer_window(ids);
  const Pointmap a = w.at(0).camera_points(), b = w.at(2).camera_points();
  const Sim3 t = sim3_inverse(scene.trajectory[0]) * scene.trajectory[2];
  double previous = 2.0;
  for (double deg : {2.0, 1.0, 0.5, 0.2, 0.05}) {
    MatchOptions o;
    o.theta_max = deg * M_PI / 180.0;
    const double ratio = ray_match({&a, &w.at(0).confidence}, {&b, &w.at(2).confidence}, t, scene.intrinsics, o).valid_ratio;
    CHECK(ratio <= previous);
    previous = ratio;
  }
}

TEST_CASE("sub-pixel sampling is exact on a plane") {
  const PinholeIntrinsics k = PinholeIntrinsics::centered(60, 60, 64, 64);
  const Vec3 n = Vec3(0.3, 0.2, 1.0).normalized();
  const Pointmap p = plane_view(k, Sim3::identity(), n, 2.0);
  const ConfidenceMap c = valid_confidence(p);
  const auto x = sample_pointmap(p, c, 10.25, 20.75);
  REQUIRE(x.has_value());
  CHECK(std::abs(n.dot(*x) - 2.0) < 1e-12);
  const Vec2 pix = psi_pi(k, *x);
  CHECK(pix.x() == doctest::Approx(20.75));
  CHECK(pix.y() == doctest::Approx(10.25));
}

TEST_CASE("keyframe decision is strict") {
  CHECK_FALSE(keyframe_decision(1.0));
  CHECK(keyframe_decision(0.0));
  CHECK_FALSE(keyframe_decision(0.7, 0.7));
  CHECK(keyframe_decision(0.6999, 0.7));
}

TEST_CASE("confidence-weighted fusion") {
  KeyframeRecord rec;
  Pointmap first(1, 2, Vec3::Zero());
  first[1] = Vec3(1, 1, 1);
  ConfidenceMap c1(1, 2, 1.0);
  fuse_pointmap(rec, first, c1);
  CHECK(rec.canonical == first);
  CHECK(rec.confidence == c1);

  Pointmap next(1, 2, Vec3(4, 0, 0));
  ConfidenceMap c2(1, 2, 3.0);
  c2[1] = 0.0;
  fuse_pointmap(rec, next, c2);
  CHECK(rec.canonical[0].isApprox(Vec3(3, 0, 0)));
  CHECK(rec.confidence[0] == 4.0);
  CHECK(rec.canonical[1] == Vec3(1, 1, 1));
  CHECK(rec.confidence[1] == 1.0);

  CHECK_THROWS_AS(fuse_pointmap(rec, Pointmap(2, 2), ConfidenceMap(2, 2, 1.0)), Error);
}

TEST_CASE("sequential fusion equals the batch weighted mean in any order") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> w(0.1, 2.0);
  std::vector<Pointmap> maps;
  std::vector<ConfidenceMap> confs;
  for (int i = 0; i < 8; ++i) {
    Pointmap p(2, 3);
    ConfidenceMap c(2, 3);
    for (std::size_t j = 0; j < p.size(); ++j) {
      p[j] = pmslam::test::normal3(rng);
      c[j] = w(rng);
    }
    maps.push_back(p);
    confs.push_back(c);
  }
  KeyframeRecord forward, backward;
  for (int i = 0; i < 8; ++i) fuse_pointmap(forward, maps[i], confs[i]);
  for (int i = 7; i >= 0; --i) fuse_pointmap(backward, maps[i], confs[i]);
  for (std::size_t j = 0; j < 6; ++j) {
    Vec3 num = Vec3::Zero();
    double den = 0.0;
    for (int i = 0; i < 8; ++i) {
      num += confs[i][j] * maps[i][j];
      den += confs[i][j];
    }
    CHECK((forward.canonical[j] - num / den).norm() < 1e-10);
    CHECK((backward.canonical[j] - forward.canonical[j]).norm() < 1e-10);
  }
}

TEST_CASE("intrinsics running mean") {
  KeyframeRecord rec;
  CHECK(update_intrinsics(rec, PinholeIntrinsics::centered(100, 100, 64, 48)));
  CHECK(rec.intrinsics.fx == 100.0);
  CHECK(update_intrinsics(rec, PinholeIntrinsics::centered(110, 110, 64, 48)));
  CHECK(rec.intrinsics.fx == doctest::Approx(105.0));
  CHECK(rec.intrinsics.cx == 32.0);
  CHECK(rec.intrinsics.cy == 24.0);
  CHECK_FALSE(update_intrinsics(rec, PinholeIntrinsics::centered(-1, 100, 64, 48)));
  CHECK(rec.focal_count == 2);

  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> f(50, 150);
  KeyframeRecord batch;
  double sum = 0.0;
  for (int i = 0; i < 100; ++i) {
    const double v = f(rng);
    sum += v;
    update_intrinsics(batch, PinholeIntrinsics::centered(v, v, 64, 48));
  }
  CHECK(std::abs(batch.intrinsics.fy - sum / 100) < 1e-12);
}
