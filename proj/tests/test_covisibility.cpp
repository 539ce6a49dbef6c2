#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "pmslam/covisibility.hpp"

using namespace pmslam;

namespace {

Pointmap cloud(const std::vector<Vec3>& points) {
  Pointmap p(1, static_cast<int>(points.size()));
  for (std::size_t i = 0; i < points.size(); ++i) p[i] = points[i];
  return p;
}

ConfidenceMap ones(std::size_t n) { return ConfidenceMap(1, static_cast<int>(n), 1.0); }

std::set<VoxelKey> keys(std::initializer_list<std::int64_t> xs) {
  std::set<VoxelKey> s;
  for (auto x : xs) s.insert({x, 0, 0});
  return s;
}

}  // namespace

TEST_CASE("voxelization uses floor on every axis") {
  VoxelKeyframeIndex index(1.0, 0.1);
  const std::vector<Vec3> pts{{0.1, 0.1, 0.1}, {0.2, 0.2, 0.2}};
  CHECK(index.insert(0, cloud(pts), ones(2)));
  CHECK(index.voxels(0) == std::set<VoxelKey>{{0, 0, 0}});
  CHECK(voxel_of(Vec3(-0.1, 0, 0), 1.0) == VoxelKey{-1, 0, 0});
}

TEST_CASE("voxelization matches brute-force floor division") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  std::vector<Vec3> pts(10000);
  for (auto& p : pts) p = Vec3(u(rng), u(rng), u(rng));
  ConfidenceMap conf = ones(pts.size());
  for (std::size_t i = 0; i < pts.size(); i += 3) conf[i] = 0.05;
  VoxelKeyframeIndex index(0.37, 0.1);
  index.insert(4, cloud(pts), conf);
  std::set<VoxelKey> oracle;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (conf[i] <= 0.1) continue;
    oracle.insert({static_cast<std::int64_t>(std::floor(pts[i].x() / 0.37)),
                   static_cast<std::int64_t>(std::floor(pts[i].y() / 0.37)),
                   static_cast<std::int64_t>(std::floor(pts[i].z() / 0.37))});
  }
  CHECK(index.voxels(4) == oracle);
}

TEST_CASE("empty valid set is flagged") {
  VoxelKeyframeIndex index(1.0, 0.5);
  CHECK_FALSE(index.insert(1, cloud({{0, 0, 0}}), ConfidenceMap(1, 1, 0.2)));
  CHECK(index.voxels(1).empty());
}

TEST_CASE("overlap score") {
  VoxelKeyframeIndex index;
  index.insert_voxels(1, keys({1, 2, 3}));
  index.insert_voxels(2, keys({2, 3, 4}));
  CHECK(index.overlap_score(1, 2) == 2);
  CHECK(index.overlap_score(2, 1) == 2);
  CHECK(index.overlap_score(1, 1) == 3);
  CHECK_THROWS(index.overlap_score(1, 9));
}

TEST_CASE("top-N candidates") {
  VoxelKeyframeIndex index;
  index.insert_voxels(0, keys({0, 1, 2, 3, 4, 5, 6}));
  CHECK(index.top_n_candidates(0, 4).empty());
  index.insert_voxels(7, keys({0, 1, 2, 3, 4}));
  index.insert_voxels(9, keys({0, 1, 2, 3, 4}));
  index.insert_voxels(3, keys({0, 1}));
  index.insert_voxels(5, keys({100}));
  const auto top = index.top_n_candidates(0, 2);
  REQUIRE(top.size() == 2);
  CHECK(top[0] == OverlapScore{9, 5});
  CHECK(top[1] == OverlapScore{7, 5});
  const auto all = index.top_n_candidates(0, 10);
  CHECK(all.size() == 3);
}

TEST_CASE("top-N and overlap agree with brute force on random keyframes") {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> cell(0, 60), size(5, 40);
  VoxelKeyframeIndex index;
  std::map<int, std::set<VoxelKey>> sets;
  for (int id = 0; id < 50; ++id) {
    std::set<VoxelKey> s;
    const int n = size(rng);
    for (int i = 0; i < n; ++i) s.insert({cell(rng), cell(rng) % 3, 0});
    sets[id] = s;
    index.insert_voxels(id, s);
  }
  for (int last : {0, 17, 49}) {
    std::vector<OverlapScore> oracle;
    for (const auto& [id, s] : sets) {
      if (id == last) continue;
      std::vector<VoxelKey> common;
      std::set_intersection(s.begin(), s.end(), sets[last].begin(), sets[last].end(), std::back_inserter(common));
      CHECK(index.overlap_score(last, id) == static_cast<int>(common.size()));
      if (!common.empty()) oracle.push_back({id, static_cast<int>(common.size())});
    }
    std::sort(oracle.begin(), oracle.end(), [](const OverlapScore& a, const OverlapScore& b) {
      return a.score != b.score ? a.score > b.score : a.keyframe_id > b.keyframe_id;
    });
    if (oracle.size() > 8) oracle.resize(8);
    CHECK(index.top_n_candidates(last, 8) == oracle);
  }
}

TEST_CASE("index stays consistent under random insert and remove") {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> id(0, 9), cell(0, 20), op(0, 2);
  VoxelKeyframeIndex index;
  for (int step = 0; step < 500; ++step) {
    if (op(rng) == 0) {
      index.remove(id(rng));
    } else {
      std::set<VoxelKey> s;
      for (int i = 0; i < 6; ++i) s.insert({cell(rng), 0, 0});
      index.insert_voxels(id(rng), s);
    }
    REQUIRE(index.consistent());
  }
}
