#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <unordered_map>
#include <vector>

#include "pmslam/grid.hpp"

namespace pmslam {

using KeyframeId = int;

struct VoxelKey {
  std::int64_t x = 0, y = 0, z = 0;
  auto operator<=>(const VoxelKey&) const = default;
};

struct VoxelKeyHash {
  std::size_t operator()(const VoxelKey& k) const noexcept;
};

struct OverlapScore {
  KeyframeId keyframe_id = -1;
  int score = 0;
  bool operator==(const OverlapScore&) const = default;
};

VoxelKey voxel_of(const Vec3& p, double voxel_size);

class VoxelKeyframeIndex {
 public:
  explicit VoxelKeyframeIndex(double voxel_size = 0.25, double c_index_min = 0.1);

  /// Indexes world-frame points whose confidence exceeds the floor; replaces any
  /// previous entry for the id. Returns false when the valid set is empty.
  bool insert(KeyframeId id, const Pointmap& world_points, const ConfidenceMap& confidence);
  bool insert_voxels(KeyframeId id, std::set<VoxelKey> voxels);
  void remove(KeyframeId id);

  bool contains(KeyframeId id) const { return per_keyframe_.count(id) > 0; }
  const std::set<VoxelKey>& voxels(KeyframeId id) const;
  std::vector<KeyframeId> keyframes() const;

  int overlap_score(KeyframeId k, KeyframeId i) const;
  /// Descending by score; ties by larger id; zero scores excluded.
  std::vector<OverlapScore> top_n_candidates(KeyframeId last, int n) const;

  /// Bidirectional map consistency check.
  bool consistent() const;

  double voxel_size() const { return voxel_size_; }
  double c_index_min() const { return c_index_min_; }

 private:
  double voxel_size_;
  double c_index_min_;
  std::unordered_map<VoxelKey, std::set<KeyframeId>, VoxelKeyHash> cells_;
  std::map<KeyframeId, std::set<VoxelKey>> per_keyframe_;
};

}  // namespace pmslam
