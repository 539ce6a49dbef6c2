#include "pmslam/covisibility.hpp"

#include <algorithm>
#include <cmath>

#include "pmslam/error.hpp"

namespace pmslam {

std::size_t VoxelKeyHash::operator()(const VoxelKey& k) const noexcept {
  std::uint64_t h = static_cast<std::uint64_t>(k.x) * 0x9e3779b97f4a7c15ULL;
  h ^= static_cast<std::uint64_t>(k.y) * 0xc2b2ae3d27d4eb4fULL + (h << 6) + (h >> 2);
  h ^= static_cast<std::uint64_t>(k.z) * 0x165667b19e3779f9ULL + (h << 6) + (h >> 2);
  return static_cast<std::size_t>(h);
}

VoxelKey voxel_of(const Vec3& p, double voxel_size) {
  return {static_cast<std::int64_t>(std::floor(p.x() / voxel_size)),
          static_cast<std::int64_t>(std::floor(p.y() / voxel_size)),
          static_cast<std::int64_t>(std::floor(p.z() / voxel_size))};
}

VoxelKeyframeIndex::VoxelKeyframeIndex(double voxel_size, double c_index_min)
    : voxel_size_(voxel_size), c_index_min_(c_index_min) {
  if (!(voxel_size > 0.0)) throw Error(ErrorCode::kInvalidArgument, "voxel size must be positive");
}

bool VoxelKeyframeIndex::insert(KeyframeId id, const Pointmap& world_points,
                                const ConfidenceMap& confidence) {
  if (!world_points.same_shape(confidence)) {
    throw Error(ErrorCode::kDimensionMismatch, "pointmap and confidence shapes differ");
  }
  std::set<VoxelKey> voxels;
  for (std::size_t i = 0; i < world_points.size(); ++i) {
    if (confidence[i] > c_index_min_ && world_points[i].allFinite()) {
      voxels.insert(voxel_of(world_points[i], voxel_size_));
    }
  }
  return insert_voxels(id, std::move(voxels));
}

bool VoxelKeyframeIndex::insert_voxels(KeyframeId id, std::set<VoxelKey> voxels) {
  remove(id);
  for (const auto& v : voxels) cells_[v].insert(id);
  const bool nonempty = !voxels.empty();
  per_keyframe_[id] = std::move(voxels);
  return nonempty;
}

void VoxelKeyframeIndex::remove(KeyframeId id) {
  auto it = per_keyframe_.find(id);
  if (it == per_keyframe_.end()) return;
  for (const auto& v : it->second) {
    auto cell = cells_.find(v);
    if (cell == cells_.end()) continue;
    cell->second.erase(id);
    if (cell->second.empty()) cells_.erase(cell);
  }
  per_keyframe_.erase(it);
}

const std::set<VoxelKey>& VoxelKeyframeIndex::voxels(KeyframeId id) const {
  auto it = per_keyframe_.find(id);
  if (it == per_keyframe_.end()) {
    throw Error(ErrorCode::kUnknownFrame, "keyframe " + std::to_string(id) + " not indexed");
  }
  return it->second;
}

std::vector<KeyframeId> VoxelKeyframeIndex::keyframes() const {
  std::vector<KeyframeId> out;
  for (const auto& [id, v] : per_keyframe_) out.push_back(id);
  return out;
}

int VoxelKeyframeIndex::overlap_score(KeyframeId k, KeyframeId i) const {
  const auto& a = voxels(k);
  const auto& b = voxels(i);
  const auto& small = a.size() <= b.size() ? a : b;
  const auto& large = a.size() <= b.size() ? b : a;
  int count = 0;
  for (const auto& v : small) count += large.count(v) ? 1 : 0;
  return count;
}

std::vector<OverlapScore> VoxelKeyframeIndex::top_n_candidates(KeyframeId last, int n) const {
  std::map<KeyframeId, int> counts;
  for (const auto& v : voxels(last)) {
    auto cell = cells_.find(v);
    if (cell == cells_.end()) continue;
    for (KeyframeId other : cell->second) {
      if (other != last) ++counts[other];
    }
  }
  std::vector<OverlapScore> out;
  for (const auto& [id, s] : counts) {
    if (s > 0) out.push_back({id, s});
  }
  std::sort(out.begin(), out.end(), [](const OverlapScore& a, const OverlapScore& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.keyframe_id > b.keyframe_id;
  });
  if (static_cast<int>(out.size()) > std::max(0, n)) out.resize(static_cast<std::size_t>(std::max(0, n)));
  return out;
}

bool VoxelKeyframeIndex::consistent() const {
  for (const auto& [id, set] : per_keyframe_) {
    for (const auto& v : set) {
      auto cell = cells_.find(v);
      if (cell == cells_.end() || !cell->second.count(id)) return false;
    }
  }
  for (const auto& [v, ids] : cells_) {
    if (ids.empty()) return false;
    for (KeyframeId id : ids) {
      auto it = per_keyframe_.find(id);
      if (it == per_keyframe_.end() || !it->second.count(v)) return false;
    }
  }
  return true;
}

}  // namespace pmslam
