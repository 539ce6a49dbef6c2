#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "pmslam/geometry.hpp"

namespace pmslam {

struct TimedPose {
  double timestamp = 0.0;
  Sim3 pose;  // world_from_camera
};

/// TUM format: `timestamp tx ty tz qx qy qz qw`, `#` comments.
std::vector<TimedPose> read_tum_trajectory(const std::filesystem::path& path);
/// 9 significant digits, quaternion w-last.
void write_tum_trajectory(const std::filesystem::path& path, std::span<const TimedPose> poses);
std::string format_tum_line(const TimedPose& pose);

/// Nearest-timestamp association; pairs farther apart than max_gap are dropped.
std::vector<std::pair<std::size_t, std::size_t>> associate(std::span<const TimedPose> estimated,
                                                           std::span<const TimedPose> reference,
                                                           double max_gap = 0.02);

/// Closed-form similarity alignment: reference ~= result * source.
Sim3 umeyama_alignment(std::span<const Vec3> source, std::span<const Vec3> reference,
                       bool with_scale = true);

struct AteReport {
  double rmse = 0.0;
  double mean = 0.0;
  double median = 0.0;
  double max = 0.0;
  std::size_t associations = 0;
  Sim3 alignment;  // reference_from_estimate
};

AteReport evaluate_ate(std::span<const TimedPose> estimated, std::span<const TimedPose> reference,
                       double max_gap = 0.02);

/// Diagonal of the reference positions' bounding box.
double trajectory_extent(std::span<const TimedPose> poses);

struct MapReport {
  double accuracy = 0.0;    // mean estimate -> reference NN distance
  double completion = 0.0;  // mean reference -> estimate NN distance
  double chamfer = 0.0;     // mean of the two
  std::size_t estimate_points = 0;
  std::size_t reference_points = 0;
};

MapReport evaluate_map(std::span<const Vec3> estimate, std::span<const Vec3> reference);

/// Exact nearest-neighbour queries over a static k-d tree.
class NearestNeighborIndex {
 public:
  explicit NearestNeighborIndex(std::span<const Vec3> points);
  double nearest_distance(const Vec3& query) const;
  std::size_t size() const { return points_.size(); }

 private:
  struct Node {
    std::size_t begin, end;
    int axis;
    double split;
    int left = -1, right = -1;
  };
  int build(std::size_t begin, std::size_t end);
  void search(int node, const Vec3& query, double& best_sq) const;

  std::vector<Vec3> points_;
  std::vector<Node> nodes_;
};

}  // namespace pmslam
