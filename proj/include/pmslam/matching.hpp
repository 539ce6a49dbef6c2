#pragma once

#include <optional>
#include <vector>

#include "pmslam/geometry.hpp"
#include "pmslam/grid.hpp"

namespace pmslam {

struct Match {
  int source_row = 0;
  int source_col = 0;
  double target_row = 0.0;  // sub-pixel
  double target_col = 0.0;
  double angular_error = 0.0;  // radians
  double weight = 0.0;         // sqrt(C_source(a) * C_target(b))

  int target_pixel_row() const;
  int target_pixel_col() const;
};

struct CorrespondenceSet {
  int source_frame = -1;
  int target_frame = -1;
  std::vector<Match> matches;
  int sampled = 0;  // valid source pixels visited
  double valid_ratio = 0.0;
};

struct MatchOptions {
  int stride = 1;
  int radius = 2;
  int max_iterations = 5;
  double theta_max = 0.5 * M_PI / 180.0;
  bool subpixel = true;
  double distance_tol = 0.05;  // max |log(|T x_b| / |x_a|)|, rejects occlusions
};

/// Camera-frame pointmap with confidences and an intrinsics estimate.
struct PointmapView {
  const Pointmap* points = nullptr;
  const ConfidenceMap* confidence = nullptr;
};

/// Dense ray matching. `source_from_target` maps target camera points into the
/// source camera; `source_k` seeds the search by projection.
CorrespondenceSet ray_match(const PointmapView& source, const PointmapView& target,
                            const Sim3& source_from_target, const PinholeIntrinsics& source_k,
                            const MatchOptions& options = {});

/// Interpolates a camera-frame pointmap at a sub-pixel location. Normalized
/// image coordinates and inverse depth are interpolated bilinearly, which is
/// exact on planar patches. Returns nullopt if a contributing pixel is invalid.
std::optional<Vec3> sample_pointmap(const Pointmap& points, const ConfidenceMap& confidence,
                                    double row, double col);

/// Promote when the valid ratio falls strictly below the threshold.
bool keyframe_decision(double valid_ratio, double threshold = 0.7);

struct KeyframeRecord {
  int id = -1;
  Pointmap canonical;            // keyframe camera frame
  ConfidenceMap confidence;      // fused, non-decreasing
  ConfidenceMap first_confidence;
  PinholeIntrinsics intrinsics;
  int focal_count = 0;
  Sim3 pose;                     // world_from_camera
};

/// Confidence-weighted running mean; pixels with zero new confidence are untouched.
void fuse_pointmap(KeyframeRecord& record, const Pointmap& points, const ConfidenceMap& confidence);
/// Running mean of the focal lengths; the principal point stays at the image center.
/// Returns false when the estimate is rejected.
bool update_intrinsics(KeyframeRecord& record, const PinholeIntrinsics& estimate);

}  // namespace pmslam
