#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "pmslam/config.hpp"
#include "pmslam/geometry.hpp"
#include "pmslam/grid.hpp"

namespace pmslam {

using FrameId = int;

/// One frame of a window inference. The pointmap is expressed in the
/// coordinates of the window's reference (first) frame.
struct FrameObservation {
  FrameId frame_id = -1;
  Pointmap pointmap;
  ConfidenceMap confidence;
  PinholeIntrinsics intrinsics;
  std::optional<Eigen::VectorXd> descriptor;
  double timestamp = 0.0;
  /// Predicted camera pose in window-reference coordinates; consistent with
  /// the pointmap (pointmap = reference_from_camera * camera_points()).
  Sim3 reference_from_camera;

  /// Pointmap re-expressed in this frame's own camera coordinates.
  Pointmap camera_points() const;
  int valid_count() const;
};

struct WindowInference {
  FrameId reference_frame_id = -1;
  std::vector<FrameObservation> observations;

  const FrameObservation& at(FrameId id) const;
};

class Provider {
 public:
  virtual ~Provider() = default;

  virtual WindowInference infer_window(std::span<const FrameId> frame_ids) const = 0;
  virtual int frame_count() const = 0;
  virtual double timestamp(FrameId id) const = 0;
  virtual std::optional<Sim3> ground_truth_pose(FrameId id) const = 0;
  virtual int max_window() const { return 5; }

 protected:
  void validate_request(std::span<const FrameId> frame_ids) const;
};

// ---------------------------------------------------------------------------
// Synthetic ground-truth oracle

struct ScenePlane {
  Vec3 center;
  Vec3 normal;
  Vec3 u_axis;
  Vec3 v_axis;
  double half_u = 1.0;
  double half_v = 1.0;
};

struct SceneBox {
  Vec3 min_corner;
  Vec3 max_corner;
};

struct SyntheticNoise {
  double pixel_sigma = 0.0;        // px
  double depth_sigma_rel = 0.0;    // fraction of depth
  double window_scale_sigma = 0.0; // log-scale std, shared per window
  double intrinsics_jitter = 0.0;  // uniform +-fraction per frame and window
  double pose_rot_sigma = 0.0;     // rad, predicted-pose rotation noise
  double pose_trans_sigma = 0.0;   // scene units, predicted-pose translation noise
  double rotation_bias = 0.0;      // fractional over-estimate of relative rotation angle
  double confidence_kappa = 1e4;
  std::uint64_t seed = 0;

  bool is_zero() const;
};

struct SyntheticScene {
  std::vector<ScenePlane> planes;
  std::vector<SceneBox> boxes;
  std::vector<double> timestamps;
  std::vector<Sim3> trajectory;  // world_from_camera, unit scale
  PinholeIntrinsics intrinsics;
  SyntheticNoise noise;
  std::string name;

  int frame_count() const { return static_cast<int>(trajectory.size()); }
  /// Closest positive ray hit; nullopt when the ray escapes.
  std::optional<double> cast(const Vec3& origin, const Vec3& direction) const;
  /// Ground-truth z-depth per pixel (0 = no surface).
  Grid<double> render_depth(FrameId id) const;
  /// World-coordinate surface samples seen from the trajectory (for map evaluation).
  std::vector<Vec3> ground_truth_cloud(int frame_stride) const;
};

/// Scene presets: "room_sweep", "room_loop", "wide_baseline", "static".
SyntheticScene make_synthetic_scene(const std::string& preset, int frames,
                                    const SyntheticNoise& noise, double focal = 60.0,
                                    int resolution = 64);
SyntheticNoise synthetic_noise_from_config(const Config& config, std::uint64_t seed);

class SyntheticProvider final : public Provider {
 public:
  explicit SyntheticProvider(SyntheticScene scene, int window_max = 5);

  WindowInference infer_window(std::span<const FrameId> frame_ids) const override;
  int frame_count() const override { return scene_.frame_count(); }
  double timestamp(FrameId id) const override;
  std::optional<Sim3> ground_truth_pose(FrameId id) const override;
  int max_window() const override { return window_max_; }

  const SyntheticScene& scene() const { return scene_; }

 private:
  const Grid<double>& depth(FrameId id) const;

  SyntheticScene scene_;
  int window_max_;
  mutable std::mutex cache_mutex_;
  mutable std::map<FrameId, std::shared_ptr<const Grid<double>>> depth_cache_;
};

// ---------------------------------------------------------------------------
// Depth-map replay

struct ReplayNoise {
  double rotation_sigma = 0.0;    // rad
  double translation_sigma = 0.0; // scene units
  double scale_sigma = 0.0;       // log-scale, shared per window
  std::uint64_t seed = 0;
};

struct ReplayOptions {
  ReplayNoise noise;
  int downsample = 1;
  int window_max = 5;
  double max_association_gap = 0.02;  // seconds
};

struct ReplayFrame {
  double timestamp = 0.0;
  std::filesystem::path depth_path;
  Sim3 ground_truth;
};

class ReplayProvider final : public Provider {
 public:
  ReplayProvider(std::vector<ReplayFrame> frames, PinholeIntrinsics intrinsics,
                 double depth_scale, ReplayOptions options);

  WindowInference infer_window(std::span<const FrameId> frame_ids) const override;
  int frame_count() const override { return static_cast<int>(frames_.size()); }
  double timestamp(FrameId id) const override;
  std::optional<Sim3> ground_truth_pose(FrameId id) const override;
  int max_window() const override { return options_.window_max; }

  const PinholeIntrinsics& intrinsics() const { return intrinsics_; }

 private:
  /// Backprojected camera-frame points and confidences for one frame.
  std::pair<Pointmap, ConfidenceMap> backproject(FrameId id) const;

  std::vector<ReplayFrame> frames_;
  PinholeIntrinsics intrinsics_;  // after downsampling
  double depth_scale_;
  ReplayOptions options_;
};

/// Loads `associations.txt`, `intrinsics.txt` and `groundtruth.txt` from a dataset root.
std::unique_ptr<ReplayProvider> replay_load(const std::filesystem::path& dataset_root,
                                            ReplayOptions options = {});

/// Writes a synthetic scene as a replay dataset (16-bit PNG depth).
void write_replay_dataset(const SyntheticScene& scene, const std::filesystem::path& root,
                          double depth_scale = 5000.0);

// ---------------------------------------------------------------------------
// Descriptors

struct FrameDescriptor {
  Eigen::VectorXd values;
  bool usable = false;
};

inline constexpr int kDescriptorGrid = 16;

/// Provider descriptor when present, otherwise a 16x16 pooled inverse-depth grid.
FrameDescriptor frame_descriptor(const FrameObservation& observation);
FrameDescriptor pooled_inverse_depth_descriptor(const Pointmap& camera_points,
                                                const ConfidenceMap& confidence);

// ---------------------------------------------------------------------------
// 16-bit depth image IO

Grid<std::uint16_t> read_depth_image(const std::filesystem::path& path);
void write_depth_png(const std::filesystem::path& path, const Grid<std::uint16_t>& image);
void write_depth_pgm(const std::filesystem::path& path, const Grid<std::uint16_t>& image);

std::uint64_t hash_window(std::uint64_t seed, std::span<const FrameId> frame_ids);

}  // namespace pmslam
