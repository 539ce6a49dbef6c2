#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "pmslam/backend.hpp"
#include "pmslam/config.hpp"
#include "pmslam/covisibility.hpp"
#include "pmslam/evaluation.hpp"
#include "pmslam/matching.hpp"
#include "pmslam/optimizer.hpp"
#include "pmslam/provider.hpp"
#include "pmslam/sigma.hpp"

namespace pmslam {

enum class WindowPolicy { kSigma, kRecency };

WindowPolicy parse_window_policy(const std::string& name);
const char* to_string(WindowPolicy policy);

struct SlamConfig {
  WindowPolicy policy = WindowPolicy::kSigma;
  int window_max = 5;
  double keyframe_threshold = 0.7;
  int top_n = 8;
  double voxel_size = 0.25;
  double c_index_min = 0.1;
  bool loop_closure = true;
  int pgo_every = 10;
  SigmaOptions sigma;
  MatchOptions match;
  ResidualOptions residual;
  LmOptions lm;
  LoopOptions loop;
  EdgeOptions edge;
  PgoOptions pgo;

  static SlamConfig from_config(const Config& config);
};

struct FrameMetrics {
  int frame_id = -1;
  std::vector<int> window;  // final configuration, request order
  double kappa = 0.0;
  double valid_ratio = 0.0;
  int iterations = 0;
  int evaluations = 0;
  bool expanded = false;  // |W| > 3 in the final configuration
  bool reverted = false;
  bool promoted = false;
  bool fallback = false;
  std::string failure;  // last window error, empty when none
  double seconds = 0.0;
};

struct TrackedFrame {
  int frame_id = -1;
  double timestamp = 0.0;
  int keyframe = -1;              // reference keyframe
  Sim3 keyframe_from_frame;
  bool fallback = false;
};

struct MapPoint {
  Vec3 position;
  double confidence = 0.0;
};

class SlamSystem {
 public:
  SlamSystem(const Provider& provider, SlamConfig config);

  void process_frame(int frame_id);
  void run(int max_frames = -1);

  std::vector<TimedPose> trajectory() const;
  std::vector<TimedPose> keyframe_trajectory() const;
  std::vector<MapPoint> map_points(double min_confidence = 0.0) const;

  const std::vector<FrameMetrics>& metrics() const { return metrics_; }
  const std::map<int, KeyframeRecord>& keyframes() const { return keyframes_; }
  const PoseGraph& pose_graph() const { return graph_; }
  const VoxelKeyframeIndex& index() const { return index_; }
  const SlamConfig& config() const { return config_; }
  int pgo_runs() const { return pgo_runs_; }
  double total_seconds() const { return total_seconds_; }

 private:
  struct WindowOutcome;

  Sim3 world_pose(int keyframe) const;
  std::vector<int> recency_window(int frame) const;
  WindowOutcome evaluate_window(int frame, const std::vector<int>& request) const;
  std::vector<InfoGainResult> candidate_gains(int last_keyframe, const std::vector<int>& candidates,
                                              const std::vector<OverlapScore>& overlaps,
                                              const std::map<int, Sim3>& pose_override) const;
  void adopt(int frame, const WindowOutcome& outcome);
  void promote(int frame, const WindowOutcome& outcome);
  void detect_loops(int keyframe, const FrameObservation& observation);
  void run_pgo();
  void reindex(int keyframe);
  void track_fallback(int frame);
  void bootstrap(int frame);

  const Provider& provider_;
  SlamConfig config_;
  std::map<int, KeyframeRecord> keyframes_;
  std::map<int, std::set<VoxelKey>> indexed_at_;
  VoxelKeyframeIndex index_;
  DescriptorDatabase descriptors_;
  PoseGraph graph_;
  std::vector<TrackedFrame> frames_;
  std::vector<FrameMetrics> metrics_;
  int last_keyframe_ = -1;
  int keyframes_since_pgo_ = 0;
  bool pending_loop_ = false;
  int pgo_runs_ = 0;
  double total_seconds_ = 0.0;
};

/// Synthetic or replay provider described by a config; `dataset` is the replay root.
std::unique_ptr<Provider> make_provider(const std::string& mode, const std::filesystem::path& dataset,
                                        const Config& config, std::uint64_t seed, int window_max);

void export_trajectory(const std::filesystem::path& path, const std::vector<TimedPose>& poses);
void export_map(const std::filesystem::path& path, const std::vector<MapPoint>& points);

struct RunReport {
  std::optional<AteReport> ate;
  double extent = 0.0;
  std::optional<MapReport> map;
  std::optional<double> closure_error;
  int keyframes = 0;
  int loop_edges = 0;
  int pgo_runs = 0;
  double seconds = 0.0;
  double max_kappa = 0.0;
  int max_window = 0;
  int expanded_windows = 0;
  int fallbacks = 0;
};

/// Start-to-end displacement error after similarity alignment of the whole run.
double closure_error(const std::vector<TimedPose>& estimated, const std::vector<TimedPose>& reference);

RunReport evaluate_run(const SlamSystem& slam, const Provider& provider, bool with_map = true);
void export_metrics(const std::filesystem::path& path, const SlamSystem& slam, const RunReport& report);

}  // namespace pmslam
