#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "pmslam/geometry.hpp"
#include "pmslam/grid.hpp"

namespace pmslam {

struct PointPrior {
  Vec3 point = Vec3::Zero();  // keyframe camera frame
  Mat3 prior_cov = Mat3::Identity();
};

struct InfoGainResult {
  int candidate_id = -1;
  double gamma = 0.0;  // nats
  int valid_points = 0;
  int overlap_score = 0;  // tie-break for re-ranking
};

struct StabilityReport {
  double kappa = 0.0;
  long residual_count = 0;  // M
  long rank = 0;
  long dof = 0;  // M - rank
};

enum class RevertPolicy { kTriplet, kBestKappa };

RevertPolicy parse_revert_policy(const std::string& name);
const char* to_string(RevertPolicy policy);

struct SigmaOptions {
  double pixel_sigma = 1.0;
  double beta = 0.01;
  double epsilon = 1e-9;
  double cov_max = 1e4;
  int subset_cap = 512;
  int window_max = 5;
  double kappa_threshold = 1.0;
  RevertPolicy revert_policy = RevertPolicy::kTriplet;
};

/// Pixel noise propagated through the inverse projection plus a confidence-scaled
/// variance along the viewing ray. `ray` is the pixel's viewing direction.
Mat3 measurement_covariance(const PinholeIntrinsics& k, double depth, double confidence,
                            double pixel_sigma, double beta = 0.01, double epsilon = 1e-9,
                            const Vec3& ray = Vec3::UnitZ());

/// P - P J^T (S + J P J^T)^-1 J P, symmetrized.
Mat3 covariance_update(const Mat3& prior, const Eigen::MatrixXd& jacobian,
                       const Eigen::MatrixXd& measurement_cov);

/// Low-confidence prior subset of a keyframe: bottom quartile by fused confidence,
/// raster-uniform subsample, at most `subset_cap` points.
std::vector<PointPrior> low_confidence_subset(const Pointmap& camera_points,
                                              const ConfidenceMap& fused_confidence,
                                              const ConfidenceMap& first_confidence,
                                              const PinholeIntrinsics& k, const SigmaOptions& options);

/// Entropy reduction of the subset when observed from a candidate view.
/// `candidate_from_keyframe` maps keyframe camera points into the candidate camera.
InfoGainResult information_gain(int candidate_id, const Sim3& candidate_from_keyframe,
                                const PinholeIntrinsics& candidate_k,
                                const std::vector<PointPrior>& subset, const SigmaOptions& options);

/// kappa = |b0|^2 / (M - rank(A0)); rank from singular values above max(M,p)*s_max*1e-10.
StabilityReport reduced_chi_square(const Eigen::VectorXd& b0, const Eigen::MatrixXd& a0);
/// Same statistic for a column-block-diagonal A0 given its per-block Gram matrices.
StabilityReport reduced_chi_square_blocks(double b0_squared_norm, long residual_count,
                                          const std::vector<Eigen::MatrixXd>& grams);
long numerical_rank(const Eigen::VectorXd& singular_values, long rows, long cols);

struct WindowState {
  int current = -1;        // I_f
  int last_keyframe = -1;  // I_k
  std::vector<int> candidates;  // re-ranked W_v
  std::vector<int> activated;   // W_v^(sel)
  bool best_locked = false;     // set once W0 has been formed

  /// I_b, the head of the re-ranked candidates (absent when W_v is empty).
  std::optional<int> best() const;
  std::vector<int> default_triplet() const;
  /// W = W0 followed by activations.
  std::vector<int> window() const;
  bool in_window(int id) const;
  std::optional<int> next_candidate() const;
};

/// Re-orders candidates that are not in W by descending gain (ties: overlap score,
/// then id). Members of W keep their positions.
WindowState rerank(const WindowState& state, const std::vector<InfoGainResult>& gains);

struct ActivationStep {
  std::vector<int> window;
  std::optional<double> kappa;  // absent on optimizer failure
};

struct ActivationResult {
  WindowState state;
  StabilityReport report;
  std::vector<ActivationStep> history;
  bool reverted = false;
};

using EvaluateWindow = std::function<StabilityReport(const std::vector<int>& window)>;
using RerankWindow = std::function<WindowState(const WindowState& state)>;

/// Chi-square gated expansion of the default triplet.
ActivationResult adaptive_activation(const WindowState& initial, const EvaluateWindow& evaluate,
                                     const RerankWindow& rerank_fn, const SigmaOptions& options);

}  // namespace pmslam
