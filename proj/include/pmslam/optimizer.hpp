#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "pmslam/geometry.hpp"
#include "pmslam/sigma.hpp"

namespace pmslam {

using Vec5 = Eigen::Matrix<double, 5, 1>;
using Mat57 = Eigen::Matrix<double, 5, 7>;

enum class ResidualMode { kHybrid, kRay, kProjection };
enum class WeightConvention { kMultiply, kDivide };
enum class LambdaPixMode { kInverseFocal, kUnit };

ResidualMode parse_residual_mode(const std::string& name);
const char* to_string(ResidualMode mode);
WeightConvention parse_weight_convention(const std::string& name);
LambdaPixMode parse_lambda_pix_mode(const std::string& name);

struct ResidualOptions {
  ResidualMode mode = ResidualMode::kHybrid;
  WeightConvention weight_convention = WeightConvention::kMultiply;
  LambdaPixMode lambda_pix_mode = LambdaPixMode::kInverseFocal;
  double huber_delta = 1.345;
  double residual_sigma_px = 1.0;  // expected residual noise in pixels (whitening)
  int min_correspondences = 10;
  double z_min = kDefaultZMin;
};

struct LmOptions {
  double lambda0 = 1e-4;
  int max_iterations = 10;
  double min_step = 1e-8;
  double lambda_max = 1e6;
};

double lambda_pix(const PinholeIntrinsics& k, LambdaPixMode mode = LambdaPixMode::kInverseFocal);

struct HybridResidual {
  Vec5 value = Vec5::Zero();
  bool pixel_active = true;  // false when the transformed point is behind the camera
};

/// [psi_ray(x_a) - psi_ray(T x_b); lambda_pix (psi_pi(K, x_a) - psi_pi(K, T x_b))].
HybridResidual hybrid_residual(const Vec3& x_a, const Vec3& x_b, const Sim3& t, const PinholeIntrinsics& k,
                               double z_min = kDefaultZMin);
/// d residual / d tau for the left perturbation exp(tau) * T. Pixel rows are zero
/// when the transformed point is behind the camera.
Mat57 residual_jacobian(const Vec3& x_b, const Sim3& t, const PinholeIntrinsics& k,
                        double z_min = kDefaultZMin);
/// d (T x) / d tau = [I | -(T x)^ | T x].
Eigen::Matrix<double, 3, 7> point_jacobian(const Vec3& transformed);

struct PointPair {
  Vec3 source;  // x_a, frame i
  Vec3 target;  // x_b, frame j
  double weight = 1.0;
};

struct PairTerms {
  std::vector<PointPair> pairs;
  PinholeIntrinsics intrinsics;  // of the earlier frame
};

/// Ordered frames I_m .. I_f with adjacent relative transforms; I_m is the gauge.
struct WindowChain {
  std::vector<int> frames;
  std::vector<Sim3> transforms;  // transforms[p] = T^{frames[p]}_{frames[p+1]}
  std::vector<PairTerms> terms;
  Sim3 anchor;                   // world pose of frames[0]

  std::vector<Sim3> absolute_poses() const;
  void validate() const;
};

struct ResidualSystem {
  Eigen::VectorXd b0;                  // whitened residuals, all pairs stacked
  std::vector<Eigen::MatrixXd> blocks; // per-pair rows x 7
  std::vector<long> row_offsets;       // start row of each pair
  std::vector<std::vector<double>> irls_weights;
  std::vector<std::vector<char>> row_active;  // per pair, per row
  long active_rows = 0;
  double robust_cost = 0.0;

  long rows() const { return b0.size(); }
  Eigen::MatrixXd dense() const;
  std::vector<Eigen::MatrixXd> grams() const;
  StabilityReport report() const;
};

/// One correspondence's whitened residual and Jacobian, before Huber reweighting.
struct WhitenedTerm {
  Vec5 row = Vec5::Zero();
  Mat57 jac = Mat57::Zero();
  std::array<char, 5> active{};
  bool ok = false;
};

WhitenedTerm whiten_term(const PointPair& pair, const Sim3& t, const PinholeIntrinsics& k,
                         const ResidualOptions& options, bool with_jacobian);

double huber_weight(double norm, double delta);
double huber_cost(double norm, double delta);

/// Whitened system at the chain's current transforms, with Huber weights from
/// that iterate. Throws kDegenerateSystem for a pair below the correspondence floor.
ResidualSystem build_system(const WindowChain& chain, const ResidualOptions& options);
/// Huber cost of one correspondence; a term invalidated by the transform costs a large constant.
double term_cost(const PointPair& pair, const Sim3& t, const PinholeIntrinsics& k, const ResidualOptions& options);
double robust_cost(const WindowChain& chain, const ResidualOptions& options);

/// Left-scales T by the median distance ratio |x_a| / |T x_b| over the pair's correspondences.
Sim3 align_pair_scale(const PairTerms& terms, const Sim3& t);

struct SolveResult {
  WindowChain chain;
  StabilityReport report;
  int iterations = 0;
  int accepted_steps = 0;
  std::vector<double> cost_history;
  bool converged = false;
};

SolveResult lm_irls_solve(const WindowChain& chain, const ResidualOptions& options,
                          const LmOptions& lm = {});

}  // namespace pmslam
