#include "pmslam/sigma.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "pmslam/error.hpp"

namespace pmslam {

RevertPolicy parse_revert_policy(const std::string& name) {
  if (name == "triplet") return RevertPolicy::kTriplet;
  if (name == "best-kappa") return RevertPolicy::kBestKappa;
  throw Error(ErrorCode::kInvalidArgument, "unknown revert policy " + name);
}

const char* to_string(RevertPolicy policy) {
  return policy == RevertPolicy::kTriplet ? "triplet" : "best-kappa";
}

Mat3 measurement_covariance(const PinholeIntrinsics& k, double depth, double confidence,
                            double pixel_sigma, double beta, double epsilon, const Vec3& ray) {
  if (!(depth > 0.0)) throw Error(ErrorCode::kInvalidArgument, "depth must be positive");
  if (!(confidence > 0.0)) throw Error(ErrorCode::kInvalidArgument, "confidence must be positive");
  if (!(pixel_sigma > 0.0)) throw Error(ErrorCode::kInvalidArgument, "pixel sigma must be positive");
  const double s2 = pixel_sigma * pixel_sigma;
  Vec3 diag(depth * depth * s2 / (k.fx * k.fx), depth * depth * s2 / (k.fy * k.fy),
            std::isinf(confidence) ? 0.0 : beta / confidence);
  const Mat3 align =
      Eigen::Quaterniond::FromTwoVectors(Vec3::UnitZ(), ray.normalized()).toRotationMatrix();
  return align * diag.asDiagonal() * align.transpose() + epsilon * Mat3::Identity();
}

Mat3 covariance_update(const Mat3& prior, const Eigen::MatrixXd& jacobian,
                       const Eigen::MatrixXd& measurement_cov) {
  const long m = jacobian.rows();
  if (jacobian.cols() != 3 || measurement_cov.rows() != m || measurement_cov.cols() != m) {
    throw Error(ErrorCode::kDimensionMismatch, "covariance update dimensions inconsistent");
  }
  const Eigen::MatrixXd pj = prior * jacobian.transpose();  // 3 x m
  const Eigen::MatrixXd innovation = measurement_cov + jacobian * pj;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(innovation);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
      (ldlt.vectorD().array() <= 0.0).any()) {
    throw Error(ErrorCode::kSingularInnovation, "innovation matrix not invertible");
  }
  Mat3 posterior = prior - pj * ldlt.solve(pj.transpose());
  return 0.5 * (posterior + posterior.transpose());
}

std::vector<PointPrior> low_confidence_subset(const Pointmap& camera_points,
                                              const ConfidenceMap& fused_confidence,
                                              const ConfidenceMap& first_confidence,
                                              const PinholeIntrinsics& k, const SigmaOptions& options) {
  std::vector<std::size_t> valid;
  for (std::size_t i = 0; i < camera_points.size(); ++i) {
    if (fused_confidence[i] > 0.0 && first_confidence[i] > 0.0 && camera_points[i].norm() > 1e-9) {
      valid.push_back(i);
    }
  }
  std::stable_sort(valid.begin(), valid.end(), [&](std::size_t a, std::size_t b) {
    return fused_confidence[a] < fused_confidence[b];
  });
  valid.resize((valid.size() + 3) / 4);
  std::sort(valid.begin(), valid.end());
  const std::size_t cap = static_cast<std::size_t>(std::max(1, options.subset_cap));
  const std::size_t stride = std::max<std::size_t>(1, (valid.size() + cap - 1) / cap);

  std::vector<PointPrior> out;
  for (std::size_t n = 0; n < valid.size() && out.size() < cap; n += stride) {
    const std::size_t i = valid[n];
    const Vec3& x = camera_points[i];
    const double range = x.norm();
    Mat3 cov = measurement_covariance(k, range, first_confidence[i], options.pixel_sigma, options.beta,
                                      options.epsilon, x / range);
    cov *= first_confidence[i] / fused_confidence[i];
    Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
    const Vec3 capped = eig.eigenvalues().cwiseMin(options.cov_max);
    cov = eig.eigenvectors() * capped.asDiagonal() * eig.eigenvectors().transpose();
    out.push_back({x, 0.5 * (cov + cov.transpose())});
  }
  return out;
}

InfoGainResult information_gain(int candidate_id, const Sim3& candidate_from_keyframe,
                                const PinholeIntrinsics& candidate_k,
                                const std::vector<PointPrior>& subset, const SigmaOptions& options) {
  InfoGainResult result;
  result.candidate_id = candidate_id;
  const Mat3 sr = candidate_from_keyframe.scale * candidate_from_keyframe.rotation;
  for (const auto& prior : subset) {
    const Vec3 y = candidate_from_keyframe * prior.point;
    const auto pixel = try_psi_pi(candidate_k, y);
    if (!pixel) continue;
    if (pixel->x() < 0.0 || pixel->y() < 0.0 || pixel->x() > candidate_k.width - 1 ||
        pixel->y() > candidate_k.height - 1) {
      continue;
    }
    const double range = y.norm();
    const Mat3 jpsi = psi_ray_jacobian(y);
    const Mat3 jr = jpsi * sr;
    const Mat3 sigma_y = measurement_covariance(candidate_k, range, 1.0, options.pixel_sigma,
                                                options.beta, options.epsilon, y / range);
    // Measurement noise in ray space plus an isotropic floor.
    const Mat3 r_meas = jpsi * sigma_y * jpsi.transpose() +
                        (options.epsilon / (range * range)) * Mat3::Identity();
    Mat3 posterior;
    try {
      posterior = covariance_update(prior.prior_cov, jr, r_meas);
    } catch (const Error&) {
      continue;
    }
    const Eigen::LDLT<Mat3> prior_ldlt(prior.prior_cov);
    const Eigen::LDLT<Mat3> post_ldlt(posterior);
    if (!post_ldlt.isPositive() || (post_ldlt.vectorD().array() <= 0.0).any()) continue;
    const double log_ratio = prior_ldlt.vectorD().array().log().sum() -
                             post_ldlt.vectorD().array().log().sum();
    result.gamma += std::max(0.0, 0.5 * log_ratio);
    ++result.valid_points;
  }
  return result;
}

long numerical_rank(const Eigen::VectorXd& singular_values, long rows, long cols) {
  if (singular_values.size() == 0) return 0;
  const double smax = singular_values.maxCoeff();
  if (!(smax > 0.0)) return 0;
  const double tol = static_cast<double>(std::max(rows, cols)) * smax * 1e-10;
  return static_cast<long>((singular_values.array() > tol).count());
}

namespace {

StabilityReport finish_report(double squared_norm, long m, long rank) {
  if (m <= rank) {
    throw Error(ErrorCode::kDegenerateSystem, "residual count " + std::to_string(m) +
                                                  " does not exceed Jacobian rank " + std::to_string(rank));
  }
  StabilityReport r;
  r.residual_count = m;
  r.rank = rank;
  r.dof = m - rank;
  r.kappa = squared_norm / static_cast<double>(r.dof);
  return r;
}

}  // namespace

StabilityReport reduced_chi_square(const Eigen::VectorXd& b0, const Eigen::MatrixXd& a0) {
  if (a0.rows() != b0.size()) throw Error(ErrorCode::kDimensionMismatch, "b0 and A0 row counts differ");
  long rank = 0;
  if (a0.size() > 0) {
    Eigen::BDCSVD<Eigen::MatrixXd> svd(a0);
    rank = numerical_rank(svd.singularValues(), a0.rows(), a0.cols());
  }
  return finish_report(b0.squaredNorm(), b0.size(), rank);
}

StabilityReport reduced_chi_square_blocks(double b0_squared_norm, long residual_count,
                                          const std::vector<Eigen::MatrixXd>& grams) {
  long cols = 0;
  std::vector<double> values;
  for (const auto& g : grams) {
    cols += g.cols();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(g, Eigen::EigenvaluesOnly);
    for (long i = 0; i < eig.eigenvalues().size(); ++i) {
      values.push_back(std::sqrt(std::max(0.0, eig.eigenvalues()(i))));
    }
  }
  const Eigen::VectorXd s = Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<long>(values.size()));
  return finish_report(b0_squared_norm, residual_count, numerical_rank(s, residual_count, cols));
}

std::optional<int> WindowState::best() const {
  if (candidates.empty()) return std::nullopt;
  return candidates.front();
}

std::vector<int> WindowState::default_triplet() const {
  std::vector<int> w{current, last_keyframe};
  if (auto b = best()) w.push_back(*b);
  return w;
}

std::vector<int> WindowState::window() const {
  std::vector<int> w = default_triplet();
  w.insert(w.end(), activated.begin(), activated.end());
  return w;
}

bool WindowState::in_window(int id) const {
  const auto w = window();
  return std::find(w.begin(), w.end(), id) != w.end();
}

std::optional<int> WindowState::next_candidate() const {
  for (int c : candidates) {
    if (!in_window(c)) return c;
  }
  return std::nullopt;
}

WindowState rerank(const WindowState& state, const std::vector<InfoGainResult>& gains) {
  std::map<int, InfoGainResult> by_id;
  for (const auto& g : gains) by_id[g.candidate_id] = g;

  auto fixed = [&](int id) {
    if (std::find(state.activated.begin(), state.activated.end(), id) != state.activated.end()) return true;
    return state.best_locked && state.best() == id;
  };
  std::vector<int> free;
  for (int c : state.candidates) {
    if (!fixed(c)) free.push_back(c);
  }
  std::stable_sort(free.begin(), free.end(), [&](int a, int b) {
    const auto ga = by_id.count(a) ? by_id[a] : InfoGainResult{a, 0.0, 0, 0};
    const auto gb = by_id.count(b) ? by_id[b] : InfoGainResult{b, 0.0, 0, 0};
    if (ga.gamma != gb.gamma) return ga.gamma > gb.gamma;
    if (ga.overlap_score != gb.overlap_score) return ga.overlap_score > gb.overlap_score;
    return a > b;
  });
  WindowState out = state;
  std::size_t next = 0;
  for (auto& c : out.candidates) {
    if (!fixed(c)) c = free[next++];
  }
  return out;
}

ActivationResult adaptive_activation(const WindowState& initial, const EvaluateWindow& evaluate,
                                     const RerankWindow& rerank_fn, const SigmaOptions& options) {
  ActivationResult result;
  WindowState base = initial;
  base.activated.clear();
  base.best_locked = true;

  const StabilityReport base_report = evaluate(base.window());
  result.history.push_back({base.window(), base_report.kappa});
  result.state = base;
  result.report = base_report;
  if (base_report.kappa <= options.kappa_threshold) return result;

  WindowState current = base;
  StabilityReport current_report = base_report;
  WindowState best = base;
  StabilityReport best_report = base_report;

  while (static_cast<int>(current.window().size()) < options.window_max) {
    if (rerank_fn) current = rerank_fn(current);
    const auto next = current.next_candidate();
    if (!next) break;
    WindowState trial = current;
    trial.activated.push_back(*next);
    StabilityReport trial_report;
    try {
      trial_report = evaluate(trial.window());
    } catch (const Error&) {
      result.history.push_back({trial.window(), std::nullopt});
      break;
    }
    result.history.push_back({trial.window(), trial_report.kappa});
    if (trial_report.kappa < current_report.kappa) {
      current = trial;
      current_report = trial_report;
      if (trial_report.kappa < best_report.kappa) {
        best = trial;
        best_report = trial_report;
      }
      if (trial_report.kappa <= options.kappa_threshold) break;
      continue;
    }
    result.reverted = true;
    if (options.revert_policy == RevertPolicy::kTriplet) {
      result.state = base;
      result.report = base_report;
    } else {
      result.state = best;
      result.report = best_report;
    }
    return result;
  }
  result.state = current;
  result.report = current_report;
  return result;
}

}  // namespace pmslam
