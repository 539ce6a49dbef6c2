#include "pmslam/optimizer.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Cholesky>

#include "pmslam/error.hpp"

namespace pmslam {

ResidualMode parse_residual_mode(const std::string& name) {
  if (name == "hybrid") return ResidualMode::kHybrid;
  if (name == "ray") return ResidualMode::kRay;
  if (name == "projection") return ResidualMode::kProjection;
  throw Error(ErrorCode::kInvalidArgument, "unknown residual mode " + name);
}

const char* to_string(ResidualMode mode) {
  switch (mode) {
    case ResidualMode::kHybrid: return "hybrid";
    case ResidualMode::kRay: return "ray";
    case ResidualMode::kProjection: return "projection";
  }
  return "hybrid";
}

WeightConvention parse_weight_convention(const std::string& name) {
  if (name == "multiply") return WeightConvention::kMultiply;
  if (name == "divide") return WeightConvention::kDivide;
  throw Error(ErrorCode::kInvalidArgument, "unknown weight convention " + name);
}

LambdaPixMode parse_lambda_pix_mode(const std::string& name) {
  if (name == "inverse-focal") return LambdaPixMode::kInverseFocal;
  if (name == "unit") return LambdaPixMode::kUnit;
  throw Error(ErrorCode::kInvalidArgument, "unknown lambda_pix mode " + name);
}

double lambda_pix(const PinholeIntrinsics& k, LambdaPixMode mode) {
  return mode == LambdaPixMode::kUnit ? 1.0 : 1.0 / k.mean_focal();
}

Eigen::Matrix<double, 3, 7> point_jacobian(const Vec3& y) {
  Eigen::Matrix<double, 3, 7> j;
  j.block<3, 3>(0, 0) = Mat3::Identity();
  j.block<3, 3>(0, 3) = -skew(y);
  j.col(6) = y;
  return j;
}

HybridResidual hybrid_residual(const Vec3& x_a, const Vec3& x_b, const Sim3& t, const PinholeIntrinsics& k,
                               double z_min) {
  const Vec3 y = t * x_b;
  HybridResidual out;
  out.value.head<3>() = psi_ray(x_a) - psi_ray(y);
  const auto pa = try_psi_pi(k, x_a, z_min);
  const auto pb = try_psi_pi(k, y, z_min);
  if (pa && pb) {
    out.value.tail<2>() = (1.0 / k.mean_focal()) * (*pa - *pb);
  } else {
    out.pixel_active = false;
  }
  return out;
}

Mat57 residual_jacobian(const Vec3& x_b, const Sim3& t, const PinholeIntrinsics& k, double z_min) {
  const Vec3 y = t * x_b;
  const Eigen::Matrix<double, 3, 7> dy = point_jacobian(y);
  Mat57 j = Mat57::Zero();
  j.topRows<3>() = -psi_ray_jacobian(y) * dy;
  if (y.z() > z_min) j.bottomRows<2>() = -(1.0 / k.mean_focal()) * psi_pi_jacobian(k, y) * dy;
  return j;
}

std::vector<Sim3> WindowChain::absolute_poses() const {
  std::vector<Sim3> out{anchor};
  for (const auto& t : transforms) out.push_back(out.back() * t);
  return out;
}

void WindowChain::validate() const {
  if (frames.size() < 2) throw Error(ErrorCode::kInvalidArgument, "chain needs at least 2 frames");
  if (transforms.size() + 1 != frames.size() || terms.size() != transforms.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "chain transforms/terms do not match frames");
  }
}

double huber_weight(double norm, double delta) { return norm <= delta ? 1.0 : delta / norm; }

double huber_cost(double norm, double delta) {
  return norm <= delta ? 0.5 * norm * norm : delta * (norm - 0.5 * delta);
}

Eigen::MatrixXd ResidualSystem::dense() const {
  const long cols = 7 * static_cast<long>(blocks.size());
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(rows(), cols);
  for (std::size_t p = 0; p < blocks.size(); ++p) {
    a.block(row_offsets[p], 7 * static_cast<long>(p), blocks[p].rows(), 7) = blocks[p];
  }
  return a;
}

std::vector<Eigen::MatrixXd> ResidualSystem::grams() const {
  std::vector<Eigen::MatrixXd> out;
  for (const auto& b : blocks) out.push_back(b.transpose() * b);
  return out;
}

StabilityReport ResidualSystem::report() const {
  return reduced_chi_square_blocks(b0.squaredNorm(), active_rows, grams());
}

WhitenedTerm whiten_term(const PointPair& pair, const Sim3& t, const PinholeIntrinsics& k,
                         const ResidualOptions& options, bool with_jacobian) {
  WhitenedTerm e;
  const Vec3 y = t * pair.target;
  const auto ra = try_psi_ray(pair.source);
  const auto rb = try_psi_ray(y);
  if (!ra || !rb || !(pair.weight > 0.0)) return e;
  const double lam = lambda_pix(k, options.lambda_pix_mode);
  const auto pa = try_psi_pi(k, pair.source, options.z_min);
  const auto pb = try_psi_pi(k, y, options.z_min);
  const bool use_ray = options.mode != ResidualMode::kProjection;
  const bool use_pix = options.mode != ResidualMode::kRay && pa && pb;
  if (!use_ray && !use_pix) return e;

  const double conf_scale =
      options.weight_convention == WeightConvention::kMultiply ? std::sqrt(pair.weight) : 1.0 / pair.weight;
  const double scale = conf_scale * k.mean_focal() / options.residual_sigma_px;

  Eigen::Matrix<double, 3, 7> dy;
  if (with_jacobian) dy = point_jacobian(y);
  if (use_ray) {
    e.row.head<3>() = scale * (*ra - *rb);
    if (with_jacobian) e.jac.topRows<3>() = -scale * psi_ray_jacobian(y) * dy;
    e.active[0] = e.active[1] = e.active[2] = 1;
  }
  if (use_pix) {
    e.row.tail<2>() = scale * lam * (*pa - *pb);
    if (with_jacobian) e.jac.bottomRows<2>() = -scale * lam * psi_pi_jacobian(k, y) * dy;
    e.active[3] = e.active[4] = 1;
  }
  e.ok = true;
  return e;
}

namespace {

constexpr double kInvalidTermNorm = 1e6;

void check_counts(const WindowChain& chain, const ResidualOptions& options) {
  for (std::size_t p = 0; p < chain.terms.size(); ++p) {
    if (static_cast<int>(chain.terms[p].pairs.size()) < options.min_correspondences) {
      throw Error(ErrorCode::kDegenerateSystem,
                  "pair (" + std::to_string(chain.frames[p]) + ", " + std::to_string(chain.frames[p + 1]) +
                      ") has " + std::to_string(chain.terms[p].pairs.size()) + " correspondences");
    }
  }
}

}  // namespace

ResidualSystem build_system(const WindowChain& chain, const ResidualOptions& options) {
  chain.validate();
  check_counts(chain, options);
  ResidualSystem sys;
  long total = 0;
  for (const auto& t : chain.terms) total += 5 * static_cast<long>(t.pairs.size());
  sys.b0 = Eigen::VectorXd::Zero(total);
  long offset = 0;
  for (std::size_t p = 0; p < chain.terms.size(); ++p) {
    const auto& terms = chain.terms[p];
    const long n = static_cast<long>(terms.pairs.size());
    Eigen::MatrixXd block = Eigen::MatrixXd::Zero(5 * n, 7);
    std::vector<double> weights(static_cast<std::size_t>(n), 0.0);
    std::vector<char> active(static_cast<std::size_t>(5 * n), 0);
    for (long i = 0; i < n; ++i) {
      const WhitenedTerm e = whiten_term(terms.pairs[static_cast<std::size_t>(i)], chain.transforms[p],
                                       terms.intrinsics, options, true);
      if (!e.ok) continue;
      const double norm = e.row.norm();
      const double hw = huber_weight(norm, options.huber_delta);
      const double sw = std::sqrt(hw);
      weights[static_cast<std::size_t>(i)] = hw;
      sys.b0.segment<5>(offset + 5 * i) = sw * e.row;
      block.block<5, 7>(5 * i, 0) = sw * e.jac;
      for (int r = 0; r < 5; ++r) {
        active[static_cast<std::size_t>(5 * i + r)] = e.active[static_cast<std::size_t>(r)];
        sys.active_rows += e.active[static_cast<std::size_t>(r)];
      }
      sys.robust_cost += huber_cost(norm, options.huber_delta);
    }
    sys.row_offsets.push_back(offset);
    sys.blocks.push_back(std::move(block));
    sys.irls_weights.push_back(std::move(weights));
    sys.row_active.push_back(std::move(active));
    offset += 5 * n;
  }
  return sys;
}

double term_cost(const PointPair& pair, const Sim3& t, const PinholeIntrinsics& k, const ResidualOptions& options) {
  const WhitenedTerm e = whiten_term(pair, t, k, options, false);
  if (e.ok) return huber_cost(e.row.norm(), options.huber_delta);
  if (pair.weight > 0.0 && try_psi_ray(pair.source)) return huber_cost(kInvalidTermNorm, options.huber_delta);
  return 0.0;
}

double robust_cost(const WindowChain& chain, const ResidualOptions& options) {
  double cost = 0.0;
  for (std::size_t p = 0; p < chain.terms.size(); ++p) {
    for (const auto& pair : chain.terms[p].pairs) {
      cost += term_cost(pair, chain.transforms[p], chain.terms[p].intrinsics, options);
    }
  }
  return cost;
}

Sim3 align_pair_scale(const PairTerms& terms, const Sim3& t) {
  std::vector<double> ratios;
  ratios.reserve(terms.pairs.size());
  for (const auto& pair : terms.pairs) {
    if (!(pair.weight > 0.0)) continue;
    const double a = pair.source.norm();
    const double b = (t * pair.target).norm();
    if (a > 0.0 && b > 0.0 && std::isfinite(a / b)) ratios.push_back(a / b);
  }
  if (ratios.empty()) return t;
  auto mid = ratios.begin() + static_cast<long>(ratios.size() / 2);
  std::nth_element(ratios.begin(), mid, ratios.end());
  Sim3 s;
  s.scale = *mid;
  return s * t;
}

SolveResult lm_irls_solve(const WindowChain& chain, const ResidualOptions& options, const LmOptions& lm) {
  chain.validate();
  check_counts(chain, options);
  SolveResult result;
  result.chain = chain;
  for (std::size_t p = 0; p < chain.transforms.size(); ++p) {
    result.chain.transforms[p] = align_pair_scale(chain.terms[p], chain.transforms[p]);
  }
  double lambda = lm.lambda0;

  ResidualSystem sys = build_system(result.chain, options);
  double cost = robust_cost(result.chain, options);
  result.cost_history.push_back(cost);

  const std::size_t pairs = chain.transforms.size();
  for (int iter = 0; iter < lm.max_iterations && cost > 0.0; ++iter) {
    ++result.iterations;
    std::vector<Mat7> h(pairs);
    std::vector<Vec7> g(pairs);
    for (std::size_t p = 0; p < pairs; ++p) {
      const auto& b = sys.blocks[p];
      const auto r = sys.b0.segment(sys.row_offsets[p], b.rows());
      h[p] = b.transpose() * b;
      g[p] = b.transpose() * r;
    }
    bool accepted = false;
    bool tiny = false;
    while (lambda <= lm.lambda_max) {
      WindowChain trial = result.chain;
      double max_step = 0.0;
      for (std::size_t p = 0; p < pairs; ++p) {
        Mat6 damped = h[p].topLeftCorner<6, 6>();
        for (int d = 0; d < 6; ++d) damped(d, d) += lambda * std::max(h[p](d, d), 1e-12);
        Vec7 tau = Vec7::Zero();
        tau.head<6>() = -damped.ldlt().solve(g[p].head<6>());
        if (!tau.allFinite()) throw Error(ErrorCode::kSingularNormalEquations, "non-finite LM step");
        max_step = std::max(max_step, tau.norm());
        trial.transforms[p] = left_plus(tau, trial.transforms[p]);
      }
      if (max_step < lm.min_step) {
        tiny = true;
        break;
      }
      const double trial_cost = robust_cost(trial, options);
      if (trial_cost < cost) {
        result.chain = std::move(trial);
        cost = trial_cost;
        lambda /= 10.0;
        accepted = true;
        ++result.accepted_steps;
        result.cost_history.push_back(cost);
        break;
      }
      lambda *= 10.0;
    }
    if (tiny) {
      result.converged = true;
      break;
    }
    if (!accepted) {
      if (result.accepted_steps == 0) {
        throw Error(ErrorCode::kNoProgress, "LM damping overflow without an accepted step");
      }
      result.converged = true;
      break;
    }
    sys = build_system(result.chain, options);
  }
  if (cost == 0.0) result.converged = true;
  for (std::size_t p = 0; p < pairs; ++p) {
    result.chain.transforms[p] = align_pair_scale(result.chain.terms[p], result.chain.transforms[p]);
  }
  sys = build_system(result.chain, options);
  result.report = sys.report();
  return result;
}

}  // namespace pmslam
