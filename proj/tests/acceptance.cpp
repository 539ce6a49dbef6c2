#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <unsupported/Eigen/MatrixFunctions>

#include "pmslam/ablation.hpp"
#include "pmslam/error.hpp"
#include "pmslam/optimizer.hpp"
#include "pmslam/pipeline.hpp"
#include "pmslam/sigma.hpp"
#include "run_support.hpp"
#include "support.hpp"

using namespace pmslam;
using pmslam::test::config_of;
using pmslam::test::run_synthetic;

namespace {

constexpr double kRoundtripTol = 1e-8;
constexpr double kMatrixExpTol = 1e-9;
constexpr double kLieSuiteSeconds = 5.0;
constexpr double kJacobianTol = 1e-5;
constexpr double kWoodburyTol = 1e-9;
constexpr double kKappaLow = 0.94;
constexpr double kKappaHigh = 1.06;
constexpr double kCleanAteTol = 1e-6;
constexpr double kCleanKappaTol = 1e-6;
constexpr double kCleanSeconds = 60.0;
constexpr double kNoisyAteFraction = 0.02;
constexpr double kClosureRatio = 0.2;
constexpr double kSaturation = 0.10;
constexpr double kSolverTol = 1e-6;
constexpr double kScaleTol = 1e-8;
const std::vector<std::uint64_t> kSeeds{0, 1, 2, 3, 4};

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

Eigen::Matrix4d homogeneous(const Sim3& t) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = t.scale * t.rotation;
  m.topRightCorner<3, 1>() = t.translation;
  return m;
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

Verdict lie_group() {
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(1);
  double roundtrip = 0.0, oracle = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const Vec7 tau = pmslam::test::random_tangent(rng, 2.0);
    const TangentSim3 t = TangentSim3::from_vector(tau);
    const Sim3 e = sim3_exp(t);
    roundtrip = std::max(roundtrip, (sim3_log(e).vector() - tau).norm());
    oracle = std::max(oracle, (homogeneous(e) - sim3_hat(t).exp()).cwiseAbs().maxCoeff());
  }
  const double secs = seconds_since(start);
  char buf[160];
  std::snprintf(buf, sizeof(buf), "roundtrip %.2e, matrix-exp %.2e, %.2f s", roundtrip, oracle, secs);
  return {roundtrip < kRoundtripTol && oracle < kMatrixExpTol && secs < kLieSuiteSeconds, buf};
}

Verdict jacobians() {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> f(40, 200), lateral(-1, 1), depth(1.5, 6);
  double worst = 0.0;
  int tested = 0;
  while (tested < 200) {
    const Sim3 t = pmslam::test::random_sim3(rng, 0.6);
    const PinholeIntrinsics k = PinholeIntrinsics::centered(f(rng), f(rng), 64, 48);
    const Vec3 x_b(lateral(rng), lateral(rng), depth(rng));
    if ((t * x_b).z() < 0.5) continue;
    const Vec3 x_a = t * x_b + 0.05 * pmslam::test::normal3(rng);
    const Mat57 j = residual_jacobian(x_b, t, k);
    Mat57 fd;
    const double h = 1e-6;
    for (int c = 0; c < 7; ++c) {
      Vec7 d = Vec7::Zero();
      d(c) = h;
      fd.col(c) = (hybrid_residual(x_a, x_b, left_plus(d, t), k).value -
                   hybrid_residual(x_a, x_b, left_plus(-d, t), k).value) / (2 * h);
    }
    worst = std::max(worst, (j - fd).cwiseAbs().maxCoeff() / j.cwiseAbs().maxCoeff());
    ++tested;
  }
  char buf[120];
  std::snprintf(buf, sizeof(buf), "%d configurations, max relative error %.2e", tested, worst);
  return {worst < kJacobianTol, buf};
}

Verdict woodbury() {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_int_distribution<int> rows(1, 6);
  auto spd = [&](int n) {
    Eigen::MatrixXd a(n, n);
    for (int i = 0; i < a.size(); ++i) a(i) = g(rng);
    return Eigen::MatrixXd(a * a.transpose() + 0.1 * Eigen::MatrixXd::Identity(n, n));
  };
  double worst = 0.0, min_eig = 1e300, min_gamma = 1e300;
  for (int i = 0; i < 1000; ++i) {
    const Mat3 prior = spd(3);
    const int m = rows(rng);
    Eigen::MatrixXd j(m, 3);
    for (int e = 0; e < j.size(); ++e) j(e) = g(rng);
    const Eigen::MatrixXd s = spd(m);
    const Mat3 post = covariance_update(prior, j, s);
    const Mat3 oracle = (Mat3(prior.inverse()) + j.transpose() * s.inverse() * j).inverse();
    worst = std::max(worst, (post - oracle).norm() / oracle.norm());
    min_eig = std::min(min_eig, Eigen::SelfAdjointEigenSolver<Mat3>(prior - post).eigenvalues().minCoeff() / prior.norm());
    min_gamma = std::min(min_gamma, 0.5 * std::log(prior.determinant() / post.determinant()));
  }
  const PinholeIntrinsics k = pmslam::test::test_intrinsics();
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<PointPrior> subset;
    for (int i = 0; i < 32; ++i) {
      Vec3 x = pmslam::test::normal3(rng, 0.5);
      x.z() += 3.0;
      subset.push_back({x, measurement_covariance(k, x.norm(), 0.3, 1.0, 0.01, 1e-9, x.normalized())});
    }
    min_gamma = std::min(min_gamma, information_gain(0, pmslam::test::random_sim3(rng, 0.3), k, subset, {}).gamma);
  }
  char buf[160];
  std::snprintf(buf, sizeof(buf), "max relative error %.2e, min eig(P-P+) %.2e, min gamma %.2e", worst, min_eig,
                min_gamma);
  return {worst < kWoodburyTol && min_eig > -1e-12 && min_gamma >= 0.0, buf};
}

Verdict chi_square() {
  int inside = 0;
  for (int seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    Eigen::VectorXd b(10000);
    for (int i = 0; i < b.size(); ++i) b(i) = g(rng);
    Eigen::MatrixXd a(10000, 14);
    for (int i = 0; i < a.size(); ++i) a(i) = g(rng);
    const StabilityReport r = reduced_chi_square(b, a);
    if (r.rank == 14 && r.kappa >= kKappaLow && r.kappa <= kKappaHigh) ++inside;
  }
  const double zero = reduced_chi_square(Eigen::VectorXd::Zero(100), Eigen::MatrixXd::Random(100, 14)).kappa;
  char buf[120];
  std::snprintf(buf, sizeof(buf), "%d/100 seeds in [%.2f, %.2f], kappa(0) = %g", inside, kKappaLow, kKappaHigh, zero);
  return {inside >= 99 && zero == 0.0, buf};
}

Verdict noise_free() {
  const auto start = std::chrono::steady_clock::now();
  const auto out = run_synthetic("room_sweep", config_of({{"frames", "100"}}), 0);
  const double secs = seconds_since(start);
  const double ate = out.report.ate ? out.report.ate->rmse : INFINITY;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "ATE %.2e, max kappa %.2e, %.1f s", ate, out.report.max_kappa, secs);
  return {ate < kCleanAteTol && out.report.max_kappa < kCleanKappaTol && secs < kCleanSeconds, buf};
}

Config noisy_config(int frames) {
  return config_of({{"frames", std::to_string(frames)},
                    {"noise_depth_sigma_rel", "0.01"},
                    {"noise_window_scale_sigma", "0.05"}});
}

Verdict noisy() {
  double sum = 0.0;
  for (auto seed : kSeeds) {
    const auto out = run_synthetic("room_sweep", noisy_config(200), seed);
    sum += out.report.ate ? out.report.ate->rmse / out.report.extent : INFINITY;
  }
  const double mean = sum / kSeeds.size();
  char buf[120];
  std::snprintf(buf, sizeof(buf), "mean ATE %.4f%% of extent", 100.0 * mean);
  return {mean < kNoisyAteFraction, buf};
}

Verdict loop_closure() {
  Config c = noisy_config(120);
  c.set("noise_rotation_bias", "0.1");
  double worst = 0.0, with_sum = 0.0, without_sum = 0.0;
  for (auto seed : kSeeds) {
    Config off = c;
    off.set("loop_closure", "false");
    const auto on_run = run_synthetic("room_loop", c, seed);
    const auto off_run = run_synthetic("room_loop", off, seed);
    const double ratio = *on_run.report.closure_error / *off_run.report.closure_error;
    worst = std::max(worst, ratio);
    with_sum += *on_run.report.closure_error;
    without_sum += *off_run.report.closure_error;
  }
  char buf[160];
  std::snprintf(buf, sizeof(buf), "closure %.4g with PGO vs %.4g odometry (mean), worst ratio %.3f",
                with_sum / kSeeds.size(), without_sum / kSeeds.size(), worst);
  return {worst <= kClosureRatio, buf};
}

Config ablation_config() {
  Config c = noisy_config(100);
  c.set("scene", "wide_baseline");
  return c;
}

Verdict views() {
  const AblationTable t = sweep_views(ablation_config(), kSeeds);
  const double sigma5 = t.cell("sigma", 5).mean, recency5 = t.cell("recency", 5).mean;
  const double sigma6 = t.cell("sigma", 6).mean;
  const double change = std::abs(sigma6 - sigma5) / sigma5;
  char buf[200];
  std::snprintf(buf, sizeof(buf), "sigma@5 %.5g, recency@5 %.5g, sigma 5->6 change %.2f%%", sigma5, recency5,
                100.0 * change);
  return {sigma5 <= recency5 && change < kSaturation, buf};
}

Verdict residuals() {
  const AblationTable t = sweep_residuals(ablation_config(), kSeeds);
  const double hybrid = t.cell("hybrid", 5).mean, ray = t.cell("ray", 5).mean,
               projection = t.cell("projection", 5).mean;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "hybrid %.6g, ray %.6g, projection %.6g", hybrid, ray, projection);
  return {hybrid <= std::min(ray, projection), buf};
}

Verdict determinism() {
  const Config c = noisy_config(40);
  const auto a = run_synthetic("room_sweep", c, 7);
  const auto b = run_synthetic("room_sweep", c, 7);
  const std::string pa = "acceptance_trajectory_a.txt", pb = "acceptance_trajectory_b.txt";
  export_trajectory(pa, a.trajectory);
  export_trajectory(pb, b.trajectory);
  auto slurp = [](const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    std::string s;
    char chunk[4096];
    std::size_t n;
    while (f && (n = std::fread(chunk, 1, sizeof(chunk), f)) > 0) s.append(chunk, n);
    if (f) std::fclose(f);
    return s;
  };
  const std::string sa = slurp(pa), sb = slurp(pb);
  std::remove(pa.c_str());
  std::remove(pb.c_str());
  return {!sa.empty() && sa == sb, std::to_string(sa.size()) + " bytes, " + (sa == sb ? "identical" : "different")};
}

Verdict solver() {
  auto motion = [](std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    Sim3 t;
    t.rotation = so3_exp(0.1 * Vec3(g(rng), g(rng), g(rng)));
    t.translation = 0.3 * Vec3(g(rng), g(rng), 0.3 * g(rng));
    t.scale = std::exp(0.2 * g(rng));
    return t;
  };
  auto chain_of = [](const std::vector<Sim3>& truth, std::mt19937_64& rng) {
    WindowChain chain;
    for (std::size_t i = 0; i <= truth.size(); ++i) chain.frames.push_back(static_cast<int>(i));
    chain.transforms = truth;
    for (const Sim3& t : truth) chain.terms.push_back(pmslam::test::exact_pairs(rng, t, 300));
    return chain;
  };
  double two = 0.0, four = 0.0;
  for (int seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(100 + seed);
    const std::vector<Sim3> t2{motion(rng)};
    WindowChain c2 = chain_of(t2, rng);
    c2.transforms[0] = left_plus(pmslam::test::random_tangent(rng, 0.2), t2[0]);
    two = std::max(two, pmslam::test::max_abs_diff(lm_irls_solve(c2, {}).chain.transforms[0], t2[0]));

    const std::vector<Sim3> t4{motion(rng), motion(rng), motion(rng)};
    WindowChain c4 = chain_of(t4, rng);
    for (auto& t : c4.transforms) t = left_plus(pmslam::test::random_tangent(rng, 0.2), t);
    const SolveResult r4 = lm_irls_solve(c4, {});
    for (std::size_t p = 0; p < t4.size(); ++p) {
      four = std::max(four, pmslam::test::max_abs_diff(r4.chain.transforms[p], t4[p]));
    }
  }
  std::mt19937_64 rng(7);
  Sim3 scale_truth;
  scale_truth.scale = 1.7;
  WindowChain cs = chain_of({scale_truth}, rng);
  cs.transforms[0] = Sim3::identity();
  const double scale_err = pmslam::test::max_abs_diff(lm_irls_solve(cs, {}).chain.transforms[0], scale_truth);
  char buf[160];
  std::snprintf(buf, sizeof(buf), "two-frame %.2e, four-frame %.2e, scale-only %.2e", two, four, scale_err);
  return {two < kSolverTol && four < kSolverTol && scale_err < kScaleTol, buf};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"lie group exp/log", lie_group},
      {"residual Jacobians", jacobians},
      {"covariance update / Woodbury", woodbury},
      {"chi-square calibration", chi_square},
      {"noise-free end-to-end", noise_free},
      {"noisy end-to-end", noisy},
      {"loop closure", loop_closure},
      {"view-count ordering", views},
      {"residual-mode ordering", residuals},
      {"determinism", determinism},
      {"solver recovery", solver},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    if (!v.pass) ++failed;
    std::printf("%s %2zu %s: %s\n", v.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), v.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
