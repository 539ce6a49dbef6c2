#pragma once

#include <random>

#include "pmslam/geometry.hpp"
#include "pmslam/optimizer.hpp"

namespace pmslam::test {

inline Vec3 normal3(std::mt19937_64& rng, double sigma = 1.0) {
  std::normal_distribution<double> n(0.0, sigma);
  return {n(rng), n(rng), n(rng)};
}

inline Vec7 random_tangent(std::mt19937_64& rng, double max_norm) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, max_norm);
  Vec7 v;
  for (int i = 0; i < 7; ++i) v(i) = n(rng);
  return v.normalized() * u(rng);
}

inline Sim3 random_sim3(std::mt19937_64& rng, double max_norm = 1.0) {
  return sim3_exp(TangentSim3::from_vector(random_tangent(rng, max_norm)));
}

inline PinholeIntrinsics test_intrinsics() { return PinholeIntrinsics::centered(60.0, 60.0, 64, 64); }

/// Points in front of the source camera whose images under `source_from_target` stay in front.
inline PairTerms exact_pairs(std::mt19937_64& rng, const Sim3& source_from_target, int count) {
  PairTerms terms;
  terms.intrinsics = test_intrinsics();
  std::uniform_real_distribution<double> lateral(-1.0, 1.0), depth(3.0, 6.0);
  const Sim3 target_from_source = sim3_inverse(source_from_target);
  while (static_cast<int>(terms.pairs.size()) < count) {
    const Vec3 x_a(lateral(rng), lateral(rng), depth(rng));
    const Vec3 x_b = target_from_source * x_a;
    if (x_b.z() < 0.5) continue;
    terms.pairs.push_back({x_a, x_b, 1.0});
  }
  return terms;
}

inline double max_abs_diff(const Sim3& a, const Sim3& b) {
  return std::max({std::abs(a.scale - b.scale), (a.rotation - b.rotation).cwiseAbs().maxCoeff(),
                   (a.translation - b.translation).cwiseAbs().maxCoeff()});
}

}  // namespace pmslam::test
