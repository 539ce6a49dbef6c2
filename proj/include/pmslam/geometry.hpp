#pragma once

#include <optional>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace pmslam {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec7 = Eigen::Matrix<double, 7, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using Mat7 = Eigen::Matrix<double, 7, 7>;

/// Element of sim(3). Vector layout is [rho; phi; sigma].
struct TangentSim3 {
  Vec3 rho = Vec3::Zero();
  Vec3 phi = Vec3::Zero();
  double sigma = 0.0;

  static TangentSim3 from_vector(const Vec7& v);
  Vec7 vector() const;
};

/// Similarity transform x -> scale * rotation * x + translation.
struct Sim3 {
  double scale = 1.0;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static Sim3 identity() { return {}; }

  Vec3 operator*(const Vec3& x) const {
    return scale * (rotation * x) + translation;
  }

  Eigen::Matrix4d matrix() const;
  Eigen::Quaterniond quaternion() const { return Eigen::Quaterniond(rotation).normalized(); }
};

Sim3 operator*(const Sim3& a, const Sim3& b);

struct PinholeIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;

  double mean_focal() const { return 0.5 * (fx + fy); }

  /// Intrinsics with the principal point pinned to the image center.
  static PinholeIntrinsics centered(double fx, double fy, int width, int height);
};

Mat3 skew(const Vec3& v);
Vec3 vee(const Mat3& m);

Mat3 so3_exp(const Vec3& phi);
/// Canonical log with |phi| in [0, pi]. At exactly pi the axis sign is
/// chosen so that its first nonzero component is positive.
Vec3 so3_log(const Mat3& rotation);

/// The matrix W with exp(tau).translation = W * rho.
Mat3 sim3_left_jacobian_w(const Vec3& phi, double sigma);

Sim3 sim3_exp(const TangentSim3& tau);
TangentSim3 sim3_log(const Sim3& transform);
Vec3 sim3_apply(const Sim3& transform, const Vec3& x);
Sim3 sim3_compose(const Sim3& a, const Sim3& b);
Sim3 sim3_inverse(const Sim3& transform);

/// Left-plus update exp(tau) * transform.
Sim3 left_plus(const Vec7& tau, const Sim3& transform);

/// Adjoint with exp(adjoint(T) * tau) = T * exp(tau) * T^-1.
Mat7 sim3_adjoint(const Sim3& transform);

/// 4x4 matrix representation of a sim(3) tangent (the "hat" operator).
Eigen::Matrix4d sim3_hat(const TangentSim3& tau);

double rotation_orthonormality_error(const Mat3& rotation);
Mat3 orthonormalize(const Mat3& rotation);

inline constexpr double kDefaultZMin = 1e-6;

/// Unit ray through a point. Throws kInvalidPoint for near-zero points.
Vec3 psi_ray(const Vec3& x);
std::optional<Vec3> try_psi_ray(const Vec3& x);

/// Pinhole projection. Throws kBehindCamera when x.z <= z_min.
Vec2 psi_pi(const PinholeIntrinsics& k, const Vec3& x, double z_min = kDefaultZMin);
std::optional<Vec2> try_psi_pi(const PinholeIntrinsics& k, const Vec3& x,
                               double z_min = kDefaultZMin);

/// d psi_ray / dx.
Mat3 psi_ray_jacobian(const Vec3& x);
/// d psi_pi / dx.
Eigen::Matrix<double, 2, 3> psi_pi_jacobian(const PinholeIntrinsics& k, const Vec3& x);

}  // namespace pmslam
