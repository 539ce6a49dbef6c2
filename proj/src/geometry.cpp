#include "pmslam/geometry.hpp"

#include <cmath>
#include <tuple>
#include <utility>

#include <Eigen/SVD>

#include "pmslam/error.hpp"

namespace pmslam {

namespace {

constexpr double kSmallAngle = 1e-6;
constexpr double kNearPi = 1e-2;
constexpr double kOrthoTolerance = 1e-12;

constexpr double kGaussNodes[5] = {0.14887433898163122, 0.4333953941292472, 0.6794095682990244,
                                   0.8650633666889845, 0.9739065285171717};
constexpr double kGaussWeights[5] = {0.295524224714753, 0.2692667193099965, 0.219086362515982,
                                     0.14945134915058036, 0.06667134430868807};

// Integrals of e^(sigma u) sin(theta u) / theta and e^(sigma u) (1 - cos(theta u)) / theta^2
// over [0, 1] by 10-point Gauss-Legendre quadrature.
std::pair<double, double> w_coefficients_quadrature(double theta, double sigma) {
  double a = 0.0, b = 0.0;
  for (int i = 0; i < 5; ++i) {
    for (double sign : {-1.0, 1.0}) {
      const double u = 0.5 * (1.0 + sign * kGaussNodes[i]);
      const double w = 0.5 * kGaussWeights[i] * std::exp(sigma * u);
      const double half = std::sin(0.5 * theta * u) / theta;
      a += w * std::sin(theta * u) / theta;
      b += w * 2.0 * half * half;
    }
  }
  return {a, b};
}

// Integrals of e^(sigma u) u^n / n! over [0, 1] for the small-angle branch of W.
// Series in sigma below |sigma| = 1, closed form above.
double integral_exp_u(double sigma) {
  if (std::abs(sigma) < 1.0) {
    double sum = 0.0, term = 1.0;
    for (int n = 0; n < 30; ++n) {
      sum += term / (n + 2);
      term *= sigma / (n + 1);
    }
    return sum;
  }
  const double e = std::exp(sigma);
  return ((sigma - 1.0) * e + 1.0) / (sigma * sigma);
}

double integral_exp_u2_half(double sigma) {
  if (std::abs(sigma) < 1.0) {
    double sum = 0.0, term = 1.0;
    for (int n = 0; n < 30; ++n) {
      sum += term / (2.0 * (n + 3));
      term *= sigma / (n + 1);
    }
    return sum;
  }
  const double e = std::exp(sigma);
  return (e * (0.5 * sigma * sigma - sigma + 1.0) - 1.0) / (sigma * sigma * sigma);
}

double expm1_over_x(double x) { return x == 0.0 ? 1.0 : std::expm1(x) / x; }

}  // namespace

TangentSim3 TangentSim3::from_vector(const Vec7& v) {
  TangentSim3 tau;
  tau.rho = v.head<3>();
  tau.phi = v.segment<3>(3);
  tau.sigma = v(6);
  return tau;
}

Vec7 TangentSim3::vector() const {
  Vec7 v;
  v << rho, phi, sigma;
  return v;
}

Eigen::Matrix4d Sim3::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = scale * rotation;
  m.topRightCorner<3, 1>() = translation;
  return m;
}

PinholeIntrinsics PinholeIntrinsics::centered(double fx, double fy, int width, int height) {
  return {fx, fy, 0.5 * width, 0.5 * height, width, height};
}

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return m;
}

Vec3 vee(const Mat3& m) { return {m(2, 1), m(0, 2), m(1, 0)}; }

Mat3 so3_exp(const Vec3& phi) {
  const double theta = phi.norm();
  const Mat3 omega = skew(phi);
  if (theta < kSmallAngle) {
    return Mat3::Identity() + omega + 0.5 * omega * omega;
  }
  const double a = std::sin(theta) / theta;
  const double half = std::sin(0.5 * theta);
  const double b = 2.0 * half * half / (theta * theta);
  return Mat3::Identity() + a * omega + b * omega * omega;
}

Vec3 so3_log(const Mat3& rotation) {
  const double cos_theta = 0.5 * (rotation.trace() - 1.0);
  const Vec3 v = 0.5 * vee(rotation - rotation.transpose());
  const double sin_theta = v.norm();
  const double theta = std::atan2(sin_theta, cos_theta);

  if (theta < kSmallAngle) {
    return v * (1.0 + theta * theta / 6.0);
  }
  if (theta < M_PI - kNearPi) {
    return v * (theta / sin_theta);
  }

  // Near pi: the symmetric part carries the axis, the skew part only its sign.
  const Mat3 b = 0.5 * (rotation + rotation.transpose()) - cos_theta * Mat3::Identity();
  int i = 0;
  b.diagonal().maxCoeff(&i);
  Vec3 axis = b.col(i).normalized();
  if (axis.dot(v) < 0.0) {
    axis = -axis;
  } else if (axis.dot(v) == 0.0) {
    for (int k = 0; k < 3; ++k) {
      if (axis(k) != 0.0) {
        if (axis(k) < 0.0) axis = -axis;
        break;
      }
    }
  }
  return theta * axis;
}

Mat3 sim3_left_jacobian_w(const Vec3& phi, double sigma) {
  const double theta = phi.norm();
  const Mat3 omega = skew(phi);
  const Mat3 omega2 = omega * omega;
  const double c = expm1_over_x(sigma);

  double a = 0.0;
  double b = 0.0;
  if (theta < kSmallAngle) {
    a = integral_exp_u(sigma);
    b = integral_exp_u2_half(sigma);
  } else if (theta < 1.0 && std::abs(sigma) < 2.0) {
    std::tie(a, b) = w_coefficients_quadrature(theta, sigma);
  } else {
    const double e = std::exp(sigma);
    const double s = std::sin(theta);
    const double co = std::cos(theta);
    const double half = std::sin(0.5 * theta);
    const double one_minus_e_cos = 2.0 * half * half - std::expm1(sigma) * co;
    const double den = sigma * sigma + theta * theta;
    const double int_sin = (e * sigma * s + theta * one_minus_e_cos) / den;
    const double int_cos = (e * (sigma * co + theta * s) - sigma) / den;
    a = int_sin / theta;
    b = (c - int_cos) / (theta * theta);
  }
  return c * Mat3::Identity() + a * omega + b * omega2;
}

Sim3 sim3_exp(const TangentSim3& tau) {
  Sim3 t;
  t.scale = std::exp(tau.sigma);
  t.rotation = so3_exp(tau.phi);
  t.translation = sim3_left_jacobian_w(tau.phi, tau.sigma) * tau.rho;
  return t;
}

TangentSim3 sim3_log(const Sim3& transform) {
  TangentSim3 tau;
  tau.sigma = std::log(transform.scale);
  tau.phi = so3_log(transform.rotation);
  tau.rho = sim3_left_jacobian_w(tau.phi, tau.sigma).lu().solve(transform.translation);
  return tau;
}

Vec3 sim3_apply(const Sim3& transform, const Vec3& x) { return transform * x; }

Sim3 operator*(const Sim3& a, const Sim3& b) { return sim3_compose(a, b); }

Sim3 sim3_compose(const Sim3& a, const Sim3& b) {
  Sim3 c;
  c.scale = a.scale * b.scale;
  c.rotation = a.rotation * b.rotation;
  c.translation = a.scale * (a.rotation * b.translation) + a.translation;
  if (rotation_orthonormality_error(c.rotation) > kOrthoTolerance) {
    c.rotation = orthonormalize(c.rotation);
  }
  return c;
}

Sim3 sim3_inverse(const Sim3& transform) {
  Sim3 inv;
  inv.scale = 1.0 / transform.scale;
  inv.rotation = transform.rotation.transpose();
  inv.translation = -inv.scale * (inv.rotation * transform.translation);
  return inv;
}

Sim3 left_plus(const Vec7& tau, const Sim3& transform) {
  return sim3_compose(sim3_exp(TangentSim3::from_vector(tau)), transform);
}

Mat7 sim3_adjoint(const Sim3& transform) {
  Mat7 adj = Mat7::Zero();
  const Mat3& r = transform.rotation;
  adj.block<3, 3>(0, 0) = transform.scale * r;
  adj.block<3, 3>(0, 3) = skew(transform.translation) * r;
  adj.block<3, 1>(0, 6) = -transform.translation;
  adj.block<3, 3>(3, 3) = r;
  adj(6, 6) = 1.0;
  return adj;
}

Eigen::Matrix4d sim3_hat(const TangentSim3& tau) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Zero();
  m.topLeftCorner<3, 3>() = skew(tau.phi) + tau.sigma * Mat3::Identity();
  m.topRightCorner<3, 1>() = tau.rho;
  return m;
}

double rotation_orthonormality_error(const Mat3& rotation) {
  return (rotation.transpose() * rotation - Mat3::Identity()).norm();
}

Mat3 orthonormalize(const Mat3& rotation) {
  Eigen::JacobiSVD<Mat3> svd(rotation, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 r = svd.matrixU() * svd.matrixV().transpose();
  if (r.determinant() < 0.0) {
    Mat3 u = svd.matrixU();
    u.col(2) = -u.col(2);
    r = u * svd.matrixV().transpose();
  }
  return r;
}

std::optional<Vec3> try_psi_ray(const Vec3& x) {
  const double n = x.norm();
  if (!(n > 1e-12)) return std::nullopt;
  return x / n;
}

Vec3 psi_ray(const Vec3& x) {
  auto r = try_psi_ray(x);
  if (!r) throw Error(ErrorCode::kInvalidPoint, "psi_ray: point norm below 1e-12");
  return *r;
}

std::optional<Vec2> try_psi_pi(const PinholeIntrinsics& k, const Vec3& x, double z_min) {
  if (!(x.z() > z_min)) return std::nullopt;
  return Vec2(k.fx * x.x() / x.z() + k.cx, k.fy * x.y() / x.z() + k.cy);
}

Vec2 psi_pi(const PinholeIntrinsics& k, const Vec3& x, double z_min) {
  auto p = try_psi_pi(k, x, z_min);
  if (!p) throw Error(ErrorCode::kBehindCamera, "psi_pi: point behind camera");
  return *p;
}

Mat3 psi_ray_jacobian(const Vec3& x) {
  const double n = x.norm();
  const Vec3 r = x / n;
  return (Mat3::Identity() - r * r.transpose()) / n;
}

Eigen::Matrix<double, 2, 3> psi_pi_jacobian(const PinholeIntrinsics& k, const Vec3& x) {
  const double iz = 1.0 / x.z();
  Eigen::Matrix<double, 2, 3> j;
  j << k.fx * iz, 0.0, -k.fx * x.x() * iz * iz,
       0.0, k.fy * iz, -k.fy * x.y() * iz * iz;
  return j;
}

}  // namespace pmslam
