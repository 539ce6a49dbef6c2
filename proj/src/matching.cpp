#include "pmslam/matching.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/LU>

#include "pmslam/error.hpp"

namespace pmslam {

int Match::target_pixel_row() const { return static_cast<int>(std::lround(target_row)); }
int Match::target_pixel_col() const { return static_cast<int>(std::lround(target_col)); }

namespace {

constexpr double kOffsetTol = 1e-9;
constexpr double kStepTol = 1e-9;  // px

double ray_angle(const Vec3& a, const Vec3& b) {
  return std::atan2(a.cross(b).norm(), a.dot(b));
}

/// Per-pixel (u/z, v/z, 1/z) in camera coordinates.
struct InverseDepthMap {
  int height = 0;
  int width = 0;
  std::vector<Vec3> values;
  std::vector<char> valid;

  InverseDepthMap(const Pointmap& points, const ConfidenceMap& confidence)
      : height(points.height()), width(points.width()), values(points.size()), valid(points.size(), 0) {
    for (std::size_t i = 0; i < points.size(); ++i) {
      const Vec3& x = points[i];
      if (confidence[i] > 0.0 && x.z() > 0.0 && x.allFinite()) {
        values[i] = Vec3(x.x() / x.z(), x.y() / x.z(), 1.0 / x.z());
        valid[i] = 1;
      }
    }
  }

  std::size_t idx(int r, int c) const { return static_cast<std::size_t>(r) * width + c; }

  struct Sample {
    Vec3 point;
    Eigen::Matrix<double, 3, 2> d_point;  // d point / d(row, col)
    int r0, c0;
    double fr, fc;
  };

  std::optional<Sample> sample(double row, double col) const {
    if (height < 1 || width < 1) return std::nullopt;
    if (row < 0.0 || col < 0.0 || row > height - 1 || col > width - 1) return std::nullopt;
    const int r0 = std::clamp(static_cast<int>(std::floor(row)), 0, std::max(0, height - 2));
    const int c0 = std::clamp(static_cast<int>(std::floor(col)), 0, std::max(0, width - 2));
    const double fr = row - r0;
    const double fc = col - c0;
    const double w[2][2] = {{(1 - fr) * (1 - fc), (1 - fr) * fc}, {fr * (1 - fc), fr * fc}};
    Vec3 f[2][2];
    for (int dr = 0; dr < 2; ++dr) {
      for (int dc = 0; dc < 2; ++dc) {
        const int r = std::min(r0 + dr, height - 1);
        const int c = std::min(c0 + dc, width - 1);
        if (w[dr][dc] == 0.0) {
          f[dr][dc] = valid[idx(r, c)] ? values[idx(r, c)] : Vec3::Zero();
          continue;
        }
        if (!valid[idx(r, c)]) return std::nullopt;
        f[dr][dc] = values[idx(r, c)];
      }
    }
    const Vec3 m = w[0][0] * f[0][0] + w[0][1] * f[0][1] + w[1][0] * f[1][0] + w[1][1] * f[1][1];
    if (!(m.z() > 0.0)) return std::nullopt;
    const Vec3 d_row = (f[1][0] - f[0][0]) * (1 - fc) + (f[1][1] - f[0][1]) * fc;
    const Vec3 d_col = (f[0][1] - f[0][0]) * (1 - fr) + (f[1][1] - f[1][0]) * fr;
    const double q = m.z();
    Sample s;
    s.point = Vec3(m.x() / q, m.y() / q, 1.0 / q);
    Mat3 d_m;  // d point / d (un, vn, q)
    d_m << 1.0 / q, 0.0, -m.x() / (q * q),
           0.0, 1.0 / q, -m.y() / (q * q),
           0.0, 0.0, -1.0 / (q * q);
    s.d_point.col(0) = d_m * d_row;
    s.d_point.col(1) = d_m * d_col;
    s.r0 = r0;
    s.c0 = c0;
    s.fr = fr;
    s.fc = fc;
    return s;
  }

  /// Departure of the inverse depth from a plane around one cell: bilinear
  /// cross term and second differences through the corners, over the mean.
  std::optional<double> crease(int r0, int c0) const {
    if (r0 < 0 || c0 < 0 || r0 + 1 >= height || c0 + 1 >= width) return std::nullopt;
    auto q = [&](int r, int c) -> std::optional<double> {
      if (r < 0 || c < 0 || r >= height || c >= width || !valid[idx(r, c)]) return std::nullopt;
      return values[idx(r, c)].z();
    };
    const auto q00 = q(r0, c0), q01 = q(r0, c0 + 1), q10 = q(r0 + 1, c0), q11 = q(r0 + 1, c0 + 1);
    if (!(q00 && q01 && q10 && q11)) return std::nullopt;
    double g = std::abs(*q00 + *q11 - *q01 - *q10);
    auto second = [&](std::optional<double> a, std::optional<double> b, std::optional<double> c) {
      if (a && b && c) g = std::max(g, std::abs(*a - 2.0 * *b + *c));
    };
    for (int c = c0; c <= c0 + 1; ++c) {
      second(q(r0 - 1, c), q(r0, c), q(r0 + 1, c));
      second(q(r0, c), q(r0 + 1, c), q(r0 + 2, c));
    }
    for (int r = r0; r <= r0 + 1; ++r) {
      second(q(r, c0 - 1), q(r, c0), q(r, c0 + 1));
      second(q(r, c0), q(r, c0 + 1), q(r, c0 + 2));
    }
    return g / (0.25 * (*q00 + *q01 + *q10 + *q11));
  }
};

}  // namespace

std::optional<Vec3> sample_pointmap(const Pointmap& points, const ConfidenceMap& confidence,
                                    double row, double col) {
  if (!points.same_shape(confidence)) {
    throw Error(ErrorCode::kDimensionMismatch, "pointmap and confidence shapes differ");
  }
  const int r0 = std::clamp(static_cast<int>(std::floor(row)), 0, std::max(0, points.height() - 2));
  const int c0 = std::clamp(static_cast<int>(std::floor(col)), 0, std::max(0, points.width() - 2));
  const double fr = row - r0;
  const double fc = col - c0;
  if (row < 0.0 || col < 0.0 || row > points.height() - 1 || col > points.width() - 1) return std::nullopt;
  const double w[2][2] = {{(1 - fr) * (1 - fc), (1 - fr) * fc}, {fr * (1 - fc), fr * fc}};
  Vec3 m = Vec3::Zero();
  for (int dr = 0; dr < 2; ++dr) {
    for (int dc = 0; dc < 2; ++dc) {
      if (w[dr][dc] == 0.0) continue;
      const int r = std::min(r0 + dr, points.height() - 1);
      const int c = std::min(c0 + dc, points.width() - 1);
      const Vec3& x = points(r, c);
      if (!(confidence(r, c) > 0.0) || !(x.z() > 0.0)) return std::nullopt;
      m += w[dr][dc] * Vec3(x.x() / x.z(), x.y() / x.z(), 1.0 / x.z());
    }
  }
  if (!(m.z() > 0.0)) return std::nullopt;
  return Vec3(m.x() / m.z(), m.y() / m.z(), 1.0 / m.z());
}

CorrespondenceSet ray_match(const PointmapView& source, const PointmapView& target,
                            const Sim3& source_from_target, const PinholeIntrinsics& source_k,
                            const MatchOptions& options) {
  if (!source.points || !source.confidence || !target.points || !target.confidence) {
    throw Error(ErrorCode::kInvalidArgument, "ray_match needs source and target pointmaps");
  }
  if (options.stride < 1) throw Error(ErrorCode::kInvalidArgument, "stride must be >= 1");
  if (!(source_from_target.scale > 0.0) || !source_from_target.rotation.allFinite() ||
      !source_from_target.translation.allFinite() || !std::isfinite(source_from_target.scale)) {
    throw Error(ErrorCode::kInvalidArgument, "degenerate transform");
  }
  const Pointmap& sp = *source.points;
  const ConfidenceMap& sc = *source.confidence;
  const Pointmap& tp = *target.points;
  const ConfidenceMap& tc = *target.confidence;
  if (!sp.same_shape(sc) || !tp.same_shape(tc)) {
    throw Error(ErrorCode::kDimensionMismatch, "pointmap and confidence shapes differ");
  }

  CorrespondenceSet out;
  const int th = tp.height();
  const int tw = tp.width();

  // Target rays in the source camera.
  std::vector<Vec3> rays(tp.size(), Vec3::Zero());
  std::vector<char> ray_ok(tp.size(), 0);
  for (std::size_t i = 0; i < tp.size(); ++i) {
    if (!(tc[i] > 0.0)) continue;
    if (auto r = try_psi_ray(source_from_target * tp[i])) {
      rays[i] = *r;
      ray_ok[i] = 1;
    }
  }

  const InverseDepthMap inv(tp, tc);
  std::vector<double> creases;
  for (int r = 0; r + 1 < th; ++r) {
    for (int c = 0; c + 1 < tw; ++c) {
      if (auto g = inv.crease(r, c)) creases.push_back(*g);
    }
  }
  double crease_limit = 1e-9;
  if (!creases.empty()) {
    auto mid = creases.begin() + static_cast<long>(creases.size() / 2);
    std::nth_element(creases.begin(), mid, creases.end());
    crease_limit = std::max(crease_limit, 3.0 * 1.4826 * *mid);
  }

  const Sim3 target_from_source = sim3_inverse(source_from_target);
  const Mat3 sr = source_from_target.scale * source_from_target.rotation;

  for (int r = 0; r < sp.height(); r += options.stride) {
    for (int c = 0; c < sp.width(); c += options.stride) {
      if (!(sc(r, c) > 0.0)) continue;
      const auto ray_a = try_psi_ray(sp(r, c));
      if (!ray_a) continue;
      ++out.sampled;

      const auto seed = try_psi_pi(source_k, target_from_source * sp(r, c));
      if (!seed) continue;
      int br = static_cast<int>(std::lround(seed->y()));
      int bc = static_cast<int>(std::lround(seed->x()));
      if (br < -options.radius || bc < -options.radius || br > th - 1 + options.radius ||
          bc > tw - 1 + options.radius) {
        continue;
      }
      br = std::clamp(br, 0, th - 1);
      bc = std::clamp(bc, 0, tw - 1);

      bool found = false;
      double best_dot = -2.0;
      for (int iter = 0; iter < options.max_iterations; ++iter) {
        int nr = br, nc = bc;
        bool any = false;
        for (int dr = -options.radius; dr <= options.radius; ++dr) {
          for (int dc = -options.radius; dc <= options.radius; ++dc) {
            const int rr = br + dr, cc = bc + dc;
            if (rr < 0 || cc < 0 || rr >= th || cc >= tw) continue;
            const std::size_t i = tp.index(rr, cc);
            if (!ray_ok[i]) continue;
            const double d = ray_a->dot(rays[i]);
            if (d > best_dot) {
              best_dot = d;
              nr = rr;
              nc = cc;
              any = true;
            }
          }
        }
        if (!any) break;
        found = true;
        const bool interior = std::abs(nr - br) < options.radius && std::abs(nc - bc) < options.radius;
        br = nr;
        bc = nc;
        if (interior) break;
      }
      if (!found) continue;

      double pr = br, pc = bc;
      double angle = ray_angle(*ray_a, rays[tp.index(br, bc)]);
      if (options.subpixel && angle > 0.0) {
        Vec3 t1 = ray_a->unitOrthogonal();
        Vec3 t2 = ray_a->cross(t1);
        Eigen::Matrix<double, 2, 3> proj;
        proj.row(0) = t1.transpose();
        proj.row(1) = t2.transpose();
        double cr = pr, cc = pc;
        bool converged = false;
        for (int it = 0; it < 20; ++it) {
          const auto s = inv.sample(cr, cc);
          if (!s) break;
          const Vec3 y = source_from_target * s->point;
          const auto ry = try_psi_ray(y);
          if (!ry) break;
          const double a = ray_angle(*ray_a, *ry);
          if (a < angle) {
            angle = a;
            pr = cr;
            pc = cc;
          }
          const Vec2 e = proj * (*ry);
          const Eigen::Matrix2d j = proj * psi_ray_jacobian(y) * sr * s->d_point;
          if (std::abs(j.determinant()) < 1e-300) break;
          const Vec2 step = -j.partialPivLu().solve(e);
          if (!step.allFinite()) break;
          if (step.lpNorm<1>() < kStepTol) {
            converged = true;
            break;
          }
          const double raw_r = cr + step.x(), raw_c = cc + step.y();
          const double nr = std::clamp(raw_r, std::max(0.0, br - 1.0), std::min(th - 1.0, br + 1.0));
          const double nc = std::clamp(raw_c, std::max(0.0, bc - 1.0), std::min(tw - 1.0, bc + 1.0));
          if (nr == cr && nc == cc) break;
          cr = nr;
          cc = nc;
        }
        if (!converged) continue;
        const auto s = inv.sample(pr, pc);
        if (s && s->fr > kOffsetTol && s->fr < 1.0 - kOffsetTol && s->fc > kOffsetTol &&
            s->fc < 1.0 - kOffsetTol) {
          const auto g = inv.crease(s->r0, s->c0);
          if (!g || *g > crease_limit) continue;
        }
      }
      if (!(angle < options.theta_max)) continue;
      const auto matched = inv.sample(pr, pc);
      if (!matched) continue;
      const double distance_ratio = (source_from_target * matched->point).norm() / sp(r, c).norm();
      if (!(std::abs(std::log(distance_ratio)) <= options.distance_tol)) continue;

      Match m;
      m.source_row = r;
      m.source_col = c;
      m.target_row = pr;
      m.target_col = pc;
      m.angular_error = angle;
      const double ct = tc(m.target_pixel_row(), m.target_pixel_col());
      if (!(ct > 0.0)) continue;
      m.weight = std::sqrt(sc(r, c) * ct);
      out.matches.push_back(m);
    }
  }
  out.valid_ratio = out.sampled > 0 ? static_cast<double>(out.matches.size()) / out.sampled : 0.0;
  return out;
}

bool keyframe_decision(double valid_ratio, double threshold) {
  if (valid_ratio < 0.0 || valid_ratio > 1.0) {
    throw Error(ErrorCode::kInvalidArgument, "valid ratio outside [0, 1]");
  }
  return valid_ratio < threshold;
}

void fuse_pointmap(KeyframeRecord& record, const Pointmap& points, const ConfidenceMap& confidence) {
  if (!points.same_shape(confidence)) {
    throw Error(ErrorCode::kDimensionMismatch, "pointmap and confidence shapes differ");
  }
  if (record.canonical.empty()) {
    record.canonical = Pointmap(points.height(), points.width(), Vec3::Zero());
    record.confidence = ConfidenceMap(points.height(), points.width(), 0.0);
    record.first_confidence = ConfidenceMap(points.height(), points.width(), 0.0);
  }
  if (!record.canonical.same_shape(points)) {
    throw Error(ErrorCode::kDimensionMismatch, "fused pointmap shape differs from the keyframe's");
  }
  for (std::size_t i = 0; i < points.size(); ++i) {
    const double c_new = confidence[i];
    if (!(c_new > 0.0)) continue;
    const double c_old = record.confidence[i];
    if (c_old > 0.0) {
      record.canonical[i] = (c_old * record.canonical[i] + c_new * points[i]) / (c_old + c_new);
    } else {
      record.canonical[i] = points[i];
      record.first_confidence[i] = c_new;
    }
    record.confidence[i] = c_old + c_new;
  }
}

bool update_intrinsics(KeyframeRecord& record, const PinholeIntrinsics& estimate) {
  if (!(estimate.fx > 0.0) || !(estimate.fy > 0.0)) return false;
  const int n = record.focal_count;
  PinholeIntrinsics k = record.intrinsics;
  if (n == 0) {
    k = estimate;
  } else {
    k.fx += (estimate.fx - k.fx) / (n + 1);
    k.fy += (estimate.fy - k.fy) / (n + 1);
  }
  k.width = estimate.width;
  k.height = estimate.height;
  k.cx = 0.5 * k.width;
  k.cy = 0.5 * k.height;
  record.intrinsics = k;
  record.focal_count = n + 1;
  return true;
}

}  // namespace pmslam
