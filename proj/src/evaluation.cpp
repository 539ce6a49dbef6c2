#include "pmslam/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <Eigen/SVD>

#include "pmslam/error.hpp"

namespace pmslam {

std::vector<TimedPose> read_tum_trajectory(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open trajectory " + path.string());
  std::vector<TimedPose> poses;
  std::string line;
  int line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    double t, tx, ty, tz, qx, qy, qz, qw;
    if (!(ls >> t >> tx >> ty >> tz >> qx >> qy >> qz >> qw)) {
      throw Error(ErrorCode::kParse, path.filename().string() + " line " + std::to_string(line_number) +
                                         ": expected `timestamp tx ty tz qx qy qz qw`");
    }
    Eigen::Quaterniond q(qw, qx, qy, qz);
    if (q.norm() < 1e-12) {
      throw Error(ErrorCode::kParse, path.filename().string() + " line " + std::to_string(line_number) +
                                         ": zero quaternion");
    }
    TimedPose p;
    p.timestamp = t;
    p.pose.rotation = q.normalized().toRotationMatrix();
    p.pose.translation = Vec3(tx, ty, tz);
    poses.push_back(p);
  }
  return poses;
}

std::string format_tum_line(const TimedPose& pose) {
  const Eigen::Quaterniond q = pose.pose.quaternion();
  const Vec3 t = pose.pose.translation;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%.9g %.9g %.9g %.9g %.9g %.9g %.9g %.9g", pose.timestamp, t.x(),
                t.y(), t.z(), q.x(), q.y(), q.z(), q.w());
  return buf;
}

void write_tum_trajectory(const std::filesystem::path& path, std::span<const TimedPose> poses) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write trajectory " + path.string());
  out << "# timestamp tx ty tz qx qy qz qw\n";
  for (const auto& p : poses) out << format_tum_line(p) << '\n';
}

std::vector<std::pair<std::size_t, std::size_t>> associate(std::span<const TimedPose> estimated,
                                                           std::span<const TimedPose> reference,
                                                           double max_gap) {
  std::vector<std::size_t> order(reference.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return reference[a].timestamp < reference[b].timestamp; });
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i < estimated.size(); ++i) {
    const double t = estimated[i].timestamp;
    auto it = std::lower_bound(order.begin(), order.end(), t,
                               [&](std::size_t idx, double v) { return reference[idx].timestamp < v; });
    std::size_t best = reference.size();
    double best_gap = std::numeric_limits<double>::infinity();
    for (auto cand : {it, it == order.begin() ? it : std::prev(it)}) {
      if (cand == order.end()) continue;
      const double gap = std::abs(reference[*cand].timestamp - t);
      if (gap < best_gap) {
        best_gap = gap;
        best = *cand;
      }
    }
    if (best < reference.size() && best_gap <= max_gap) out.emplace_back(i, best);
  }
  return out;
}

Sim3 umeyama_alignment(std::span<const Vec3> source, std::span<const Vec3> reference, bool with_scale) {
  if (source.size() != reference.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "alignment needs equally many points");
  }
  if (source.size() < 2) throw Error(ErrorCode::kEvaluation, "alignment needs at least 2 points");
  const double n = static_cast<double>(source.size());
  Vec3 mu_s = Vec3::Zero(), mu_r = Vec3::Zero();
  for (std::size_t i = 0; i < source.size(); ++i) {
    mu_s += source[i];
    mu_r += reference[i];
  }
  mu_s /= n;
  mu_r /= n;
  Mat3 cov = Mat3::Zero();
  double var_s = 0.0;
  for (std::size_t i = 0; i < source.size(); ++i) {
    const Vec3 ds = source[i] - mu_s;
    cov += (reference[i] - mu_r) * ds.transpose();
    var_s += ds.squaredNorm();
  }
  cov /= n;
  var_s /= n;
  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) d(2, 2) = -1.0;
  Sim3 out;
  out.rotation = svd.matrixU() * d * svd.matrixV().transpose();
  out.scale = (with_scale && var_s > 0.0) ? (svd.singularValues().asDiagonal() * d).trace() / var_s : 1.0;
  out.translation = mu_r - out.scale * out.rotation * mu_s;
  return out;
}

AteReport evaluate_ate(std::span<const TimedPose> estimated, std::span<const TimedPose> reference,
                       double max_gap) {
  const auto pairs = associate(estimated, reference, max_gap);
  if (pairs.size() < 2) {
    throw Error(ErrorCode::kEvaluation,
                "ATE needs at least 2 associated poses, got " + std::to_string(pairs.size()));
  }
  std::vector<Vec3> est, ref;
  for (const auto& [i, j] : pairs) {
    est.push_back(estimated[i].pose.translation);
    ref.push_back(reference[j].pose.translation);
  }
  AteReport report;
  report.alignment = umeyama_alignment(est, ref, true);
  std::vector<double> errors;
  double sq = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    const double e = (report.alignment * est[i] - ref[i]).norm();
    errors.push_back(e);
    sq += e * e;
  }
  report.associations = pairs.size();
  report.rmse = std::sqrt(sq / errors.size());
  report.mean = std::accumulate(errors.begin(), errors.end(), 0.0) / errors.size();
  report.max = *std::max_element(errors.begin(), errors.end());
  std::sort(errors.begin(), errors.end());
  const std::size_t m = errors.size() / 2;
  report.median = errors.size() % 2 ? errors[m] : 0.5 * (errors[m - 1] + errors[m]);
  return report;
}

double trajectory_extent(std::span<const TimedPose> poses) {
  if (poses.empty()) return 0.0;
  Vec3 lo = poses.front().pose.translation, hi = lo;
  for (const auto& p : poses) {
    lo = lo.cwiseMin(p.pose.translation);
    hi = hi.cwiseMax(p.pose.translation);
  }
  return (hi - lo).norm();
}

namespace {
constexpr std::size_t kLeafSize = 16;
}

NearestNeighborIndex::NearestNeighborIndex(std::span<const Vec3> points) : points_(points.begin(), points.end()) {
  if (!points_.empty()) {
    nodes_.reserve(2 * points_.size() / kLeafSize + 2);
    build(0, points_.size());
  }
}

int NearestNeighborIndex::build(std::size_t begin, std::size_t end) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back({begin, end, -1, 0.0});
  if (end - begin <= kLeafSize) return id;
  Vec3 lo = points_[begin], hi = lo;
  for (std::size_t i = begin; i < end; ++i) {
    lo = lo.cwiseMin(points_[i]);
    hi = hi.cwiseMax(points_[i]);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  const std::size_t mid = begin + (end - begin) / 2;
  std::nth_element(points_.begin() + begin, points_.begin() + mid, points_.begin() + end,
                   [axis](const Vec3& a, const Vec3& b) { return a[axis] < b[axis]; });
  nodes_[id].axis = axis;
  nodes_[id].split = points_[mid][axis];
  const int left = build(begin, mid);
  const int right = build(mid, end);
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

void NearestNeighborIndex::search(int node, const Vec3& query, double& best_sq) const {
  const Node& n = nodes_[node];
  if (n.axis < 0) {
    for (std::size_t i = n.begin; i < n.end; ++i) best_sq = std::min(best_sq, (points_[i] - query).squaredNorm());
    return;
  }
  const double d = query[n.axis] - n.split;
  const int near = d < 0.0 ? n.left : n.right;
  const int far = d < 0.0 ? n.right : n.left;
  search(near, query, best_sq);
  if (d * d < best_sq) search(far, query, best_sq);
}

double NearestNeighborIndex::nearest_distance(const Vec3& query) const {
  if (points_.empty()) return std::numeric_limits<double>::infinity();
  double best_sq = std::numeric_limits<double>::infinity();
  search(0, query, best_sq);
  return std::sqrt(best_sq);
}

MapReport evaluate_map(std::span<const Vec3> estimate, std::span<const Vec3> reference) {
  if (estimate.empty() || reference.empty()) {
    throw Error(ErrorCode::kEvaluation, "map evaluation needs non-empty point sets");
  }
  const NearestNeighborIndex ref_index(reference);
  const NearestNeighborIndex est_index(estimate);
  MapReport r;
  for (const auto& p : estimate) r.accuracy += ref_index.nearest_distance(p);
  for (const auto& p : reference) r.completion += est_index.nearest_distance(p);
  r.accuracy /= estimate.size();
  r.completion /= reference.size();
  r.chamfer = 0.5 * (r.accuracy + r.completion);
  r.estimate_points = estimate.size();
  r.reference_points = reference.size();
  return r;
}

}  // namespace pmslam
