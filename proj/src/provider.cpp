#include "pmslam/provider.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "pmslam/error.hpp"
#include "pmslam/evaluation.hpp"

namespace pmslam {

namespace {

constexpr double kDegree = M_PI / 180.0;

Mat3 rot_x(double a) {
  return Eigen::AngleAxisd(a, Vec3::UnitX()).toRotationMatrix();
}
Mat3 rot_y(double a) {
  return Eigen::AngleAxisd(a, Vec3::UnitY()).toRotationMatrix();
}

Sim3 camera_pose(const Vec3& position, double yaw, double pitch) {
  Sim3 t;
  t.rotation = rot_y(yaw) * rot_x(-pitch);
  t.translation = position;
  return t;
}

// World convention: y points down, the floor is at y = +1.2.
void add_room(SyntheticScene& scene) {
  const double half = 2.5;
  const double floor_y = 1.2;
  const double top_y = -1.8;
  const double wall_cy = 0.5 * (floor_y + top_y);
  const double wall_half_v = 0.5 * (floor_y - top_y);
  scene.planes.push_back({Vec3(0, floor_y, 0), Vec3(0, -1, 0), Vec3(1, 0, 0), Vec3(0, 0, 1), half, half});
  scene.planes.push_back({Vec3(half, wall_cy, 0), Vec3(-1, 0, 0), Vec3(0, 0, 1), Vec3(0, 1, 0), half, wall_half_v});
  scene.planes.push_back({Vec3(-half, wall_cy, 0), Vec3(1, 0, 0), Vec3(0, 0, 1), Vec3(0, 1, 0), half, wall_half_v});
  scene.planes.push_back({Vec3(0, wall_cy, half), Vec3(0, 0, -1), Vec3(1, 0, 0), Vec3(0, 1, 0), half, wall_half_v});
  scene.planes.push_back({Vec3(0, wall_cy, -half), Vec3(0, 0, 1), Vec3(1, 0, 0), Vec3(0, 1, 0), half, wall_half_v});

  scene.boxes.push_back({Vec3(1.5, 0.3, -0.8), Vec3(2.5, 1.2, 0.2)});
  scene.boxes.push_back({Vec3(-2.5, -0.2, 0.8), Vec3(-1.9, 1.2, 1.6)});
  scene.boxes.push_back({Vec3(-0.6, 0.6, 1.7), Vec3(0.4, 1.2, 2.5)});
  scene.boxes.push_back({Vec3(0.5, 0.9, -2.5), Vec3(1.3, 1.2, -1.8)});
  scene.boxes.push_back({Vec3(-1.6, -1.8, -1.7), Vec3(-1.2, 1.2, -1.3)});
  scene.boxes.push_back({Vec3(1.2, -0.9, 2.2), Vec3(2.0, -0.3, 2.5)});
}

std::optional<double> intersect_plane(const ScenePlane& plane, const Vec3& origin, const Vec3& dir) {
  const double denom = plane.normal.dot(dir);
  if (std::abs(denom) < 1e-12) return std::nullopt;
  const double t = plane.normal.dot(plane.center - origin) / denom;
  if (!(t > 1e-9)) return std::nullopt;
  const Vec3 local = origin + t * dir - plane.center;
  if (std::abs(local.dot(plane.u_axis)) > plane.half_u) return std::nullopt;
  if (std::abs(local.dot(plane.v_axis)) > plane.half_v) return std::nullopt;
  return t;
}

std::optional<double> intersect_box(const SceneBox& box, const Vec3& origin, const Vec3& dir) {
  double t_near = -std::numeric_limits<double>::infinity();
  double t_far = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (std::abs(dir(a)) < 1e-15) {
      if (origin(a) < box.min_corner(a) || origin(a) > box.max_corner(a)) return std::nullopt;
      continue;
    }
    double t0 = (box.min_corner(a) - origin(a)) / dir(a);
    double t1 = (box.max_corner(a) - origin(a)) / dir(a);
    if (t0 > t1) std::swap(t0, t1);
    t_near = std::max(t_near, t0);
    t_far = std::min(t_far, t1);
    if (t_near > t_far) return std::nullopt;
  }
  if (t_near > 1e-9) return t_near;
  return std::nullopt;
}

std::mt19937_64 make_rng(std::uint64_t seed, std::span<const FrameId> ids) {
  return std::mt19937_64(hash_window(seed, ids));
}

Vec3 normal3(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  const double a = n(rng);
  const double b = n(rng);
  const double c = n(rng);
  return {a, b, c};
}

}  // namespace

std::uint64_t hash_window(std::uint64_t seed, std::span<const FrameId> frame_ids) {
  std::vector<FrameId> sorted(frame_ids.begin(), frame_ids.end());
  std::sort(sorted.begin(), sorted.end());
  // FNV-1a over the seed and the sorted ids, then a splitmix finalizer.
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xffULL;
      h *= 1099511628211ULL;
    }
  };
  mix(seed);
  for (FrameId id : sorted) mix(static_cast<std::uint64_t>(static_cast<std::int64_t>(id)));
  h += 0x9e3779b97f4a7c15ULL;
  h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ULL;
  h = (h ^ (h >> 27)) * 0x94d049bb133111ebULL;
  return h ^ (h >> 31);
}

Pointmap FrameObservation::camera_points() const {
  const Sim3 inv = sim3_inverse(reference_from_camera);
  Pointmap out(pointmap.height(), pointmap.width(), Vec3::Zero());
  for (std::size_t i = 0; i < pointmap.size(); ++i) {
    if (confidence[i] > 0.0) out[i] = inv * pointmap[i];
  }
  return out;
}

int FrameObservation::valid_count() const {
  return static_cast<int>(std::count_if(confidence.values().begin(), confidence.values().end(),
                                        [](double c) { return c > 0.0; }));
}

const FrameObservation& WindowInference::at(FrameId id) const {
  for (const auto& obs : observations) {
    if (obs.frame_id == id) return obs;
  }
  throw Error(ErrorCode::kUnknownFrame, "frame " + std::to_string(id) + " not in window");
}

void Provider::validate_request(std::span<const FrameId> frame_ids) const {
  if (frame_ids.size() < 2) {
    throw Error(ErrorCode::kInvalidArgument, "window needs at least 2 frames");
  }
  if (static_cast<int>(frame_ids.size()) > max_window()) {
    throw Error(ErrorCode::kWindowTooLarge,
                "window of " + std::to_string(frame_ids.size()) + " frames exceeds maximum " +
                    std::to_string(max_window()));
  }
  for (FrameId id : frame_ids) {
    if (id < 0 || id >= frame_count()) {
      throw Error(ErrorCode::kUnknownFrame, "unknown frame id " + std::to_string(id));
    }
  }
  std::vector<FrameId> sorted(frame_ids.begin(), frame_ids.end());
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw Error(ErrorCode::kInvalidArgument, "duplicate frame id in window");
  }
}

// ---------------------------------------------------------------------------

bool SyntheticNoise::is_zero() const {
  return pixel_sigma == 0.0 && depth_sigma_rel == 0.0 && window_scale_sigma == 0.0 &&
         intrinsics_jitter == 0.0 && pose_rot_sigma == 0.0 && pose_trans_sigma == 0.0 &&
         rotation_bias == 0.0;
}

std::optional<double> SyntheticScene::cast(const Vec3& origin, const Vec3& direction) const {
  std::optional<double> best;
  for (const auto& plane : planes) {
    auto t = intersect_plane(plane, origin, direction);
    if (t && (!best || *t < *best)) best = t;
  }
  for (const auto& box : boxes) {
    auto t = intersect_box(box, origin, direction);
    if (t && (!best || *t < *best)) best = t;
  }
  return best;
}

Grid<double> SyntheticScene::render_depth(FrameId id) const {
  const Sim3& pose = trajectory.at(static_cast<std::size_t>(id));
  const auto& k = intrinsics;
  Grid<double> depth(k.height, k.width, 0.0);
  for (int r = 0; r < k.height; ++r) {
    for (int c = 0; c < k.width; ++c) {
      const Vec3 ray((c - k.cx) / k.fx, (r - k.cy) / k.fy, 1.0);
      // With ray.z == 1 the hit parameter equals the z-depth.
      if (auto t = cast(pose.translation, pose.rotation * ray)) depth(r, c) = *t;
    }
  }
  return depth;
}

std::vector<Vec3> SyntheticScene::ground_truth_cloud(int frame_stride) const {
  std::vector<Vec3> cloud;
  const auto& k = intrinsics;
  for (int id = 0; id < frame_count(); id += std::max(1, frame_stride)) {
    const Grid<double> depth = render_depth(id);
    const Sim3& pose = trajectory[static_cast<std::size_t>(id)];
    for (int r = 0; r < k.height; ++r) {
      for (int c = 0; c < k.width; ++c) {
        const double z = depth(r, c);
        if (z <= 0.0) continue;
        cloud.push_back(pose * Vec3(z * (c - k.cx) / k.fx, z * (r - k.cy) / k.fy, z));
      }
    }
  }
  return cloud;
}

SyntheticScene make_synthetic_scene(const std::string& preset, int frames,
                                    const SyntheticNoise& noise, double focal, int resolution) {
  if (frames < 2) throw Error(ErrorCode::kInvalidArgument, "synthetic scene needs >= 2 frames");
  SyntheticScene scene;
  scene.name = preset;
  scene.noise = noise;
  scene.intrinsics = PinholeIntrinsics::centered(focal, focal, resolution, resolution);
  add_room(scene);

  const double radius = 0.6;
  for (int i = 0; i < frames; ++i) {
    const double u = static_cast<double>(i) / (frames - 1);
    const double pitch = 12.0 * kDegree + 3.0 * kDegree * std::sin(2.0 * M_PI * i / 37.0);
    Sim3 pose;
    if (preset == "room_sweep") {
      const double a = u * 180.0 * kDegree;
      pose = camera_pose(radius * Vec3(std::sin(a), 0.0, std::cos(a)), a, pitch);
    } else if (preset == "room_loop") {
      // One closed turn: the last frame repeats the first pose.
      const double a = u * 360.0 * kDegree;
      const double loop_pitch = 12.0 * kDegree + 3.0 * kDegree * std::sin(6.0 * M_PI * u);
      pose = camera_pose(radius * Vec3(std::sin(a), 0.0, std::cos(a)), a, loop_pitch);
    } else if (preset == "wide_baseline") {
      // Oscillating pan with a slow lateral drift: repeated revisits at large steps.
      const double yaw = 70.0 * kDegree * std::sin(2.0 * M_PI * i / 36.0);
      const Vec3 position(-0.8 + 1.6 * u, 0.1 * std::sin(2.0 * M_PI * i / 23.0), 0.3 * std::cos(M_PI * u));
      pose = camera_pose(position, yaw, pitch);
    } else if (preset == "static") {
      pose = camera_pose(radius * Vec3(0.0, 0.0, 1.0), 0.0, 12.0 * kDegree);
    } else {
      throw Error(ErrorCode::kInvalidArgument, "unknown synthetic preset " + preset);
    }
    scene.trajectory.push_back(pose);
    scene.timestamps.push_back(i / 30.0);
  }
  return scene;
}

SyntheticNoise synthetic_noise_from_config(const Config& config, std::uint64_t seed) {
  SyntheticNoise n;
  n.pixel_sigma = config.get_double("noise_pixel_sigma", 0.0);
  n.depth_sigma_rel = config.get_double("noise_depth_sigma_rel", 0.0);
  n.window_scale_sigma = config.get_double("noise_window_scale_sigma", 0.0);
  n.intrinsics_jitter = config.get_double("noise_intrinsics_jitter", 0.0);
  n.pose_rot_sigma = config.get_double("noise_pose_rot_sigma", 0.0);
  n.pose_trans_sigma = config.get_double("noise_pose_trans_sigma", 0.0);
  n.rotation_bias = config.get_double("noise_rotation_bias", 0.0);
  n.confidence_kappa = config.get_double("noise_confidence_kappa", 1e4);
  n.seed = seed;
  return n;
}

SyntheticProvider::SyntheticProvider(SyntheticScene scene, int window_max)
    : scene_(std::move(scene)), window_max_(window_max) {}

double SyntheticProvider::timestamp(FrameId id) const {
  if (id < 0 || id >= frame_count()) throw Error(ErrorCode::kUnknownFrame, "unknown frame id");
  return scene_.timestamps[static_cast<std::size_t>(id)];
}

std::optional<Sim3> SyntheticProvider::ground_truth_pose(FrameId id) const {
  if (id < 0 || id >= frame_count()) return std::nullopt;
  return scene_.trajectory[static_cast<std::size_t>(id)];
}

const Grid<double>& SyntheticProvider::depth(FrameId id) const {
  std::lock_guard<std::mutex> lock(cache_mutex_);
  auto it = depth_cache_.find(id);
  if (it == depth_cache_.end()) {
    it = depth_cache_.emplace(id, std::make_shared<const Grid<double>>(scene_.render_depth(id))).first;
  }
  return *it->second;
}

WindowInference SyntheticProvider::infer_window(std::span<const FrameId> frame_ids) const {
  validate_request(frame_ids);
  const SyntheticNoise& noise = scene_.noise;
  const PinholeIntrinsics& k = scene_.intrinsics;
  std::mt19937_64 rng = make_rng(noise.seed, frame_ids);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(-1.0, 1.0);

  const double window_scale = std::exp(noise.window_scale_sigma * normal(rng));

  std::vector<FrameId> sorted(frame_ids.begin(), frame_ids.end());
  std::sort(sorted.begin(), sorted.end());

  const FrameId ref = frame_ids.front();
  const Sim3 ref_inv = sim3_inverse(scene_.trajectory[static_cast<std::size_t>(ref)]);

  std::map<FrameId, FrameObservation> by_id;
  for (FrameId id : sorted) {
    FrameObservation obs;
    obs.frame_id = id;
    obs.timestamp = scene_.timestamps[static_cast<std::size_t>(id)];

    const double jx = noise.intrinsics_jitter * uniform(rng);
    const double jy = noise.intrinsics_jitter * uniform(rng);
    obs.intrinsics = PinholeIntrinsics::centered(k.fx * (1.0 + jx), k.fy * (1.0 + jy), k.width, k.height);

    const Vec3 rot_noise = noise.pose_rot_sigma * normal3(rng);
    const Vec3 trans_noise = noise.pose_trans_sigma * normal3(rng);
    Sim3 relative = ref_inv * scene_.trajectory[static_cast<std::size_t>(id)];
    if (id != ref) {
      relative.rotation = so3_exp(rot_noise) * so3_exp((1.0 + noise.rotation_bias) * so3_log(relative.rotation));
      relative.translation += trans_noise;
    }
    relative.translation *= window_scale;
    obs.reference_from_camera = relative;

    const Grid<double>& z_true = depth(id);
    obs.pointmap = Pointmap(k.height, k.width, Vec3::Zero());
    obs.confidence = ConfidenceMap(k.height, k.width, 0.0);
    for (int r = 0; r < k.height; ++r) {
      for (int c = 0; c < k.width; ++c) {
        const double du = noise.pixel_sigma * normal(rng);
        const double dv = noise.pixel_sigma * normal(rng);
        const double dz = noise.depth_sigma_rel * normal(rng);
        const double z = z_true(r, c);
        if (z <= 0.0) continue;
        const double z_noisy = z * (1.0 + dz);
        if (z_noisy <= 0.0) continue;
        const Vec3 truth(z * (c - k.cx) / k.fx, z * (r - k.cy) / k.fy, z);
        const Vec3 noisy(z_noisy * (c + du - k.cx) / k.fx, z_noisy * (r + dv - k.cy) / k.fy, z_noisy);
        const double rel = (noisy - truth).norm() / z;
        double conf = 1.0 / (1.0 + rel * rel * noise.confidence_kappa);
        conf = std::clamp(conf, 1e-12, 1.0);
        obs.confidence(r, c) = conf;
        obs.pointmap(r, c) = relative * (window_scale * noisy);
      }
    }
    by_id.emplace(id, std::move(obs));
  }

  WindowInference out;
  out.reference_frame_id = ref;
  for (FrameId id : frame_ids) out.observations.push_back(std::move(by_id.at(id)));
  return out;
}

// ---------------------------------------------------------------------------

ReplayProvider::ReplayProvider(std::vector<ReplayFrame> frames, PinholeIntrinsics intrinsics,
                               double depth_scale, ReplayOptions options)
    : frames_(std::move(frames)), depth_scale_(depth_scale), options_(options) {
  if (options_.downsample < 1) throw Error(ErrorCode::kInvalidArgument, "downsample must be >= 1");
  if (depth_scale_ <= 0.0) throw Error(ErrorCode::kInvalidArgument, "depth scale must be positive");
  const int d = options_.downsample;
  intrinsics_ = intrinsics;
  intrinsics_.fx /= d;
  intrinsics_.fy /= d;
  intrinsics_.cx /= d;
  intrinsics_.cy /= d;
  intrinsics_.width = intrinsics.width / d;
  intrinsics_.height = intrinsics.height / d;
}

double ReplayProvider::timestamp(FrameId id) const {
  if (id < 0 || id >= frame_count()) throw Error(ErrorCode::kUnknownFrame, "unknown frame id");
  return frames_[static_cast<std::size_t>(id)].timestamp;
}

std::optional<Sim3> ReplayProvider::ground_truth_pose(FrameId id) const {
  if (id < 0 || id >= frame_count()) return std::nullopt;
  return frames_[static_cast<std::size_t>(id)].ground_truth;
}

std::pair<Pointmap, ConfidenceMap> ReplayProvider::backproject(FrameId id) const {
  const Grid<std::uint16_t> raw = read_depth_image(frames_[static_cast<std::size_t>(id)].depth_path);
  const int d = options_.downsample;
  const auto& k = intrinsics_;
  if (raw.height() / d != k.height || raw.width() / d != k.width) {
    throw Error(ErrorCode::kDimensionMismatch, "depth image size does not match intrinsics");
  }
  Pointmap points(k.height, k.width, Vec3::Zero());
  ConfidenceMap conf(k.height, k.width, 0.0);
  const double r_max = std::hypot(0.5 * k.width, 0.5 * k.height);
  for (int r = 0; r < k.height; ++r) {
    for (int c = 0; c < k.width; ++c) {
      const std::uint16_t v = raw(r * d, c * d);
      if (v == 0) continue;
      const double z = v / depth_scale_;
      points(r, c) = Vec3(z * (c - k.cx) / k.fx, z * (r - k.cy) / k.fy, z);
      const double radial = std::hypot(c - 0.5 * k.width, r - 0.5 * k.height) / r_max;
      conf(r, c) = 1.0 / (1.0 + radial * radial);
    }
  }
  return {std::move(points), std::move(conf)};
}

WindowInference ReplayProvider::infer_window(std::span<const FrameId> frame_ids) const {
  validate_request(frame_ids);
  std::mt19937_64 rng = make_rng(options_.noise.seed, frame_ids);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double window_scale = std::exp(options_.noise.scale_sigma * normal(rng));

  std::vector<FrameId> sorted(frame_ids.begin(), frame_ids.end());
  std::sort(sorted.begin(), sorted.end());
  const FrameId ref = frame_ids.front();
  const Sim3 ref_inv = sim3_inverse(frames_[static_cast<std::size_t>(ref)].ground_truth);

  std::map<FrameId, FrameObservation> by_id;
  for (FrameId id : sorted) {
    const Vec3 rot_noise = options_.noise.rotation_sigma * normal3(rng);
    const Vec3 trans_noise = options_.noise.translation_sigma * normal3(rng);
    Sim3 relative = ref_inv * frames_[static_cast<std::size_t>(id)].ground_truth;
    if (id != ref) {
      relative.rotation = so3_exp(rot_noise) * relative.rotation;
      relative.translation += trans_noise;
    }
    relative.translation *= window_scale;

    auto [points, conf] = backproject(id);
    FrameObservation obs;
    obs.frame_id = id;
    obs.timestamp = frames_[static_cast<std::size_t>(id)].timestamp;
    obs.intrinsics = PinholeIntrinsics::centered(intrinsics_.fx, intrinsics_.fy, intrinsics_.width,
                                                 intrinsics_.height);
    obs.reference_from_camera = relative;
    obs.pointmap = Pointmap(points.height(), points.width(), Vec3::Zero());
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (conf[i] > 0.0) obs.pointmap[i] = relative * (window_scale * points[i]);
    }
    obs.confidence = std::move(conf);
    by_id.emplace(id, std::move(obs));
  }
  WindowInference out;
  out.reference_frame_id = ref;
  for (FrameId id : frame_ids) out.observations.push_back(std::move(by_id.at(id)));
  return out;
}

std::unique_ptr<ReplayProvider> replay_load(const std::filesystem::path& root, ReplayOptions options) {
  namespace fs = std::filesystem;
  const fs::path assoc_path = root / "associations.txt";
  const fs::path intr_path = root / "intrinsics.txt";
  const fs::path gt_path = root / "groundtruth.txt";
  for (const auto& p : {assoc_path, intr_path, gt_path}) {
    if (!fs::exists(p)) throw Error(ErrorCode::kIo, "missing dataset file " + p.string());
  }

  std::ifstream intr_in(intr_path);
  double fx = 0, fy = 0, cx = 0, cy = 0, depth_scale = 0;
  if (!(intr_in >> fx >> fy >> cx >> cy >> depth_scale)) {
    throw Error(ErrorCode::kParse, "intrinsics.txt: expected `fx fy cx cy depth_scale`");
  }
  if (fx <= 0 || fy <= 0) throw Error(ErrorCode::kParse, "intrinsics.txt: non-positive focal length");

  const std::vector<TimedPose> gt = read_tum_trajectory(gt_path);
  if (gt.empty()) throw Error(ErrorCode::kParse, "groundtruth.txt: no poses");

  std::ifstream assoc_in(assoc_path);
  std::vector<ReplayFrame> frames;
  std::string line;
  int line_number = 0;
  while (std::getline(assoc_in, line)) {
    ++line_number;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    ReplayFrame f;
    std::string rel;
    if (!(ls >> f.timestamp >> rel)) {
      throw Error(ErrorCode::kParse, "associations.txt line " + std::to_string(line_number) +
                                         ": expected `timestamp depth_path`");
    }
    f.depth_path = root / rel;
    if (!fs::exists(f.depth_path)) {
      throw Error(ErrorCode::kIo, "associations.txt line " + std::to_string(line_number) +
                                      ": missing depth image " + f.depth_path.string());
    }
    const auto nearest = std::min_element(gt.begin(), gt.end(), [&](const TimedPose& a, const TimedPose& b) {
      return std::abs(a.timestamp - f.timestamp) < std::abs(b.timestamp - f.timestamp);
    });
    if (std::abs(nearest->timestamp - f.timestamp) > options.max_association_gap) {
      throw Error(ErrorCode::kParse, "associations.txt line " + std::to_string(line_number) +
                                         ": no ground-truth pose within tolerance");
    }
    f.ground_truth = nearest->pose;
    frames.push_back(std::move(f));
  }
  if (frames.size() < 2) throw Error(ErrorCode::kParse, "associations.txt: fewer than 2 frames");

  const Grid<std::uint16_t> first = read_depth_image(frames.front().depth_path);
  PinholeIntrinsics k{fx, fy, cx, cy, first.width(), first.height()};
  return std::make_unique<ReplayProvider>(std::move(frames), k, depth_scale, options);
}

void write_replay_dataset(const SyntheticScene& scene, const std::filesystem::path& root,
                          double depth_scale) {
  namespace fs = std::filesystem;
  fs::create_directories(root / "depth");
  std::ofstream assoc(root / "associations.txt");
  std::vector<TimedPose> gt;
  for (FrameId id = 0; id < scene.frame_count(); ++id) {
    const Grid<double> depth = scene.render_depth(id);
    Grid<std::uint16_t> img(depth.height(), depth.width(), 0);
    for (std::size_t i = 0; i < depth.size(); ++i) {
      img[i] = static_cast<std::uint16_t>(std::clamp(std::lround(depth[i] * depth_scale), 0L, 65535L));
    }
    char name[32];
    std::snprintf(name, sizeof(name), "depth/%06d.png", id);
    write_depth_png(root / name, img);
    assoc << std::setprecision(9) << scene.timestamps[static_cast<std::size_t>(id)] << ' ' << name << '\n';
    gt.push_back({scene.timestamps[static_cast<std::size_t>(id)], scene.trajectory[static_cast<std::size_t>(id)]});
  }
  std::ofstream intr(root / "intrinsics.txt");
  intr << std::setprecision(12) << scene.intrinsics.fx << ' ' << scene.intrinsics.fy << ' '
       << scene.intrinsics.cx << ' ' << scene.intrinsics.cy << ' ' << depth_scale << '\n';
  write_tum_trajectory(root / "groundtruth.txt", gt);
}

// ---------------------------------------------------------------------------

FrameDescriptor pooled_inverse_depth_descriptor(const Pointmap& camera_points,
                                                const ConfidenceMap& confidence) {
  FrameDescriptor d;
  d.values = Eigen::VectorXd::Zero(kDescriptorGrid * kDescriptorGrid);
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(kDescriptorGrid * kDescriptorGrid);
  const int h = camera_points.height();
  const int w = camera_points.width();
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const Vec3& p = camera_points(r, c);
      if (confidence(r, c) <= 0.0 || p.z() <= 0.0) continue;
      const int cell = (r * kDescriptorGrid / h) * kDescriptorGrid + (c * kDescriptorGrid / w);
      d.values(cell) += 1.0 / p.z();
      counts(cell) += 1.0;
    }
  }
  for (int i = 0; i < d.values.size(); ++i) {
    if (counts(i) > 0) d.values(i) /= counts(i);
  }
  const double n = d.values.norm();
  if (n > 0.0) {
    d.values /= n;
    d.usable = true;
  }
  return d;
}

FrameDescriptor frame_descriptor(const FrameObservation& observation) {
  if (observation.descriptor && observation.descriptor->norm() > 0.0) {
    return {observation.descriptor->normalized(), true};
  }
  return pooled_inverse_depth_descriptor(observation.camera_points(), observation.confidence);
}

}  // namespace pmslam
