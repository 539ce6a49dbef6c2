#include "pmslam/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "pmslam/error.hpp"

namespace pmslam {

WindowPolicy parse_window_policy(const std::string& name) {
  if (name == "sigma") return WindowPolicy::kSigma;
  if (name == "recency") return WindowPolicy::kRecency;
  throw Error(ErrorCode::kInvalidArgument, "unknown window policy " + name);
}

const char* to_string(WindowPolicy policy) {
  return policy == WindowPolicy::kSigma ? "sigma" : "recency";
}

SlamConfig SlamConfig::from_config(const Config& c) {
  SlamConfig s;
  s.policy = parse_window_policy(c.get_string("window_policy", "sigma"));
  s.window_max = c.get_int("window_max", 5);
  s.keyframe_threshold = c.get_double("keyframe_threshold", 0.7);
  s.top_n = c.get_int("top_n", 8);
  s.voxel_size = c.get_double("voxel_size", 0.25);
  s.c_index_min = c.get_double("c_index_min", 0.1);
  s.loop_closure = c.get_bool("loop_closure", true);
  s.pgo_every = c.get_int("pgo_every", 10);

  s.sigma.pixel_sigma = c.get_double("pixel_sigma", 1.0);
  s.sigma.beta = c.get_double("beta", 0.01);
  s.sigma.epsilon = c.get_double("epsilon", 1e-9);
  s.sigma.cov_max = c.get_double("cov_max", 1e4);
  s.sigma.subset_cap = c.get_int("subset_cap", 512);
  s.sigma.window_max = s.window_max;
  s.sigma.kappa_threshold = c.get_double("kappa_threshold", 1.0);
  s.sigma.revert_policy = parse_revert_policy(c.get_string("revert_policy", "triplet"));

  s.match.stride = c.get_int("match_stride", 1);
  s.match.radius = c.get_int("match_radius", 2);
  s.match.max_iterations = c.get_int("match_iterations", 5);
  s.match.theta_max = c.get_double("theta_max_deg", 0.5) * M_PI / 180.0;
  s.match.subpixel = c.get_bool("match_subpixel", true);
  s.match.distance_tol = c.get_double("match_distance_tol", 0.05);

  s.residual.mode = parse_residual_mode(c.get_string("residual", "hybrid"));
  s.residual.weight_convention = parse_weight_convention(c.get_string("weight_convention", "multiply"));
  s.residual.lambda_pix_mode = parse_lambda_pix_mode(c.get_string("lambda_pix_mode", "inverse-focal"));
  s.residual.huber_delta = c.get_double("huber_delta", 1.345);
  s.residual.residual_sigma_px = c.get_double("residual_sigma_px", 1.0);
  s.residual.min_correspondences = c.get_int("min_correspondences", 10);

  s.lm.lambda0 = c.get_double("lm_lambda0", 1e-4);
  s.lm.max_iterations = c.get_int("lm_max_iters", 10);

  s.loop.temporal_exclusion = c.get_int("temporal_exclusion", 20);
  s.loop.sim_min = c.get_double("sim_min", 0.9);
  s.edge.loop_verify_ratio = c.get_double("loop_verify_ratio", 0.3);
  s.edge.edge_cap = c.get_int("edge_cap", 1024);
  s.pgo.residual = s.residual;
  s.pgo.max_iterations = c.get_int("pgo_max_iters", 25);

  if (s.window_max < 2) throw Error(ErrorCode::kInvalidArgument, "window_max must be >= 2");
  if (s.residual.residual_sigma_px <= 0.0) {
    throw Error(ErrorCode::kInvalidArgument, "residual_sigma_px must be positive");
  }
  return s;
}

struct SlamSystem::WindowOutcome {
  std::vector<int> request;
  WindowInference inference;
  std::vector<int> order;  // W_opt
  std::vector<CorrespondenceSet> matches;
  SolveResult solve;
  std::vector<Sim3> poses;  // absolute, aligned with `order`
  double valid_ratio = 0.0;  // pair (I_k, I_f)

  Sim3 pose_of(int id) const {
    for (std::size_t i = 0; i < order.size(); ++i) {
      if (order[i] == id) return poses[i];
    }
    throw Error(ErrorCode::kUnknownFrame, "frame not in window");
  }
};

SlamSystem::SlamSystem(const Provider& provider, SlamConfig config)
    : provider_(provider), config_(std::move(config)), index_(config_.voxel_size, config_.c_index_min) {
  config_.sigma.window_max = config_.window_max;
  config_.pgo.residual = config_.residual;
}

Sim3 SlamSystem::world_pose(int keyframe) const { return keyframes_.at(keyframe).pose; }

namespace {

double median(std::vector<double> v) {
  if (v.empty()) return 1.0;
  auto mid = v.begin() + static_cast<long>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

Pointmap transform_points(const Sim3& t, const Pointmap& points, const ConfidenceMap& conf) {
  Pointmap out(points.height(), points.width(), Vec3::Zero());
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (conf[i] > 0.0) out[i] = t * points[i];
  }
  return out;
}

Sim3 extrapolate(const Sim3& before, const Sim3& last) {
  const TangentSim3 delta = sim3_log(sim3_inverse(before) * last);
  return last * sim3_exp(delta);
}

}  // namespace

std::vector<int> SlamSystem::recency_window(int frame) const {
  std::vector<int> w{frame};
  for (auto it = keyframes_.rbegin(); it != keyframes_.rend(); ++it) {
    if (static_cast<int>(w.size()) >= config_.window_max) break;
    w.push_back(it->first);
  }
  return w;
}

SlamSystem::WindowOutcome SlamSystem::evaluate_window(int frame, const std::vector<int>& request) const {
  WindowOutcome out;
  out.request = request;
  out.inference = provider_.infer_window(request);
  out.order = request;
  std::sort(out.order.begin(), out.order.end());
  if (out.order.back() != frame) throw Error(ErrorCode::kInvalidArgument, "current frame must be the latest");

  std::map<int, Pointmap> window_points;
  for (int id : out.order) window_points[id] = out.inference.at(id).camera_points();

  // Residuals use the fused canonical pointmap of a keyframe, the window's own
  // pointmap otherwise.
  auto residual_points = [&](int id) -> std::pair<const Pointmap*, const ConfidenceMap*> {
    auto it = keyframes_.find(id);
    if (it != keyframes_.end() && !it->second.canonical.empty()) {
      return {&it->second.canonical, &it->second.confidence};
    }
    return {&window_points.at(id), &out.inference.at(id).confidence};
  };

  WindowChain chain;
  chain.frames = out.order;
  chain.anchor = world_pose(out.order.front());
  for (std::size_t p = 0; p + 1 < out.order.size(); ++p) {
    const int i = out.order[p];
    const int j = out.order[p + 1];
    const FrameObservation& oi = out.inference.at(i);
    const FrameObservation& oj = out.inference.at(j);
    const KeyframeRecord& ki = keyframes_.at(i);
    const PinholeIntrinsics k = ki.focal_count > 0 ? ki.intrinsics : oi.intrinsics;

    const Sim3 window_ij = sim3_inverse(oi.reference_from_camera) * oj.reference_from_camera;
    CorrespondenceSet matches = ray_match({&window_points.at(i), &oi.confidence},
                                          {&window_points.at(j), &oj.confidence}, window_ij, k, config_.match);
    matches.source_frame = i;
    matches.target_frame = j;

    const auto [src_pts, src_conf] = residual_points(i);
    const auto [tgt_pts, tgt_conf] = residual_points(j);
    PairTerms terms;
    terms.intrinsics = k;
    for (const Match& m : matches.matches) {
      if (!((*src_conf)(m.source_row, m.source_col) > 0.0)) continue;
      const auto xb = sample_pointmap(*tgt_pts, *tgt_conf, m.target_row, m.target_col);
      if (!xb) continue;
      terms.pairs.push_back({(*src_pts)(m.source_row, m.source_col), *xb, m.weight});
    }

    Sim3 init;
    if (j != frame && !ki.canonical.empty() && !keyframes_.at(j).canonical.empty()) {
      init = sim3_inverse(ki.pose) * keyframes_.at(j).pose;
    } else {
      double ratio = 1.0;
      if (!ki.canonical.empty()) {
        std::vector<double> ratios;
        const Pointmap& win = window_points.at(i);
        for (std::size_t n = 0; n < win.size(); ++n) {
          const double wn = win[n].norm();
          if (ki.confidence[n] > 0.0 && oi.confidence[n] > 0.0 && wn > 1e-12) {
            ratios.push_back(ki.canonical[n].norm() / wn);
          }
        }
        ratio = median(ratios);
      }
      Sim3 scale;
      scale.scale = ratio;
      init = scale * window_ij;
    }
    chain.transforms.push_back(init);
    chain.terms.push_back(std::move(terms));
    if (j == frame && i == last_keyframe_) out.valid_ratio = matches.valid_ratio;
    out.matches.push_back(std::move(matches));
  }

  out.solve = lm_irls_solve(chain, config_.residual, config_.lm);
  out.poses = out.solve.chain.absolute_poses();
  return out;
}

std::vector<InfoGainResult> SlamSystem::candidate_gains(int last_keyframe, const std::vector<int>& candidates,
                                                        const std::vector<OverlapScore>& overlaps,
                                                        const std::map<int, Sim3>& pose_override) const {
  auto pose = [&](int id) {
    auto it = pose_override.find(id);
    return it != pose_override.end() ? it->second : world_pose(id);
  };
  const KeyframeRecord& k = keyframes_.at(last_keyframe);
  std::vector<InfoGainResult> gains;
  if (k.canonical.empty()) return gains;
  const auto subset = low_confidence_subset(k.canonical, k.confidence, k.first_confidence, k.intrinsics,
                                            config_.sigma);
  const Sim3 world_k = pose(last_keyframe);
  for (int c : candidates) {
    const KeyframeRecord& rc = keyframes_.at(c);
    InfoGainResult g = information_gain(c, sim3_inverse(pose(c)) * world_k, rc.intrinsics, subset, config_.sigma);
    for (const auto& o : overlaps) {
      if (o.keyframe_id == c) g.overlap_score = o.score;
    }
    gains.push_back(g);
  }
  return gains;
}

void SlamSystem::reindex(int keyframe) {
  const KeyframeRecord& r = keyframes_.at(keyframe);
  if (r.canonical.empty()) return;
  const Pointmap world = transform_points(r.pose, r.canonical, r.confidence);
  index_.insert(keyframe, world, r.confidence);
}

void SlamSystem::adopt(int frame, const WindowOutcome& outcome) {
  // Keyframe poses other than the gauge follow the window solution.
  for (std::size_t i = 1; i < outcome.order.size(); ++i) {
    const int id = outcome.order[i];
    if (id == frame) continue;
    keyframes_.at(id).pose = outcome.poses[i];
    graph_.set_pose(id, outcome.poses[i]);
  }
  const Sim3 world_f = outcome.pose_of(frame);

  for (int id : outcome.order) {
    if (id == frame) continue;
    KeyframeRecord& r = keyframes_.at(id);
    const bool first = r.canonical.empty();
    const FrameObservation& obs = outcome.inference.at(id);
    const Sim3 to_keyframe = sim3_inverse(r.pose) * world_f;
    fuse_pointmap(r, transform_points(to_keyframe, obs.pointmap, obs.confidence), obs.confidence);
    update_intrinsics(r, obs.intrinsics);
    reindex(id);
    if (first) {
      const FrameDescriptor d = pooled_inverse_depth_descriptor(r.canonical, r.confidence);
      if (d.usable) descriptors_.append(id, d.values);
    }
  }

  TrackedFrame tf;
  tf.frame_id = frame;
  tf.timestamp = provider_.timestamp(frame);
  tf.keyframe = last_keyframe_;
  tf.keyframe_from_frame = sim3_inverse(world_pose(last_keyframe_)) * world_f;
  frames_.push_back(tf);
}

void SlamSystem::promote(int frame, const WindowOutcome& outcome) {
  const FrameObservation& obs = outcome.inference.at(frame);
  KeyframeRecord r;
  r.id = frame;
  r.pose = outcome.pose_of(frame);
  fuse_pointmap(r, obs.camera_points(), obs.confidence);
  update_intrinsics(r, obs.intrinsics);
  keyframes_[frame] = std::move(r);
  reindex(frame);
  graph_.add_node(frame, keyframes_.at(frame).pose);

  std::vector<EdgeProposal> proposals;
  for (std::size_t p = 0; p + 1 < outcome.order.size(); ++p) {
    EdgeProposal e;
    e.edge.from = outcome.order[p];
    e.edge.to = outcome.order[p + 1];
    e.edge.kind = EdgeKind::kSequential;
    e.edge.pairs = outcome.solve.chain.terms[p].pairs;
    e.edge.intrinsics = outcome.solve.chain.terms[p].intrinsics;
    proposals.push_back(std::move(e));
  }
  add_edges(graph_, frame, proposals, config_.edge);

  const int previous = last_keyframe_;
  last_keyframe_ = frame;
  (void)previous;
  const FrameDescriptor d = frame_descriptor(obs);
  if (config_.loop_closure) {
    if (d.usable) detect_loops(frame, obs);
    ++keyframes_since_pgo_;
    if (pending_loop_ || keyframes_since_pgo_ >= config_.pgo_every) run_pgo();
  } else if (d.usable) {
    descriptors_.append(frame, d.values);
  }
}

void SlamSystem::detect_loops(int keyframe, const FrameObservation& observation) {
  const FrameDescriptor d = frame_descriptor(observation);
  const auto candidates = loop_detect(keyframe, d.values, descriptors_, config_.loop);
  const KeyframeRecord& kf = keyframes_.at(keyframe);
  for (const auto& cand : candidates) {
    if (graph_.has_edge(cand.keyframe_id, keyframe)) continue;
    const KeyframeRecord& kc = keyframes_.at(cand.keyframe_id);
    WindowInference pair;
    try {
      const std::vector<int> request{keyframe, cand.keyframe_id};
      pair = provider_.infer_window(request);
    } catch (const Error&) {
      continue;
    }
    const FrameObservation& oc = pair.at(cand.keyframe_id);
    const FrameObservation& of = pair.at(keyframe);
    const Pointmap pc = oc.camera_points();
    const Pointmap pf = of.camera_points();
    const Sim3 c_from_f = sim3_inverse(oc.reference_from_camera) * of.reference_from_camera;
    const CorrespondenceSet matches =
        ray_match({&pc, &oc.confidence}, {&pf, &of.confidence}, c_from_f, kc.intrinsics, config_.match);
    EdgeProposal proposal;
    proposal.valid_ratio = matches.valid_ratio;
    proposal.edge.from = cand.keyframe_id;
    proposal.edge.to = keyframe;
    proposal.edge.kind = EdgeKind::kLoop;
    proposal.edge.intrinsics = kc.intrinsics;
    for (const Match& m : matches.matches) {
      if (!(kc.confidence(m.source_row, m.source_col) > 0.0)) continue;
      const auto xb = sample_pointmap(kf.canonical, kf.confidence, m.target_row, m.target_col);
      if (!xb) continue;
      proposal.edge.pairs.push_back({kc.canonical(m.source_row, m.source_col), *xb, m.weight});
    }
    if (static_cast<int>(proposal.edge.pairs.size()) < config_.residual.min_correspondences) continue;
    if (add_edges(graph_, keyframe, {proposal}, config_.edge) > 0) pending_loop_ = true;
  }
}

void SlamSystem::run_pgo() {
  keyframes_since_pgo_ = 0;
  pending_loop_ = false;
  if (graph_.nodes().size() < 2) return;
  try {
    pgo_solve(graph_, config_.pgo);
  } catch (const Error&) {
    return;
  }
  ++pgo_runs_;
  for (const auto& [id, pose] : graph_.nodes()) {
    keyframes_.at(id).pose = pose;
    reindex(id);
  }
}

void SlamSystem::track_fallback(int frame) {
  TrackedFrame tf;
  tf.frame_id = frame;
  tf.timestamp = provider_.timestamp(frame);
  tf.keyframe = last_keyframe_;
  tf.fallback = true;
  auto world = [&](const TrackedFrame& t) { return world_pose(t.keyframe) * t.keyframe_from_frame; };
  Sim3 guess = world_pose(last_keyframe_);
  if (frames_.size() >= 2) {
    guess = extrapolate(world(frames_[frames_.size() - 2]), world(frames_.back()));
  } else if (!frames_.empty()) {
    guess = world(frames_.back());
  }
  tf.keyframe_from_frame = sim3_inverse(world_pose(last_keyframe_)) * guess;
  frames_.push_back(tf);
}

void SlamSystem::bootstrap(int frame) {
  KeyframeRecord r;
  r.id = frame;
  keyframes_[frame] = r;
  graph_.add_node(frame, r.pose);
  last_keyframe_ = frame;
  TrackedFrame tf;
  tf.frame_id = frame;
  tf.timestamp = provider_.timestamp(frame);
  tf.keyframe = frame;
  frames_.push_back(tf);
}

void SlamSystem::process_frame(int frame) {
  const auto start = std::chrono::steady_clock::now();
  FrameMetrics m;
  m.frame_id = frame;

  if (keyframes_.empty()) {
    bootstrap(frame);
    m.window = {frame};
    m.promoted = true;
    m.valid_ratio = 1.0;
  } else {
    const int k = last_keyframe_;
    std::optional<WindowOutcome> chosen;
    std::map<std::vector<int>, std::shared_ptr<const WindowOutcome>> cache;
    auto run_window = [&](const std::vector<int>& w) -> const WindowOutcome& {
      auto it = cache.find(w);
      if (it == cache.end()) {
        ++m.evaluations;
        it = cache.emplace(w, std::make_shared<const WindowOutcome>(evaluate_window(frame, w))).first;
      }
      return *it->second;
    };

    try {
      if (config_.policy == WindowPolicy::kRecency || config_.window_max < 3) {
        chosen = run_window(recency_window(frame));
      } else {
        std::vector<OverlapScore> overlaps;
        if (index_.contains(k)) overlaps = index_.top_n_candidates(k, config_.top_n);
        WindowState state;
        state.current = frame;
        state.last_keyframe = k;
        for (const auto& o : overlaps) state.candidates.push_back(o.keyframe_id);
        state = rerank(state, candidate_gains(k, state.candidates, overlaps, {}));

        const EvaluateWindow evaluate = [&](const std::vector<int>& w) {
          return run_window(w).solve.report;
        };
        const RerankWindow rerank_fn = [&](const WindowState& s) {
          std::map<int, Sim3> poses;
          auto it = cache.find(s.window());
          if (it != cache.end()) {
            for (std::size_t i = 0; i < it->second->order.size(); ++i) {
              if (it->second->order[i] != frame) poses[it->second->order[i]] = it->second->poses[i];
            }
          }
          return rerank(s, candidate_gains(k, s.candidates, overlaps, poses));
        };
        const ActivationResult act = adaptive_activation(state, evaluate, rerank_fn, config_.sigma);
        chosen = run_window(act.state.window());
        m.reverted = act.reverted;
      }
    } catch (const Error& e) {
      chosen.reset();
      m.failure = e.what();
    }
    if (!chosen && config_.window_max >= 2) {
      try {
        chosen = run_window({frame, k});
      } catch (const Error& e) {
        chosen.reset();
        m.failure = e.what();
      }
    }

    if (chosen) {
      adopt(frame, *chosen);
      m.window = chosen->request;
      m.kappa = chosen->solve.report.kappa;
      m.iterations = chosen->solve.iterations;
      m.valid_ratio = chosen->valid_ratio;
      m.expanded = chosen->request.size() > 3;
      if (keyframe_decision(chosen->valid_ratio, config_.keyframe_threshold)) {
        promote(frame, *chosen);
        m.promoted = true;
      }
    } else {
      track_fallback(frame);
      m.fallback = true;
      m.window = {frame, k};
    }
  }
  m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  total_seconds_ += m.seconds;
  metrics_.push_back(std::move(m));
}

void SlamSystem::run(int max_frames) {
  const int n = max_frames < 0 ? provider_.frame_count() : std::min(max_frames, provider_.frame_count());
  for (int f = 0; f < n; ++f) process_frame(f);
}

std::vector<TimedPose> SlamSystem::trajectory() const {
  std::vector<TimedPose> out;
  for (const auto& f : frames_) {
    out.push_back({f.timestamp, world_pose(f.keyframe) * f.keyframe_from_frame});
  }
  return out;
}

std::vector<TimedPose> SlamSystem::keyframe_trajectory() const {
  std::vector<TimedPose> out;
  for (const auto& [id, r] : keyframes_) out.push_back({provider_.timestamp(id), r.pose});
  return out;
}

std::vector<MapPoint> SlamSystem::map_points(double min_confidence) const {
  std::vector<MapPoint> out;
  for (const auto& [id, r] : keyframes_) {
    for (std::size_t i = 0; i < r.canonical.size(); ++i) {
      if (r.confidence[i] > 0.0 && r.confidence[i] >= min_confidence) {
        out.push_back({r.pose * r.canonical[i], r.confidence[i]});
      }
    }
  }
  return out;
}

std::unique_ptr<Provider> make_provider(const std::string& mode, const std::filesystem::path& dataset,
                                        const Config& config, std::uint64_t seed, int window_max) {
  const int provider_max = std::max(5, window_max);
  if (mode == "synthetic") {
    const std::string preset = dataset.empty() ? config.get_string("scene", "room_sweep") : dataset.string();
    const SyntheticNoise noise = synthetic_noise_from_config(config, seed);
    SyntheticScene scene = make_synthetic_scene(preset, config.get_int("frames", 100), noise,
                                                config.get_double("focal", 60.0), config.get_int("resolution", 64));
    return std::make_unique<SyntheticProvider>(std::move(scene), provider_max);
  }
  if (mode == "replay") {
    ReplayOptions options;
    options.noise.rotation_sigma = config.get_double("replay_rotation_sigma", 0.0);
    options.noise.translation_sigma = config.get_double("replay_translation_sigma", 0.0);
    options.noise.scale_sigma = config.get_double("replay_scale_sigma", 0.0);
    options.noise.seed = seed;
    options.downsample = config.get_int("replay_downsample", 1);
    options.window_max = provider_max;
    return replay_load(dataset, options);
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown mode " + mode + " (expected synthetic or replay)");
}

void export_trajectory(const std::filesystem::path& path, const std::vector<TimedPose>& poses) {
  write_tum_trajectory(path, poses);
}

void export_map(const std::filesystem::path& path, const std::vector<MapPoint>& points) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write map " + path.string());
  out << "ply\nformat ascii 1.0\nelement vertex " << points.size()
      << "\nproperty float x\nproperty float y\nproperty float z\nproperty float confidence\nend_header\n";
  char buf[160];
  for (const auto& p : points) {
    std::snprintf(buf, sizeof(buf), "%.7g %.7g %.7g %.7g\n", p.position.x(), p.position.y(), p.position.z(),
                  p.confidence);
    out << buf;
  }
}

double closure_error(const std::vector<TimedPose>& estimated, const std::vector<TimedPose>& reference) {
  const auto pairs = associate(estimated, reference);
  if (pairs.size() < 2) throw Error(ErrorCode::kEvaluation, "closure error needs at least 2 associated poses");
  std::vector<Vec3> est, ref;
  for (const auto& [i, j] : pairs) {
    est.push_back(estimated[i].pose.translation);
    ref.push_back(reference[j].pose.translation);
  }
  const Sim3 align = umeyama_alignment(est, ref, true);
  const Vec3 rel_est = align * est.back() - align * est.front();
  const Vec3 rel_ref = ref.back() - ref.front();
  return (rel_est - rel_ref).norm();
}

RunReport evaluate_run(const SlamSystem& slam, const Provider& provider, bool with_map) {
  RunReport r;
  const auto est = slam.trajectory();
  std::vector<TimedPose> ref;
  for (int id = 0; id < provider.frame_count(); ++id) {
    if (auto p = provider.ground_truth_pose(id)) ref.push_back({provider.timestamp(id), *p});
  }
  if (est.size() >= 2 && ref.size() >= 2) {
    r.ate = evaluate_ate(est, ref);
    r.extent = trajectory_extent(ref);
    r.closure_error = closure_error(est, ref);
  }
  if (with_map && r.ate) {
    if (const auto* synthetic = dynamic_cast<const SyntheticProvider*>(&provider)) {
      std::vector<Vec3> estimate;
      for (const auto& p : slam.map_points(0.0)) estimate.push_back(r.ate->alignment * p.position);
      const auto reference = synthetic->scene().ground_truth_cloud(std::max(1, provider.frame_count() / 20));
      if (!estimate.empty() && !reference.empty()) r.map = evaluate_map(estimate, reference);
    }
  }
  r.keyframes = static_cast<int>(slam.keyframes().size());
  r.loop_edges = slam.pose_graph().loop_edge_count();
  r.pgo_runs = slam.pgo_runs();
  r.seconds = slam.total_seconds();
  for (const auto& m : slam.metrics()) {
    r.max_kappa = std::max(r.max_kappa, m.kappa);
    r.max_window = std::max(r.max_window, static_cast<int>(m.window.size()));
    r.expanded_windows += m.expanded ? 1 : 0;
    r.fallbacks += m.fallback ? 1 : 0;
  }
  return r;
}

void export_metrics(const std::filesystem::path& path, const SlamSystem& slam, const RunReport& report) {
  nlohmann::ordered_json j;
  const auto& c = slam.config();
  j["config"] = {{"window_policy", to_string(c.policy)},
                 {"window_max", c.window_max},
                 {"residual", to_string(c.residual.mode)},
                 {"revert_policy", to_string(c.sigma.revert_policy)},
                 {"loop_closure", c.loop_closure}};
  if (report.ate) {
    j["ate"] = {{"rmse", report.ate->rmse},
                {"mean", report.ate->mean},
                {"median", report.ate->median},
                {"max", report.ate->max},
                {"associations", report.ate->associations},
                {"trajectory_extent", report.extent},
                {"rmse_over_extent", report.extent > 0 ? report.ate->rmse / report.extent : 0.0}};
  }
  if (report.closure_error) j["closure_error"] = *report.closure_error;
  if (report.map) {
    j["map"] = {{"accuracy", report.map->accuracy},
                {"completion", report.map->completion},
                {"chamfer", report.map->chamfer},
                {"estimate_points", report.map->estimate_points},
                {"reference_points", report.map->reference_points}};
  }
  j["summary"] = {{"frames", slam.metrics().size()},
                  {"keyframes", report.keyframes},
                  {"loop_edges", report.loop_edges},
                  {"pgo_runs", report.pgo_runs},
                  {"max_kappa", report.max_kappa},
                  {"max_window", report.max_window},
                  {"expanded_windows", report.expanded_windows},
                  {"fallbacks", report.fallbacks},
                  {"seconds", report.seconds}};
  nlohmann::ordered_json frames = nlohmann::ordered_json::array();
  for (const auto& m : slam.metrics()) {
    frames.push_back({{"frame", m.frame_id},
                      {"window", m.window},
                      {"kappa", m.kappa},
                      {"valid_ratio", m.valid_ratio},
                      {"iterations", m.iterations},
                      {"evaluations", m.evaluations},
                      {"promoted", m.promoted},
                      {"reverted", m.reverted},
                      {"fallback", m.fallback},
                      {"failure", m.failure},
                      {"seconds", m.seconds}});
  }
  j["frames"] = frames;
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write metrics " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace pmslam
