#include "pmslam/backend.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <set>

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "pmslam/error.hpp"

namespace pmslam {

void DescriptorDatabase::append(int keyframe_id, const Eigen::VectorXd& descriptor) {
  if (contains(keyframe_id)) return;
  entries_.push_back({keyframe_id, descriptor, size()});
}

bool DescriptorDatabase::contains(int keyframe_id) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const DescriptorEntry& e) { return e.keyframe_id == keyframe_id; });
}

std::vector<LoopCandidate> loop_detect(int query_id, const Eigen::VectorXd& descriptor,
                                       DescriptorDatabase& db, const LoopOptions& options, bool append) {
  std::vector<LoopCandidate> ranked;
  const int query_index = db.size();
  const double qn = descriptor.norm();
  if (qn > 0.0) {
    for (const auto& e : db.entries()) {
      if (query_index - e.index <= options.temporal_exclusion) continue;
      if (e.values.size() != descriptor.size()) continue;
      const double en = e.values.norm();
      if (!(en > 0.0)) continue;
      const double sim = e.values.dot(descriptor) / (en * qn);
      if (sim >= options.sim_min) ranked.push_back({e.keyframe_id, sim});
    }
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const LoopCandidate& a, const LoopCandidate& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    return a.keyframe_id > b.keyframe_id;
  });
  if (static_cast<int>(ranked.size()) > options.top_k) ranked.resize(static_cast<std::size_t>(options.top_k));
  if (append) db.append(query_id, descriptor);
  return ranked;
}

void PoseGraph::add_node(int id, const Sim3& pose) {
  if (nodes_.empty()) gauge_ = id;
  nodes_[id] = pose;
}

const Sim3& PoseGraph::pose(int id) const {
  auto it = nodes_.find(id);
  if (it == nodes_.end()) throw Error(ErrorCode::kUnknownFrame, "pose graph has no node " + std::to_string(id));
  return it->second;
}

void PoseGraph::set_pose(int id, const Sim3& pose) {
  auto it = nodes_.find(id);
  if (it == nodes_.end()) throw Error(ErrorCode::kUnknownFrame, "pose graph has no node " + std::to_string(id));
  it->second = pose;
}

bool PoseGraph::has_edge(int a, int b) const {
  return std::any_of(edges_.begin(), edges_.end(), [&](const PoseGraphEdge& e) {
    return (e.from == a && e.to == b) || (e.from == b && e.to == a);
  });
}

bool PoseGraph::add_edge(PoseGraphEdge edge) {
  if (!has_node(edge.from) || !has_node(edge.to)) {
    throw Error(ErrorCode::kUnknownFrame,
                "edge (" + std::to_string(edge.from) + ", " + std::to_string(edge.to) + ") names an unknown node");
  }
  if (edge.from == edge.to || has_edge(edge.from, edge.to)) return false;
  edges_.push_back(std::move(edge));
  return true;
}

int PoseGraph::loop_edge_count() const {
  return static_cast<int>(std::count_if(edges_.begin(), edges_.end(),
                                        [](const PoseGraphEdge& e) { return e.kind == EdgeKind::kLoop; }));
}

std::vector<int> PoseGraph::disconnected_nodes() const {
  std::set<int> seen;
  if (has_node(gauge_)) {
    std::queue<int> q;
    q.push(gauge_);
    seen.insert(gauge_);
    while (!q.empty()) {
      const int n = q.front();
      q.pop();
      for (const auto& e : edges_) {
        if (e.pairs.empty()) continue;
        int other = -1;
        if (e.from == n) other = e.to;
        if (e.to == n) other = e.from;
        if (other >= 0 && seen.insert(other).second) q.push(other);
      }
    }
  }
  std::vector<int> out;
  for (const auto& [id, pose] : nodes_) {
    if (!seen.count(id)) out.push_back(id);
  }
  return out;
}

std::vector<PointPair> subsample_uniform(const std::vector<PointPair>& pairs, int cap) {
  if (cap <= 0 || static_cast<int>(pairs.size()) <= cap) return pairs;
  std::vector<PointPair> out;
  out.reserve(static_cast<std::size_t>(cap));
  const double step = static_cast<double>(pairs.size()) / cap;
  for (int i = 0; i < cap; ++i) out.push_back(pairs[static_cast<std::size_t>(std::floor(i * step))]);
  return out;
}

int add_edges(PoseGraph& graph, int keyframe, const std::vector<EdgeProposal>& proposals,
              const EdgeOptions& options) {
  if (!graph.has_node(keyframe)) {
    throw Error(ErrorCode::kUnknownFrame, "pose graph has no node " + std::to_string(keyframe));
  }
  int added = 0;
  for (const auto& p : proposals) {
    if (p.edge.kind == EdgeKind::kLoop && p.valid_ratio < options.loop_verify_ratio) continue;
    PoseGraphEdge edge = p.edge;
    edge.pairs = subsample_uniform(edge.pairs, options.edge_cap);
    if (graph.add_edge(std::move(edge))) ++added;
  }
  return added;
}

namespace {

Sim3 relative(const PoseGraph& graph, const PoseGraphEdge& e) {
  return sim3_inverse(graph.pose(e.from)) * graph.pose(e.to);
}

}  // namespace

double pose_graph_cost(const PoseGraph& graph, const ResidualOptions& options) {
  double cost = 0.0;
  for (const auto& e : graph.edges()) {
    const Sim3 t = relative(graph, e);
    for (const auto& pair : e.pairs) cost += term_cost(pair, t, e.intrinsics, options);
  }
  return cost;
}

PgoResult pgo_solve(PoseGraph& graph, const PgoOptions& options) {
  if (graph.nodes().size() < 2) throw Error(ErrorCode::kInvalidArgument, "pose graph needs >= 2 nodes");
  const auto lost = graph.disconnected_nodes();
  if (!lost.empty()) {
    std::string ids;
    for (int id : lost) ids += (ids.empty() ? "" : ",") + std::to_string(id);
    throw Error(ErrorCode::kSingularNormalEquations, "pose graph component {" + ids + "} is disconnected from the gauge");
  }
  std::map<int, int> slot;
  for (const auto& [id, pose] : graph.nodes()) {
    if (id != graph.gauge()) slot[id] = static_cast<int>(slot.size());
  }
  // Node scales are held fixed.
  constexpr int kNodeDim = 6;
  const int dim = kNodeDim * static_cast<int>(slot.size());
  PgoResult result;
  double cost = pose_graph_cost(graph, options.residual);
  result.cost_history.push_back(cost);

  for (int iter = 0; iter < options.max_iterations; ++iter) {
    ++result.iterations;
    std::vector<Eigen::Triplet<double>> triplets;
    Eigen::VectorXd gradient = Eigen::VectorXd::Zero(dim);
    for (const auto& e : graph.edges()) {
      const Sim3 t = relative(graph, e);
      const Mat7 adj = sim3_adjoint(sim3_inverse(graph.pose(e.from)));
      Mat7 h = Mat7::Zero();
      Vec7 g = Vec7::Zero();
      for (const auto& pair : e.pairs) {
        const WhitenedTerm w = whiten_term(pair, t, e.intrinsics, options.residual, true);
        if (!w.ok) continue;
        const double hw = huber_weight(w.row.norm(), options.residual.huber_delta);
        const Mat57 j = w.jac * adj;
        h += hw * j.transpose() * j;
        g += hw * j.transpose() * w.row;
      }
      // d r / d tau_to = J Adj, d r / d tau_from = -J Adj.
      const int si = slot.count(e.from) ? slot[e.from] : -1;
      const int sj = slot.count(e.to) ? slot[e.to] : -1;
      auto add_block = [&](int a, int b, const Mat7& m) {
        for (int r = 0; r < kNodeDim; ++r) {
          for (int c = 0; c < kNodeDim; ++c) {
            if (m(r, c) != 0.0) triplets.emplace_back(kNodeDim * a + r, kNodeDim * b + c, m(r, c));
          }
        }
      };
      if (si >= 0) {
        add_block(si, si, h);
        gradient.segment<kNodeDim>(kNodeDim * si) -= g.head<kNodeDim>();
      }
      if (sj >= 0) {
        add_block(sj, sj, h);
        gradient.segment<kNodeDim>(kNodeDim * sj) += g.head<kNodeDim>();
      }
      if (si >= 0 && sj >= 0) {
        add_block(si, sj, -h);
        add_block(sj, si, -h);
      }
    }
    for (int d = 0; d < dim; ++d) triplets.emplace_back(d, d, 1e-12);
    Eigen::SparseMatrix<double> hmat(dim, dim);
    hmat.setFromTriplets(triplets.begin(), triplets.end());
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(hmat);
    if (solver.info() != Eigen::Success) {
      throw Error(ErrorCode::kSingularNormalEquations, "pose graph normal equations are singular");
    }
    const Eigen::VectorXd delta = -solver.solve(gradient);
    if (solver.info() != Eigen::Success || !delta.allFinite()) {
      throw Error(ErrorCode::kSingularNormalEquations, "pose graph solve failed");
    }
    double max_update = 0.0;
    auto node_step = [&](int s) {
      Vec7 tau = Vec7::Zero();
      tau.head<kNodeDim>() = delta.segment<kNodeDim>(kNodeDim * s);
      return tau;
    };
    for (const auto& [id, s] : slot) max_update = std::max(max_update, node_step(s).norm());
    if (max_update < options.tolerance) {
      result.converged = true;
      break;
    }

    const std::map<int, Sim3> saved = graph.nodes();
    bool accepted = false;
    for (double alpha = 1.0; alpha > 1e-3; alpha *= 0.5) {
      for (const auto& [id, s] : slot) graph.set_pose(id, left_plus(alpha * node_step(s), saved.at(id)));
      const double trial = pose_graph_cost(graph, options.residual);
      if (trial <= cost) {
        cost = trial;
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      for (const auto& [id, pose] : saved) graph.set_pose(id, pose);
      result.converged = true;
      break;
    }
    result.cost_history.push_back(cost);
  }
  return result;
}

}  // namespace pmslam
