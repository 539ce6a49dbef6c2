#pragma once

#include <map>
#include <vector>

#include <Eigen/Core>

#include "pmslam/geometry.hpp"
#include "pmslam/optimizer.hpp"

namespace pmslam {

struct DescriptorEntry {
  int keyframe_id = -1;
  Eigen::VectorXd values;
  int index = 0;  // insertion order
};

class DescriptorDatabase {
 public:
  void append(int keyframe_id, const Eigen::VectorXd& descriptor);
  const std::vector<DescriptorEntry>& entries() const { return entries_; }
  int size() const { return static_cast<int>(entries_.size()); }
  bool contains(int keyframe_id) const;

 private:
  std::vector<DescriptorEntry> entries_;
};

struct LoopOptions {
  int temporal_exclusion = 20;
  double sim_min = 0.9;
  int top_k = 2;
};

struct LoopCandidate {
  int keyframe_id = -1;
  double similarity = 0.0;
  bool operator==(const LoopCandidate&) const = default;
};

/// Top-k cosine matches outside the temporal exclusion window; appends the query afterwards.
std::vector<LoopCandidate> loop_detect(int query_id, const Eigen::VectorXd& descriptor,
                                       DescriptorDatabase& db, const LoopOptions& options = {},
                                       bool append = true);

enum class EdgeKind { kSequential, kLoop };

struct PoseGraphEdge {
  int from = -1;
  int to = -1;
  EdgeKind kind = EdgeKind::kSequential;
  std::vector<PointPair> pairs;  // x_a in `from`, x_b in `to`
  PinholeIntrinsics intrinsics;  // of `from`
};

class PoseGraph {
 public:
  void add_node(int id, const Sim3& pose);
  bool has_node(int id) const { return nodes_.count(id) > 0; }
  const Sim3& pose(int id) const;
  void set_pose(int id, const Sim3& pose);
  const std::map<int, Sim3>& nodes() const { return nodes_; }

  bool has_edge(int a, int b) const;
  /// Rejects duplicates of the unordered pair.
  bool add_edge(PoseGraphEdge edge);
  const std::vector<PoseGraphEdge>& edges() const { return edges_; }
  int loop_edge_count() const;

  int gauge() const { return gauge_; }
  /// Node ids not reachable from the gauge node.
  std::vector<int> disconnected_nodes() const;

 private:
  std::map<int, Sim3> nodes_;
  std::vector<PoseGraphEdge> edges_;
  int gauge_ = -1;
};

struct EdgeProposal {
  PoseGraphEdge edge;
  double valid_ratio = 1.0;  // verification ratio for loop proposals
};

struct EdgeOptions {
  double loop_verify_ratio = 0.3;
  int edge_cap = 1024;
};

/// Uniform subsample to at most `cap` entries, keeping order.
std::vector<PointPair> subsample_uniform(const std::vector<PointPair>& pairs, int cap);

/// Adds sequential edges and verified loop edges; returns the number added.
int add_edges(PoseGraph& graph, int keyframe, const std::vector<EdgeProposal>& proposals,
              const EdgeOptions& options = {});

struct PgoOptions {
  ResidualOptions residual;
  int max_iterations = 25;
  double tolerance = 1e-6;
};

struct PgoResult {
  int iterations = 0;
  std::vector<double> cost_history;
  bool converged = false;
};

double pose_graph_cost(const PoseGraph& graph, const ResidualOptions& options);
PgoResult pgo_solve(PoseGraph& graph, const PgoOptions& options = {});

}  // namespace pmslam
