#pragma once

#include <functional>
#include <limits>
#include <optional>

#include "lesp/common.hpp"
#include "lesp/maze.hpp"
#include "lesp/reach.hpp"
#include "lesp/replay.hpp"
#include "lesp/repr.hpp"
#include "lesp/rng.hpp"

namespace lesp {

// Batched goal-conditioned value: columns of the first argument are 4-d state
// inputs, columns of the second are latent goals. Lets tests substitute a
// distance oracle for the learned net.
using BatchValueFn =
    std::function<Eigen::RowVectorXd(const Eigen::MatrixXd&,
                                     const Eigen::MatrixXd&)>;

inline BatchValueFn reach_value_fn(const ReachNet& reach) {
  return [&reach](const Eigen::MatrixXd& s, const Eigen::MatrixXd& g) {
    return reach.value_batch(s, g);
  };
}

inline constexpr double kNoEdge = std::numeric_limits<double>::infinity();

// Directed landmark graph. Node order: landmarks, then goal, then current
// state. Finite weights are estimated step costs in [0, tau]; missing edges
// (and the diagonal) are infinite.
struct LandmarkGraph {
  std::vector<StateVec> nodes;
  Eigen::MatrixXd weights;
  double tau = 0.0;
  int goal_index = -1;
  int current_index = -1;

  int size() const { return static_cast<int>(nodes.size()); }
};

struct SelectedLandmark {
  LatentPoint latent = LatentPoint::Zero();
  int node_index = -1;
  std::vector<int> path;
};

// Greedy max-min landmark selection in latent space. Ties go to the lowest
// input index, so the result is a pure function of (points, k, seed, phi).
inline std::vector<StateVec> fps(const std::vector<StateVec>& points, int k,
                                 int seed_index, const ReprNet& phi) {
  if (points.empty()) throw std::invalid_argument("fps: empty point set");
  if (k < 1) throw std::invalid_argument("fps: k must be at least 1");
  const int n = static_cast<int>(points.size());
  if (seed_index < 0 || seed_index >= n)
    throw std::invalid_argument("fps: seed index out of range");

  Eigen::MatrixXd in(4, n);
  for (int i = 0; i < n; ++i) in.col(i) = points[static_cast<std::size_t>(i)].to_input();
  const Eigen::MatrixXd z = phi.embed_batch(in);

  const int take = std::min(k, n);
  std::vector<StateVec> out;
  out.reserve(static_cast<std::size_t>(take));
  std::vector<bool> chosen(static_cast<std::size_t>(n), false);
  Eigen::VectorXd min_dist =
      Eigen::VectorXd::Constant(n, std::numeric_limits<double>::infinity());

  int last = seed_index;
  chosen[static_cast<std::size_t>(last)] = true;
  out.push_back(points[static_cast<std::size_t>(last)]);
  while (static_cast<int>(out.size()) < take) {
    int best = -1;
    double best_dist = -1.0;
    for (int i = 0; i < n; ++i) {
      if (chosen[static_cast<std::size_t>(i)]) continue;
      min_dist[i] = std::min(min_dist[i], (z.col(i) - z.col(last)).norm());
      if (min_dist[i] > best_dist) {
        best_dist = min_dist[i];
        best = i;
      }
    }
    chosen[static_cast<std::size_t>(best)] = true;
    out.push_back(points[static_cast<std::size_t>(best)]);
    last = best;
  }
  return out;
}

// All ordered pairs weighted by estimated reachability effort max(0, -V);
// edges costlier than tau are dropped. One batched value call covers the
// whole matrix.
inline LandmarkGraph build_graph(const std::vector<StateVec>& landmarks,
                                 const StateVec& current,
                                 const StateVec& goal_state,
                                 const BatchValueFn& value, const ReprNet& phi,
                                 double tau) {
  LandmarkGraph g;
  g.nodes = landmarks;
  g.nodes.push_back(goal_state);
  g.nodes.push_back(current);
  g.tau = tau;
  const int n = g.size();
  g.goal_index = n - 2;
  g.current_index = n - 1;

  Eigen::MatrixXd in(4, n);
  for (int i = 0; i < n; ++i) in.col(i) = g.nodes[static_cast<std::size_t>(i)].to_input();
  const Eigen::MatrixXd lat = phi.embed_batch(in);

  Eigen::MatrixXd src(4, n * n), dst(2, n * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      src.col(i * n + j) = in.col(i);
      dst.col(i * n + j) = lat.col(j);
    }
  const Eigen::RowVectorXd v = value(src, dst);
  if (v.size() != n * n)
    throw TrainingError("build_graph: value function returned wrong size");

  g.weights = Eigen::MatrixXd::Constant(n, n, kNoEdge);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      const double w = std::max(0.0, -v[i * n + j]);
      if (w <= tau) g.weights(i, j) = w;
    }
  return g;
}

inline LandmarkGraph build_graph(const std::vector<StateVec>& landmarks,
                                 const StateVec& current,
                                 const StateVec& goal_state,
                                 const ReachNet& reach, const ReprNet& phi,
                                 double tau) {
  return build_graph(landmarks, current, goal_state, reach_value_fn(reach),
                     phi, tau);
}

struct PathResult {
  bool found = false;
  std::vector<int> nodes;
  double cost = kNoEdge;
};

// Dijkstra over the dense matrix; n stays at n_cov + 2 so the quadratic scan
// beats a heap. Unvisited minimum and relaxation both break ties toward the
// lower node index.
inline PathResult shortest_path(const LandmarkGraph& g, int src, int dst) {
  const int n = g.size();
  if (src < 0 || src >= n || dst < 0 || dst >= n)
    throw std::invalid_argument("shortest_path: node index out of range");
  std::vector<double> dist(static_cast<std::size_t>(n), kNoEdge);
  std::vector<int> prev(static_cast<std::size_t>(n), -1);
  std::vector<bool> done(static_cast<std::size_t>(n), false);
  dist[static_cast<std::size_t>(src)] = 0.0;

  for (int round = 0; round < n; ++round) {
    int u = -1;
    double best = kNoEdge;
    for (int i = 0; i < n; ++i)
      if (!done[static_cast<std::size_t>(i)] &&
          dist[static_cast<std::size_t>(i)] < best) {
        best = dist[static_cast<std::size_t>(i)];
        u = i;
      }
    if (u < 0) break;
    done[static_cast<std::size_t>(u)] = true;
    if (u == dst) break;
    for (int w = 0; w < n; ++w) {
      const double edge = g.weights(u, w);
      if (edge == kNoEdge) continue;
      if (dist[static_cast<std::size_t>(u)] + edge <
          dist[static_cast<std::size_t>(w)]) {
        dist[static_cast<std::size_t>(w)] =
            dist[static_cast<std::size_t>(u)] + edge;
        prev[static_cast<std::size_t>(w)] = u;
      }
    }
  }

  PathResult res;
  if (dist[static_cast<std::size_t>(dst)] == kNoEdge) return res;
  res.found = true;
  res.cost = dist[static_cast<std::size_t>(dst)];
  for (int at = dst; at != -1; at = prev[static_cast<std::size_t>(at)])
    res.nodes.push_back(at);
  std::reverse(res.nodes.begin(), res.nodes.end());
  return res;
}

// Plan current -> goal, then pick the path node the agent can reach most
// easily right now (the current-state node itself is excluded: its own value
// is trivially maximal). No path -> empty, caller falls back to novelty-only
// selection.
inline std::optional<SelectedLandmark> select_landmark(
    const LandmarkGraph& g, const BatchValueFn& value, const ReprNet& phi) {
  const PathResult path = shortest_path(g, g.current_index, g.goal_index);
  if (!path.found) return std::nullopt;

  std::vector<int> candidates;
  for (int node : path.nodes)
    if (node != g.current_index) candidates.push_back(node);
  if (candidates.empty()) return std::nullopt;

  const int m = static_cast<int>(candidates.size());
  Eigen::MatrixXd src(4, m), dst(2, m);
  Eigen::MatrixXd cand_in(4, m);
  for (int i = 0; i < m; ++i)
    cand_in.col(i) =
        g.nodes[static_cast<std::size_t>(candidates[static_cast<std::size_t>(i)])].to_input();
  const Eigen::MatrixXd cand_lat = phi.embed_batch(cand_in);
  for (int i = 0; i < m; ++i) {
    src.col(i) = g.nodes[static_cast<std::size_t>(g.current_index)].to_input();
    dst.col(i) = cand_lat.col(i);
  }
  const Eigen::RowVectorXd v = value(src, dst);

  int best = 0;
  for (int i = 1; i < m; ++i)
    if (-v[i] < -v[best]) best = i;

  SelectedLandmark sel;
  sel.node_index = candidates[static_cast<std::size_t>(best)];
  sel.latent = cand_lat.col(best);
  sel.path = path.nodes;
  return sel;
}

inline std::optional<SelectedLandmark> select_landmark(const LandmarkGraph& g,
                                                       const ReachNet& reach,
                                                       const ReprNet& phi) {
  return select_landmark(g, reach_value_fn(reach), phi);
}

// One full planning event: subsample a landmark pool from the random-walk
// buffer, FPS it, wire the graph, plan, select.
inline std::optional<SelectedLandmark> plan_exploration_landmark(
    const ReplayBuffer<Transition>& b_pre, const StateVec& current,
    const StateVec& goal_state, const ReachNet& reach, const ReprNet& phi,
    int n_cov, double tau, int pool_size, Rng& rng,
    LandmarkGraph* graph_out = nullptr) {
  if (b_pre.empty()) return std::nullopt;
  std::vector<StateVec> pool;
  pool.reserve(static_cast<std::size_t>(pool_size));
  for (int i = 0; i < pool_size; ++i)
    pool.push_back(b_pre.at(rng.uniform_int(b_pre.size())).state);
  const std::vector<StateVec> landmarks = fps(pool, n_cov, 0, phi);
  const LandmarkGraph g =
      build_graph(landmarks, current, goal_state, reach, phi, tau);
  if (graph_out) *graph_out = g;
  return select_landmark(g, reach_value_fn(reach), phi);
}

// edge list plus chosen path, for offline plotting
inline void dump_graph(std::ostream& os, const LandmarkGraph& g,
                       const std::vector<int>& path) {
  char buf[96];
  for (int i = 0; i < g.size(); ++i) {
    const Vec2 p = g.nodes[static_cast<std::size_t>(i)].pos;
    std::snprintf(buf, sizeof(buf), "node %d %.10g %.10g\n", i, p.x(), p.y());
    os << buf;
  }
  for (int i = 0; i < g.size(); ++i)
    for (int j = 0; j < g.size(); ++j) {
      if (g.weights(i, j) == kNoEdge) continue;
      std::snprintf(buf, sizeof(buf), "edge %d %d %.10g\n", i, j,
                    g.weights(i, j));
      os << buf;
    }
  os << "path";
  for (int node : path) os << " " << node;
  os << "\n";
}

}  // namespace lesp
