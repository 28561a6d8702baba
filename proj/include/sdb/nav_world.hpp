#pragma once

// Synthetic navigable-graph environment: connected random geometric graphs,
// landmark-token instructions with optional distractors, a shortest-path
// expert, candidate sets with STOP, and the evaluation metrics.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <queue>
#include <stdexcept>
#include <vector>

#include "sdb/core.hpp"
#include "sdb/rng.hpp"

namespace sdb {

struct UnsatisfiableError : std::runtime_error {
  UnsatisfiableError() : std::runtime_error("Unsatisfiable: cannot place start/goal at min_hops") {}
};

struct UnreachableError : std::runtime_error {
  UnreachableError() : std::runtime_error("Unreachable: no path to goal") {}
};

struct EmptySetError : std::invalid_argument {
  EmptySetError() : std::invalid_argument("EmptySet: no episodes to evaluate") {}
};

struct WorldConfig {
  int min_nodes = 6;
  int max_nodes = 10;
  int min_hops = 2;
  double distractor_rate = 0.25;
  bool random_edge_lengths = false;  // unit lengths by default
  double connect_radius = 0.45;
  double feature_jitter = 0.1;
  int max_resample_attempts = 256;
};

// Fixed per-landmark base features shared by every graph, so evidence stays
// predictable from instruction tokens on held-out graphs.
inline const Eigen::MatrixXd& landmark_feature_table(int num_landmarks, int env_dim) {
  static Eigen::MatrixXd table;
  if (table.rows() != num_landmarks || table.cols() != env_dim) {
    Rng rng = make_rng(mix_seed(0x5DB5DB5DULL, static_cast<std::uint64_t>(num_landmarks * 131 + env_dim)));
    table.resize(num_landmarks, env_dim);
    const double scale = 1.0 / std::sqrt(static_cast<double>(env_dim));
    for (Eigen::Index i = 0; i < table.rows(); ++i)
      for (Eigen::Index j = 0; j < table.cols(); ++j) table(i, j) = gaussian<double>(rng) * scale;
  }
  return table;
}

class NavGraph {
 public:
  struct Node {
    Eigen::RowVectorXd feature;  // env_dim
    int landmark = 0;
  };

  std::vector<Node> nodes;
  // adjacency[i] = (neighbor id, edge length), ascending by neighbor id
  std::vector<std::vector<std::pair<int, double>>> adjacency;
  int start = 0;
  int goal = 0;
  std::uint64_t seed = 0;

  int size() const { return static_cast<int>(nodes.size()); }

  const std::vector<std::pair<int, double>>& neighbors(int node) const { return adjacency.at(node); }

  double edge_length(int a, int b) const {
    for (const auto& [n, len] : adjacency[a])
      if (n == b) return len;
    throw std::out_of_range("edge_length: not adjacent");
  }

  // Weighted shortest-path distances from `from` to every node.
  std::vector<double> distances_from(int from) const {
    std::vector<double> dist(nodes.size(), std::numeric_limits<double>::infinity());
    using Item = std::pair<double, int>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
    dist[from] = 0.0;
    heap.push({0.0, from});
    while (!heap.empty()) {
      auto [d, u] = heap.top();
      heap.pop();
      if (d > dist[u]) continue;
      for (const auto& [v, len] : adjacency[u]) {
        if (d + len < dist[v]) {
          dist[v] = d + len;
          heap.push({dist[v], v});
        }
      }
    }
    return dist;
  }

  std::vector<int> hop_distances_from(int from) const {
    std::vector<int> dist(nodes.size(), -1);
    std::queue<int> q;
    dist[from] = 0;
    q.push(from);
    while (!q.empty()) {
      int u = q.front();
      q.pop();
      for (const auto& [v, len] : adjacency[u]) {
        if (dist[v] < 0) {
          dist[v] = dist[u] + 1;
          q.push(v);
        }
      }
    }
    return dist;
  }

  bool connected() const {
    auto hops = hop_distances_from(0);
    return std::none_of(hops.begin(), hops.end(), [](int h) { return h < 0; });
  }

  const std::vector<double>& distances_to_goal() const {
    if (goal_dist_.empty()) goal_dist_ = distances_from(goal);
    return goal_dist_;
  }

 private:
  mutable std::vector<double> goal_dist_;
};

// Candidate actions at a node: navigable neighbors in ascending id order,
// then STOP. Action indices address this ordering; STOP is always last.
struct CandidateSet {
  std::vector<int> neighbor_ids;

  int num_actions() const { return static_cast<int>(neighbor_ids.size()) + 1; }
  int stop_index() const { return static_cast<int>(neighbor_ids.size()); }
  bool is_stop(int action) const { return action == stop_index(); }
  int target_of(int action) const { return neighbor_ids.at(action); }
};

inline CandidateSet candidate_actions(const NavGraph& graph, int node) {
  CandidateSet set;
  for (const auto& [n, len] : graph.neighbors(node)) set.neighbor_ids.push_back(n);
  return set;  // adjacency is kept sorted ascending
}

// STOP at the goal; otherwise the neighbor minimizing remaining shortest-path
// distance to the goal, ties broken toward the lowest node id.
inline int expert_action(const NavGraph& graph, int current, int goal) {
  CandidateSet set = candidate_actions(graph, current);
  if (current == goal) return set.stop_index();
  const std::vector<double> dist = graph.distances_from(goal);
  if (std::isinf(dist[current])) throw UnreachableError();
  int best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  for (int a = 0; a < static_cast<int>(set.neighbor_ids.size()); ++a) {
    double d = dist[set.neighbor_ids[a]];
    if (d < best_d) {
      best_d = d;
      best = a;
    }
  }
  if (best < 0) throw UnreachableError();
  return best;
}

inline std::vector<int> expert_path(const NavGraph& graph) {
  std::vector<int> path{graph.start};
  int current = graph.start;
  while (current != graph.goal) {
    CandidateSet set = candidate_actions(graph, current);
    int a = expert_action(graph, current, graph.goal);
    current = set.target_of(a);
    path.push_back(current);
    if (path.size() > graph.nodes.size() * 4) throw UnreachableError();
  }
  return path;
}

namespace detail {

inline void build_edges(NavGraph& g, const std::vector<std::pair<double, double>>& pos,
                        const WorldConfig& cfg, Rng& rng) {
  const int n = g.size();
  auto euclid = [&](int a, int b) {
    double dx = pos[a].first - pos[b].first;
    double dy = pos[a].second - pos[b].second;
    return std::sqrt(dx * dx + dy * dy);
  };
  std::vector<std::vector<bool>> has(n, std::vector<bool>(n, false));
  // radius graph
  for (int a = 0; a < n; ++a)
    for (int b = a + 1; b < n; ++b)
      if (euclid(a, b) <= cfg.connect_radius) has[a][b] = has[b][a] = true;
  // Prim MST on Euclidean weights guarantees connectivity
  std::vector<bool> in_tree(n, false);
  std::vector<double> best(n, std::numeric_limits<double>::infinity());
  std::vector<int> parent(n, -1);
  best[0] = 0.0;
  for (int it = 0; it < n; ++it) {
    int u = -1;
    for (int v = 0; v < n; ++v)
      if (!in_tree[v] && (u < 0 || best[v] < best[u])) u = v;
    in_tree[u] = true;
    if (parent[u] >= 0) has[u][parent[u]] = has[parent[u]][u] = true;
    for (int v = 0; v < n; ++v)
      if (!in_tree[v] && euclid(u, v) < best[v]) {
        best[v] = euclid(u, v);
        parent[v] = u;
      }
  }
  g.adjacency.assign(n, {});
  for (int a = 0; a < n; ++a)
    for (int b = a + 1; b < n; ++b)
      if (has[a][b]) {
        double len = cfg.random_edge_lengths ? uniform<double>(rng, 0.5, 1.5) : 1.0;
        if (cfg.random_edge_lengths && len <= 0.5) len = 1.5;  // (0.5, 1.5]
        g.adjacency[a].push_back({b, len});
        g.adjacency[b].push_back({a, len});
      }
  for (auto& adj : g.adjacency) std::sort(adj.begin(), adj.end());
}

}  // namespace detail

// Connected random geometric graph with landmark-tagged nodes and a
// start/goal pair at hop distance >= cfg.min_hops.
inline NavGraph sample_graph(const WorldConfig& cfg, const ModelConfig& mc, std::uint64_t seed) {
  if (cfg.min_nodes < 3) throw ValidationError("sample_graph: need at least 3 nodes");
  Rng rng = make_rng(mix_seed(seed, 0xB00C));
  NavGraph g;
  g.seed = seed;
  const int n = uniform_int(rng, cfg.min_nodes, cfg.max_nodes);
  const Eigen::MatrixXd& table = landmark_feature_table(mc.num_landmarks, mc.env_dim);
  std::vector<std::pair<double, double>> pos(n);
  g.nodes.resize(n);
  for (int i = 0; i < n; ++i) {
    pos[i] = {uniform<double>(rng, 0.0, 1.0), uniform<double>(rng, 0.0, 1.0)};
    g.nodes[i].landmark = uniform_int(rng, 0, mc.num_landmarks - 1);
    Eigen::RowVectorXd jitter(mc.env_dim);
    for (int j = 0; j < mc.env_dim; ++j) jitter(j) = gaussian<double>(rng) * cfg.feature_jitter;
    g.nodes[i].feature = table.row(g.nodes[i].landmark) + jitter;
  }
  detail::build_edges(g, pos, cfg, rng);
  for (int attempt = 0; attempt < cfg.max_resample_attempts; ++attempt) {
    int s = uniform_int(rng, 0, n - 1);
    int t = uniform_int(rng, 0, n - 1);
    if (s == t) continue;
    auto hops = g.hop_distances_from(s);
    if (hops[t] >= cfg.min_hops) {
      g.start = s;
      g.goal = t;
      return g;
    }
  }
  throw UnsatisfiableError();
}

// Landmark tokens of the expert path in order, with distractor tokens
// (ids >= num_landmarks) inserted independently at cfg.distractor_rate.
inline std::vector<int> synthesize_instruction(const NavGraph& graph, const WorldConfig& cfg,
                                               const ModelConfig& mc, std::uint64_t seed) {
  std::vector<int> path = expert_path(graph);
  Rng rng = make_rng(mix_seed(seed, 0x1257));
  std::vector<int> tokens;
  for (int node : path) {
    if (cfg.distractor_rate > 0.0 && mc.num_distractors > 0 &&
        uniform<double>(rng, 0.0, 1.0) < cfg.distractor_rate &&
        static_cast<int>(tokens.size()) + 1 < mc.max_instruction_len) {
      tokens.push_back(mc.num_landmarks + uniform_int(rng, 0, mc.num_distractors - 1));
    }
    tokens.push_back(graph.nodes[node].landmark);
    if (static_cast<int>(tokens.size()) >= mc.max_instruction_len) break;
  }
  return tokens;
}

// ---- episodes and metrics -----------------------------------------------------

struct Episode {
  std::shared_ptr<const NavGraph> graph;
  std::vector<int> instruction;   // token ids
  std::vector<int> expert_nodes;  // shortest path start -> goal
  std::vector<int> trajectory;    // visited nodes, starts at graph->start
  std::vector<int> actions;       // chosen action indices per step
  bool stopped = false;

  double executed_length() const {
    double len = 0.0;
    for (std::size_t i = 1; i < trajectory.size(); ++i)
      len += graph->edge_length(trajectory[i - 1], trajectory[i]);
    return len;
  }
};

struct MetricsTable {
  double tl = 0.0;   // mean executed path length
  double ne = 0.0;   // mean distance from stop node to goal
  double sr = 0.0;   // fraction stopping within delta
  double osr = 0.0;  // fraction ever within delta
  double spl = 0.0;  // success weighted by path length
  int episodes = 0;
};

inline MetricsTable compute_metrics(const std::vector<Episode>& episodes, double delta) {
  if (episodes.empty()) throw EmptySetError();
  if (delta < 0) throw ValidationError("compute_metrics: delta must be >= 0");
  MetricsTable m;
  m.episodes = static_cast<int>(episodes.size());
  for (const Episode& ep : episodes) {
    const std::vector<double>& goal_dist = ep.graph->distances_to_goal();
    const double p = ep.executed_length();
    const double l = goal_dist[ep.graph->start];
    const double ne = goal_dist[ep.trajectory.back()];
    const bool success = ne <= delta;
    bool oracle = false;
    for (int v : ep.trajectory)
      if (goal_dist[v] <= delta) oracle = true;
    m.tl += p;
    m.ne += ne;
    m.sr += success ? 1.0 : 0.0;
    m.osr += oracle ? 1.0 : 0.0;
    m.spl += success ? l / std::max(p, l) : 0.0;
  }
  m.tl /= m.episodes;
  m.ne /= m.episodes;
  m.sr /= m.episodes;
  m.osr /= m.episodes;
  m.spl /= m.episodes;
  return m;
}

}  // namespace sdb
