#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <limits>
#include <memory>
#include <queue>
#include <random>

#include "sdb/nav_world.hpp"

using sdb::CandidateSet;
using sdb::Episode;
using sdb::ModelConfig;
using sdb::NavGraph;
using sdb::WorldConfig;

namespace {

// Independent Dijkstra for cross-checking the library's distances.
std::vector<double> oracle_dijkstra(const NavGraph& g, int from) {
  const int n = g.size();
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  std::vector<bool> done(n, false);
  dist[from] = 0.0;
  for (int it = 0; it < n; ++it) {
    int u = -1;
    for (int v = 0; v < n; ++v)
      if (!done[v] && (u < 0 || dist[v] < dist[u])) u = v;
    if (u < 0 || std::isinf(dist[u])) break;
    done[u] = true;
    for (const auto& [v, len] : g.neighbors(u))
      dist[v] = std::min(dist[v], dist[u] + len);
  }
  return dist;
}

NavGraph path_graph(int n) {
  NavGraph g;
  g.nodes.resize(n);
  g.adjacency.assign(n, {});
  for (int i = 0; i < n; ++i) {
    g.nodes[i].feature = Eigen::RowVectorXd::Zero(4);
    g.nodes[i].landmark = i;
  }
  for (int i = 0; i + 1 < n; ++i) {
    g.adjacency[i].push_back({i + 1, 1.0});
    g.adjacency[i + 1].push_back({i, 1.0});
  }
  for (auto& adj : g.adjacency) std::sort(adj.begin(), adj.end());
  g.start = 0;
  g.goal = n - 1;
  return g;
}

bool graphs_equal(const NavGraph& a, const NavGraph& b) {
  if (a.size() != b.size() || a.start != b.start || a.goal != b.goal) return false;
  for (int i = 0; i < a.size(); ++i) {
    if (a.nodes[i].landmark != b.nodes[i].landmark) return false;
    if ((a.nodes[i].feature - b.nodes[i].feature).norm() != 0.0) return false;
    if (a.adjacency[i] != b.adjacency[i]) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("sample_graph is deterministic under a fixed seed") {
  WorldConfig wc;
  ModelConfig mc;
  NavGraph a = sdb::sample_graph(wc, mc, 99);
  NavGraph b = sdb::sample_graph(wc, mc, 99);
  REQUIRE(graphs_equal(a, b));
  NavGraph c = sdb::sample_graph(wc, mc, 100);
  REQUIRE_FALSE(graphs_equal(a, c));
}

TEST_CASE("100 sampled graphs are connected and satisfy min_hops") {
  WorldConfig wc;
  ModelConfig mc;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    NavGraph g = sdb::sample_graph(wc, mc, seed);
    REQUIRE(g.connected());
    REQUIRE(g.size() >= wc.min_nodes);
    REQUIRE(g.size() <= wc.max_nodes);
    REQUIRE(g.hop_distances_from(g.start)[g.goal] >= wc.min_hops);
    REQUIRE(g.start != g.goal);
    for (int v = 0; v < g.size(); ++v) REQUIRE(!g.neighbors(v).empty());
  }
}

TEST_CASE("min_hops on a 3-node path forces the endpoints") {
  NavGraph g = path_graph(3);
  auto hops = g.hop_distances_from(0);
  // the only pair at hop distance >= 2 is (0, 2)
  int pairs = 0;
  for (int s = 0; s < 3; ++s)
    for (int t = 0; t < 3; ++t)
      if (s != t && g.hop_distances_from(s)[t] >= 2) ++pairs;
  REQUIRE(pairs == 2);  // (0,2) and (2,0)
  REQUIRE(hops[2] == 2);
}

TEST_CASE("unsatisfiable start/goal placement raises") {
  WorldConfig wc;
  wc.min_nodes = 3;
  wc.max_nodes = 3;
  wc.min_hops = 10;  // impossible on 3 nodes
  ModelConfig mc;
  REQUIRE_THROWS_AS(sdb::sample_graph(wc, mc, 5), sdb::UnsatisfiableError);
}

TEST_CASE("instruction without distractors lists expert-path landmarks in order") {
  WorldConfig wc;
  wc.distractor_rate = 0.0;
  ModelConfig mc;
  NavGraph g = sdb::sample_graph(wc, mc, 17);
  auto tokens = sdb::synthesize_instruction(g, wc, mc, 17);
  auto path = sdb::expert_path(g);
  REQUIRE(tokens.size() == path.size());
  for (std::size_t i = 0; i < path.size(); ++i) REQUIRE(tokens[i] == g.nodes[path[i]].landmark);
}

TEST_CASE("one-hop path yields two tokens") {
  NavGraph g = path_graph(2);
  g.nodes[0].landmark = 11;
  g.nodes[1].landmark = 29;
  WorldConfig wc;
  wc.distractor_rate = 0.0;
  ModelConfig mc;
  auto tokens = sdb::synthesize_instruction(g, wc, mc, 3);
  REQUIRE(tokens == std::vector<int>{11, 29});
}

TEST_CASE("instruction synthesis with distractors is reproducible") {
  WorldConfig wc;
  wc.distractor_rate = 0.5;
  ModelConfig mc;
  NavGraph g = sdb::sample_graph(wc, mc, 23);
  auto t1 = sdb::synthesize_instruction(g, wc, mc, 23);
  auto t2 = sdb::synthesize_instruction(g, wc, mc, 23);
  REQUIRE(t1 == t2);
  // distractor ids live above the landmark range
  for (int tok : t1) REQUIRE(tok < mc.num_landmarks + mc.num_distractors);
}

TEST_CASE("candidate sets: neighbors ascending, STOP last, k+1 actions") {
  WorldConfig wc;
  ModelConfig mc;
  NavGraph g = sdb::sample_graph(wc, mc, 31);
  for (int v = 0; v < g.size(); ++v) {
    CandidateSet set = sdb::candidate_actions(g, v);
    REQUIRE(set.num_actions() == static_cast<int>(g.neighbors(v).size()) + 1);
    REQUIRE(set.is_stop(set.num_actions() - 1));
    REQUIRE(std::is_sorted(set.neighbor_ids.begin(), set.neighbor_ids.end()));
    CandidateSet again = sdb::candidate_actions(g, v);
    REQUIRE(set.neighbor_ids == again.neighbor_ids);
  }
}

TEST_CASE("expert stops at the goal") {
  NavGraph g = path_graph(4);
  CandidateSet set = sdb::candidate_actions(g, g.goal);
  REQUIRE(sdb::expert_action(g, g.goal, g.goal) == set.stop_index());
}

TEST_CASE("expert follows the unique shortest path (Dijkstra oracle)") {
  WorldConfig wc;
  ModelConfig mc;
  for (std::uint64_t seed = 200; seed < 230; ++seed) {
    NavGraph g = sdb::sample_graph(wc, mc, seed);
    auto oracle = oracle_dijkstra(g, g.goal);
    int current = g.start;
    int hops = 0;
    while (current != g.goal) {
      CandidateSet set = sdb::candidate_actions(g, current);
      int a = sdb::expert_action(g, current, g.goal);
      REQUIRE_FALSE(set.is_stop(a));
      int next = set.target_of(a);
      // chosen neighbor must minimize remaining distance
      double best = std::numeric_limits<double>::infinity();
      for (int n : set.neighbor_ids) best = std::min(best, oracle[n]);
      REQUIRE(oracle[next] == Catch::Approx(best));
      current = next;
      ++hops;
      REQUIRE(hops < 100);
    }
    // unit edges: expert takes exactly the shortest-path hop count
    REQUIRE(hops == static_cast<int>(oracle_dijkstra(g, g.start)[g.goal]));
  }
}

TEST_CASE("expert breaks distance ties toward the lower node id") {
  // diamond: 0 -> {1, 2} -> 3, both branches the same length
  NavGraph g;
  g.nodes.resize(4);
  g.adjacency.assign(4, {});
  for (int i = 0; i < 4; ++i) {
    g.nodes[i].feature = Eigen::RowVectorXd::Zero(4);
    g.nodes[i].landmark = i;
  }
  auto link = [&](int a, int b) {
    g.adjacency[a].push_back({b, 1.0});
    g.adjacency[b].push_back({a, 1.0});
  };
  link(0, 1);
  link(0, 2);
  link(1, 3);
  link(2, 3);
  for (auto& adj : g.adjacency) std::sort(adj.begin(), adj.end());
  g.start = 0;
  g.goal = 3;
  CandidateSet set = sdb::candidate_actions(g, 0);
  int a = sdb::expert_action(g, 0, 3);
  REQUIRE(set.target_of(a) == 1);
}

namespace {

Episode expert_episode(const std::shared_ptr<const NavGraph>& g) {
  Episode ep;
  ep.graph = g;
  ep.expert_nodes = sdb::expert_path(*g);
  ep.trajectory = ep.expert_nodes;
  ep.stopped = true;
  return ep;
}

}  // namespace

TEST_CASE("metrics: expert replay scores SR=1, SPL=1, NE=0") {
  WorldConfig wc;
  ModelConfig mc;
  std::vector<Episode> eps;
  for (std::uint64_t seed = 0; seed < 10; ++seed)
    eps.push_back(expert_episode(std::make_shared<NavGraph>(sdb::sample_graph(wc, mc, seed))));
  auto m = sdb::compute_metrics(eps, 0.0);
  REQUIRE(m.sr == 1.0);
  REQUIRE(m.spl == 1.0);
  REQUIRE(m.ne == 0.0);
  REQUIRE(m.osr == 1.0);
}

TEST_CASE("metrics: an agent that never moves scores zero beyond delta") {
  auto g = std::make_shared<NavGraph>(path_graph(4));
  Episode ep;
  ep.graph = g;
  ep.trajectory = {g->start};
  ep.stopped = true;
  auto m = sdb::compute_metrics({ep}, 0.0);
  REQUIRE(m.sr == 0.0);
  REQUIRE(m.spl == 0.0);
  REQUIRE(m.osr == 0.0);
  REQUIRE(m.ne == 3.0);
  REQUIRE(m.tl == 0.0);
}

TEST_CASE("metrics: success with doubled path length contributes SPL 0.5") {
  auto g = std::make_shared<NavGraph>(path_graph(11));  // shortest length 10
  Episode ep;
  ep.graph = g;
  // wander: forward to 5, back to 0, then to the goal: executed length 20
  ep.trajectory = {0, 1, 2, 3, 4, 5, 4, 3, 2, 1, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  ep.stopped = true;
  auto m = sdb::compute_metrics({ep}, 0.0);
  REQUIRE(ep.executed_length() == 20.0);
  REQUIRE(m.spl == Catch::Approx(0.5));
  REQUIRE(m.sr == 1.0);
}

TEST_CASE("metrics: SPL <= SR <= OSR and permutation invariance") {
  WorldConfig wc;
  ModelConfig mc;
  std::mt19937_64 rng(5);
  std::vector<Episode> eps;
  for (std::uint64_t seed = 40; seed < 70; ++seed) {
    auto g = std::make_shared<NavGraph>(sdb::sample_graph(wc, mc, seed));
    Episode ep;
    ep.graph = g;
    ep.trajectory = {g->start};
    // random walk of random length
    int len = std::uniform_int_distribution<int>(0, 8)(rng);
    int cur = g->start;
    for (int i = 0; i < len; ++i) {
      const auto& nb = g->neighbors(cur);
      cur = nb[std::uniform_int_distribution<std::size_t>(0, nb.size() - 1)(rng)].first;
      ep.trajectory.push_back(cur);
    }
    ep.stopped = true;
    eps.push_back(std::move(ep));
  }
  auto m = sdb::compute_metrics(eps, 0.0);
  REQUIRE(m.spl <= m.sr + 1e-12);
  REQUIRE(m.sr <= m.osr + 1e-12);
  auto shuffled = eps;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  auto m2 = sdb::compute_metrics(shuffled, 0.0);
  REQUIRE(m.sr == m2.sr);
  REQUIRE(m.spl == Catch::Approx(m2.spl).epsilon(1e-12));
  REQUIRE(m.tl == Catch::Approx(m2.tl).epsilon(1e-12));
}

TEST_CASE("metrics: empty episode set raises") {
  REQUIRE_THROWS_AS(sdb::compute_metrics({}, 0.0), sdb::EmptySetError);
}

TEST_CASE("expert rollout reaches the goal in shortest-path hops and stops") {
  WorldConfig wc;
  ModelConfig mc;
  for (std::uint64_t seed = 300; seed < 320; ++seed) {
    NavGraph g = sdb::sample_graph(wc, mc, seed);
    auto path = sdb::expert_path(g);
    REQUIRE(path.front() == g.start);
    REQUIRE(path.back() == g.goal);
    REQUIRE(static_cast<int>(path.size()) - 1 == g.hop_distances_from(g.start)[g.goal]);
  }
}
