#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <map>
#include <optional>
#include <queue>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

// Network graph, DODAG construction, ranks, and candidate parent sets.
// Links are directed child -> parent candidates carrying the bad-channel
// probability of that direction; audibility uses the undirected closure.

namespace macroute {

struct NodeSpec {
  std::string id;
  double lambda_pps = 0.0;
  std::optional<double> x, y;  // layout only, no radio semantics
};

struct LinkSpec {
  std::string src;
  std::string dst;
  double p_bad = 0.0;
};

class validation_error : public std::runtime_error {
 public:
  explicit validation_error(const std::string& what) : std::runtime_error(what) {}
};

/// Orders node ids naturally: "V2" before "V10".
inline bool natural_id_less(const std::string& a, const std::string& b) {
  size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (std::isdigit(static_cast<unsigned char>(a[i])) &&
        std::isdigit(static_cast<unsigned char>(b[j]))) {
      size_t ie = i, je = j;
      while (ie < a.size() && std::isdigit(static_cast<unsigned char>(a[ie]))) ++ie;
      while (je < b.size() && std::isdigit(static_cast<unsigned char>(b[je]))) ++je;
      const unsigned long long na = std::stoull(a.substr(i, ie - i));
      const unsigned long long nb = std::stoull(b.substr(j, je - j));
      if (na != nb) return na < nb;
      i = ie;
      j = je;
    } else {
      if (a[i] != b[j]) return a[i] < b[j];
      ++i;
      ++j;
    }
  }
  return a.size() < b.size();
}

struct Topology {
  std::vector<NodeSpec> nodes;
  std::vector<LinkSpec> links;
  std::string root_id;

  int size() const { return static_cast<int>(nodes.size()); }

  int index_of(const std::string& id) const {
    for (int i = 0; i < size(); ++i)
      if (nodes[i].id == id) return i;
    throw validation_error("unknown node id: " + id);
  }

  int root_index() const { return index_of(root_id); }

  /// Directed parent-candidate edges src -> dst, as index pairs with p_bad.
  std::vector<std::vector<std::pair<int, double>>> candidate_edges() const {
    std::vector<std::vector<std::pair<int, double>>> out(size());
    for (const auto& l : links)
      out[index_of(l.src)].emplace_back(index_of(l.dst), l.p_bad);
    return out;
  }

  /// Undirected adjacency from the link list (audibility graph).
  std::vector<std::set<int>> adjacency() const {
    std::vector<std::set<int>> adj(size());
    for (const auto& l : links) {
      const int s = index_of(l.src), d = index_of(l.dst);
      adj[s].insert(d);
      adj[d].insert(s);
    }
    return adj;
  }

  void validate() const {
    std::set<std::string> seen;
    for (const auto& n : nodes) {
      if (n.id.empty()) throw validation_error("node with empty id");
      if (!seen.insert(n.id).second)
        throw validation_error("duplicate node id: " + n.id);
      if (n.lambda_pps < 0)
        throw validation_error("negative lambda_pps at node " + n.id);
    }
    if (!seen.count(root_id))
      throw validation_error("root node " + root_id + " not in node list");
    if (nodes[root_index()].lambda_pps != 0.0)
      throw validation_error("root node must have lambda_pps = 0");
    for (const auto& l : links) {
      if (!seen.count(l.src)) throw validation_error("link src unknown: " + l.src);
      if (!seen.count(l.dst)) throw validation_error("link dst unknown: " + l.dst);
      if (l.src == l.dst) throw validation_error("self-link at " + l.src);
      if (!(l.p_bad >= 0.0 && l.p_bad <= 1.0))
        throw validation_error("p_bad out of [0,1] on link " + l.src + "->" + l.dst);
    }
    // connectivity toward root over the undirected closure
    const auto adj = adjacency();
    std::vector<bool> reach(size(), false);
    std::queue<int> q;
    q.push(root_index());
    reach[root_index()] = true;
    while (!q.empty()) {
      const int u = q.front();
      q.pop();
      for (int v : adj[u])
        if (!reach[v]) {
          reach[v] = true;
          q.push(v);
        }
    }
    for (int i = 0; i < size(); ++i)
      if (!reach[i])
        throw validation_error("node " + nodes[i].id + " disconnected from root");
  }
};

struct Dodag {
  std::vector<int> rank;                        // hop distance to root
  std::vector<std::vector<int>> parent_sets;    // ordered candidate parents
};

inline Topology topology_from_json(const nlohmann::json& j) {
  Topology t;
  try {
    t.root_id = j.at("root").get<std::string>();
    for (const auto& jn : j.at("nodes")) {
      NodeSpec n;
      n.id = jn.at("id").get<std::string>();
      n.lambda_pps = jn.value("lambda_pps", 0.0);
      if (jn.contains("x")) n.x = jn["x"].get<double>();
      if (jn.contains("y")) n.y = jn["y"].get<double>();
      t.nodes.push_back(std::move(n));
    }
    for (const auto& jl : j.at("links")) {
      LinkSpec l;
      l.src = jl.at("src").get<std::string>();
      l.dst = jl.at("dst").get<std::string>();
      l.p_bad = jl.at("p_bad").get<double>();
      t.links.push_back(std::move(l));
    }
  } catch (const nlohmann::json::exception& e) {
    throw validation_error(std::string("topology schema error: ") + e.what());
  }
  t.validate();
  return t;
}

inline nlohmann::json topology_to_json(const Topology& t) {
  nlohmann::json j;
  j["root"] = t.root_id;
  j["nodes"] = nlohmann::json::array();
  for (const auto& n : t.nodes) {
    nlohmann::json jn{{"id", n.id}, {"lambda_pps", n.lambda_pps}};
    if (n.x) jn["x"] = *n.x;
    if (n.y) jn["y"] = *n.y;
    j["nodes"].push_back(jn);
  }
  j["links"] = nlohmann::json::array();
  for (const auto& l : t.links)
    j["links"].push_back({{"src", l.src}, {"dst", l.dst}, {"p_bad", l.p_bad}});
  return j;
}

inline Topology load_topology(std::istream& in) {
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw validation_error(std::string("topology parse error: ") + e.what());
  }
  return topology_from_json(j);
}

/// Ranks as hop distance to root over the undirected closure of the link
/// list; candidate parents are link targets with strictly smaller rank,
/// ordered by natural node id.
inline Dodag build_dodag(const Topology& topo) {
  const auto adj = topo.adjacency();
  const int n = topo.size();
  Dodag d;
  d.rank.assign(n, -1);
  d.parent_sets.assign(n, {});
  std::queue<int> q;
  const int root = topo.root_index();
  d.rank[root] = 0;
  q.push(root);
  while (!q.empty()) {
    const int u = q.front();
    q.pop();
    for (int v : adj[u])
      if (d.rank[v] < 0) {
        d.rank[v] = d.rank[u] + 1;
        q.push(v);
      }
  }
  const auto edges = topo.candidate_edges();
  for (int i = 0; i < n; ++i) {
    if (i == root) continue;
    for (const auto& [j, p_bad] : edges[i]) {
      (void)p_bad;
      if (d.rank[j] >= 0 && d.rank[j] < d.rank[i]) d.parent_sets[i].push_back(j);
    }
    std::sort(d.parent_sets[i].begin(), d.parent_sets[i].end(),
              [&](int a, int b) {
                return natural_id_less(topo.nodes[a].id, topo.nodes[b].id);
              });
    if (d.parent_sets[i].empty())
      throw validation_error("node " + topo.nodes[i].id +
                             " has no candidate parent with smaller rank");
  }
  return d;
}

/// Connected layered random DAG toward the root, reproducible per seed.
/// Nodes are V0 (root) .. V{n-1}; each node draws around `density`
/// distinct parents from the previous layer.
inline Topology generate_random_topology(int n_nodes, std::uint64_t seed,
                                         double density,
                                         double lambda_pps = 1.0) {
  if (n_nodes < 2) throw validation_error("need at least 2 nodes");
  if (density < 1.0) throw validation_error("density must be >= 1");
  std::mt19937_64 rng(seed);

  Topology t;
  t.root_id = "V0";
  for (int i = 0; i < n_nodes; ++i)
    t.nodes.push_back({"V" + std::to_string(i), i == 0 ? 0.0 : lambda_pps, {}, {}});

  // layer sizes: roughly sqrt(n) layers, each non-empty
  const int n_layers = std::max(1, static_cast<int>(std::round(std::sqrt(n_nodes - 1))));
  std::vector<std::vector<int>> layers(n_layers + 1);
  layers[0] = {0};
  std::vector<int> rest;
  for (int i = 1; i < n_nodes; ++i) rest.push_back(i);
  std::shuffle(rest.begin(), rest.end(), rng);
  for (size_t k = 0; k < rest.size(); ++k)
    layers[1 + k % n_layers].push_back(rest[k]);

  std::uniform_real_distribution<double> up(0.02, 0.2);
  for (int l = 1; l <= n_layers; ++l) {
    const auto& above = layers[l - 1];
    std::binomial_distribution<int> extra(
        static_cast<int>(above.size()) - 1,
        std::min(1.0, (density - 1.0) / std::max<size_t>(1, above.size() - 1)));
    for (int v : layers[l]) {
      std::vector<int> pool = above;
      std::shuffle(pool.begin(), pool.end(), rng);
      const int want = std::min<int>(static_cast<int>(pool.size()), 1 + extra(rng));
      for (int k = 0; k < want; ++k)
        t.links.push_back({t.nodes[v].id, t.nodes[pool[k]].id, up(rng)});
    }
  }
  t.validate();
  return t;
}

}  // namespace macroute
