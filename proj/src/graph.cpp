#include "gresnet/graph.hpp"

#include <algorithm>
#include <fstream>
#include <queue>
#include <sstream>
#include <unordered_map>

#include "gresnet/error.hpp"

namespace gresnet {

Graph::Graph(std::size_t n, const std::vector<Edge>& edge_list) : n_(n) {
  if (n == 0) throw GraphError("build_graph: node count must be positive");
  edges_.reserve(edge_list.size());
  for (auto [a, b] : edge_list) {
    if (a >= n || b >= n) {
      throw GraphError("build_graph: edge (" + std::to_string(a) + ", " + std::to_string(b) +
                       ") has an endpoint outside [0, " + std::to_string(n) + ")");
    }
    if (a == b) continue;
    edges_.emplace_back(std::min(a, b), std::max(a, b));
  }
  std::sort(edges_.begin(), edges_.end());
  edges_.erase(std::unique(edges_.begin(), edges_.end()), edges_.end());

  degree_.assign(n, 0);
  adj_.assign(n, {});
  for (auto [a, b] : edges_) {
    ++degree_[a];
    ++degree_[b];
    adj_[a].push_back(b);
    adj_[b].push_back(a);
  }
  for (auto& nb : adj_) std::sort(nb.begin(), nb.end());
}

Graph build_graph(std::size_t n, const std::vector<Edge>& edge_list) {
  return Graph(n, edge_list);
}

namespace {

// Component label per node, labels assigned in order of lowest member.
std::vector<std::size_t> component_labels(const Graph& g, std::size_t& count) {
  const std::size_t n = g.node_count();
  std::vector<std::size_t> label(n, n);
  count = 0;
  std::queue<std::size_t> frontier;
  for (std::size_t s = 0; s < n; ++s) {
    if (label[s] != n) continue;
    label[s] = count;
    frontier.push(s);
    while (!frontier.empty()) {
      const std::size_t u = frontier.front();
      frontier.pop();
      for (std::size_t v : g.neighbors(u)) {
        if (label[v] == n) {
          label[v] = count;
          frontier.push(v);
        }
      }
    }
    ++count;
  }
  return label;
}

}  // namespace

bool is_connected(const Graph& g) {
  std::size_t count = 0;
  component_labels(g, count);
  return count == 1;
}

bool is_bipartite(const Graph& g) {
  const std::size_t n = g.node_count();
  std::vector<int> color(n, -1);
  std::queue<std::size_t> frontier;
  for (std::size_t s = 0; s < n; ++s) {
    if (color[s] != -1) continue;
    color[s] = 0;
    frontier.push(s);
    while (!frontier.empty()) {
      const std::size_t u = frontier.front();
      frontier.pop();
      for (std::size_t v : g.neighbors(u)) {
        if (color[v] == -1) {
          color[v] = 1 - color[u];
          frontier.push(v);
        } else if (color[v] == color[u]) {
          return false;
        }
      }
    }
  }
  return true;
}

std::vector<std::size_t> largest_component(const Graph& g) {
  std::size_t count = 0;
  const auto label = component_labels(g, count);
  std::vector<std::size_t> sizes(count, 0);
  for (std::size_t l : label) ++sizes[l];
  const auto best = static_cast<std::size_t>(
      std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
  std::vector<std::size_t> nodes;
  nodes.reserve(sizes[best]);
  for (std::size_t i = 0; i < label.size(); ++i)
    if (label[i] == best) nodes.push_back(i);
  return nodes;
}

Graph induced_subgraph(const Graph& g, const std::vector<std::size_t>& nodes) {
  std::vector<std::size_t> index(g.node_count(), g.node_count());
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    if (nodes[k] >= g.node_count() || index[nodes[k]] != g.node_count())
      throw GraphError("induced_subgraph: invalid or repeated node " + std::to_string(nodes[k]));
    index[nodes[k]] = k;
  }
  std::vector<Edge> kept;
  for (auto [a, b] : g.edges()) {
    if (index[a] != g.node_count() && index[b] != g.node_count())
      kept.emplace_back(index[a], index[b]);
  }
  return Graph(nodes.size(), kept);
}

LabeledGraph read_edge_list(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open edge list " + path.string());
  std::unordered_map<std::string, std::size_t> index;
  std::vector<std::string> ids;
  std::vector<Edge> edges;
  auto intern = [&](const std::string& id) {
    auto [it, inserted] = index.try_emplace(id, ids.size());
    if (inserted) ids.push_back(id);
    return it->second;
  };
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::string a, b, extra;
    if (!(fields >> a) || a.front() == '#') continue;
    if (!(fields >> b) || (fields >> extra)) {
      throw DataError(path.string() + ":" + std::to_string(line_no) +
                      ": expected exactly two node identifiers");
    }
    const std::size_t ia = intern(a);
    const std::size_t ib = intern(b);
    edges.emplace_back(ia, ib);
  }
  if (ids.empty()) throw DataError(path.string() + ": no edges");
  return {Graph(ids.size(), edges), std::move(ids)};
}

}  // namespace gresnet
