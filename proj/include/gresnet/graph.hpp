#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace gresnet {

using Edge = std::pair<std::size_t, std::size_t>;

/// Undirected, unweighted, simple graph. Immutable once built.
class Graph {
 public:
  /// Drops self-pairs and merges duplicate or reversed pairs. Throws
  /// GraphError naming the first pair with an endpoint outside [0, n).
  Graph(std::size_t n, const std::vector<Edge>& edge_list);

  std::size_t node_count() const { return n_; }
  std::size_t edge_count() const { return edges_.size(); }
  /// Canonical edges (i < j), sorted lexicographically.
  const std::vector<Edge>& edges() const { return edges_; }
  const std::vector<std::size_t>& degrees() const { return degree_; }
  std::size_t degree(std::size_t i) const { return degree_[i]; }
  /// Sorted neighbor list of node i.
  const std::vector<std::size_t>& neighbors(std::size_t i) const { return adj_[i]; }

 private:
  std::size_t n_;
  std::vector<Edge> edges_;
  std::vector<std::size_t> degree_;
  std::vector<std::vector<std::size_t>> adj_;
};

Graph build_graph(std::size_t n, const std::vector<Edge>& edge_list);

/// Edgeless graphs with more than one node are disconnected.
bool is_connected(const Graph& g);
/// 2-coloring by breadth-first search; edgeless graphs are bipartite.
bool is_bipartite(const Graph& g);

/// Node indices of the largest connected component (ties: the component
/// containing the lowest node index), in increasing order.
std::vector<std::size_t> largest_component(const Graph& g);

/// Subgraph induced by `nodes` (which must be distinct); node k of the result
/// is nodes[k] of the input.
Graph induced_subgraph(const Graph& g, const std::vector<std::size_t>& nodes);

struct LabeledGraph {
  Graph graph;
  std::vector<std::string> ids;  // dense index -> external identifier
};

/// Whitespace-separated edge list, one edge per line. Identifiers are mapped
/// to dense indices in first-seen order. Blank lines and lines starting with
/// '#' are ignored.
LabeledGraph read_edge_list(const std::filesystem::path& path);

}  // namespace gresnet
