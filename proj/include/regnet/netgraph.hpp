#pragma once

// Directed graphs and their matrices: incidence, fundamental loop, path and
// Laplacian. Vertices are numbered 1..n in the public API; matrix rows and
// columns use the zero-based position (vertex v lives in row v - 1, edge j in
// column j).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <set>
#include <utility>
#include <vector>

#include "regnet/errors.hpp"

namespace regnet::graph {

inline constexpr double kPivotTolerance = 1e-10;

struct Edge {
  int tail = 0;  // source of positive flow
  int head = 0;

  friend bool operator==(const Edge&, const Edge&) = default;
  friend auto operator<=>(const Edge&, const Edge&) = default;
};

class DiGraph {
 public:
  DiGraph() = default;

  DiGraph(int vertex_count, std::vector<Edge> edges, std::vector<double> weights = {})
      : n_(vertex_count), edges_(std::move(edges)), weights_(std::move(weights)) {
    if (n_ < 1) fail(ErrorCode::InvalidArgument, "graph needs at least one vertex");
    if (weights_.empty()) weights_.assign(edges_.size(), 1.0);
    if (weights_.size() != edges_.size())
      fail(ErrorCode::InvalidArgument, "one weight per edge required");
    std::set<Edge> seen;
    for (std::size_t j = 0; j < edges_.size(); ++j) {
      const auto& e = edges_[j];
      if (e.tail < 1 || e.tail > n_ || e.head < 1 || e.head > n_)
        fail(ErrorCode::InvalidArgument, "edge endpoint outside [1, n]");
      if (e.tail == e.head) fail(ErrorCode::InvalidArgument, "self-loops are not supported");
      if (!seen.insert(e).second) fail(ErrorCode::InvalidArgument, "duplicate edge");
      if (!(weights_[j] >= 0.0) || !std::isfinite(weights_[j]))
        fail(ErrorCode::InvalidArgument, "edge weights must be finite and nonnegative");
    }
  }

  int vertex_count() const noexcept { return n_; }
  int edge_count() const noexcept { return static_cast<int>(edges_.size()); }
  const std::vector<Edge>& edges() const noexcept { return edges_; }
  const std::vector<double>& weights() const noexcept { return weights_; }
  const Edge& edge(int j) const { return edges_.at(static_cast<std::size_t>(j)); }

 private:
  int n_ = 0;
  std::vector<Edge> edges_;
  std::vector<double> weights_;
};

/// Incidence matrix: column j is +1 at the tail of edge j, -1 at its head.
inline Eigen::MatrixXd incidence_matrix(const DiGraph& g) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(g.vertex_count(), g.edge_count());
  for (int j = 0; j < g.edge_count(); ++j) {
    m(g.edge(j).tail - 1, j) = 1.0;
    m(g.edge(j).head - 1, j) = -1.0;
  }
  return m;
}

namespace detail {

// Undirected adjacency: for every vertex, (neighbour, edge index) in edge order.
inline std::vector<std::vector<std::pair<int, int>>> undirected_adjacency(const DiGraph& g) {
  std::vector<std::vector<std::pair<int, int>>> adj(static_cast<std::size_t>(g.vertex_count()));
  for (int j = 0; j < g.edge_count(); ++j) {
    const int u = g.edge(j).tail - 1;
    const int v = g.edge(j).head - 1;
    adj[static_cast<std::size_t>(u)].emplace_back(v, j);
    adj[static_cast<std::size_t>(v)].emplace_back(u, j);
  }
  return adj;
}

}  // namespace detail

/// Depth-first spanning tree of the underlying undirected graph rooted at
/// `root` (1-based). Entry v - 1 holds the edge joining v to its parent, or -1
/// for the root and for vertices the search could not reach.
struct SpanningTree {
  std::vector<int> parent;       // 0-based parent vertex, -1 if none
  std::vector<int> parent_edge;  // edge index to parent, -1 if none
  std::vector<int> depth;
  std::vector<bool> in_tree;     // per edge
  int reached = 0;
};

inline SpanningTree dfs_spanning_tree(const DiGraph& g, int root = 1) {
  const auto n = static_cast<std::size_t>(g.vertex_count());
  SpanningTree t;
  t.parent.assign(n, -1);
  t.parent_edge.assign(n, -1);
  t.depth.assign(n, -1);
  t.in_tree.assign(static_cast<std::size_t>(g.edge_count()), false);
  const auto adj = detail::undirected_adjacency(g);

  // Iterative DFS that visits neighbours in edge order.
  std::vector<std::pair<int, std::size_t>> stack;
  t.depth[static_cast<std::size_t>(root - 1)] = 0;
  t.reached = 1;
  stack.emplace_back(root - 1, 0);
  while (!stack.empty()) {
    auto& [u, next] = stack.back();
    const auto& nbrs = adj[static_cast<std::size_t>(u)];
    if (next == nbrs.size()) {
      stack.pop_back();
      continue;
    }
    const auto [v, j] = nbrs[next++];
    if (t.depth[static_cast<std::size_t>(v)] >= 0) continue;
    t.depth[static_cast<std::size_t>(v)] = t.depth[static_cast<std::size_t>(u)] + 1;
    t.parent[static_cast<std::size_t>(v)] = u;
    t.parent_edge[static_cast<std::size_t>(v)] = j;
    t.in_tree[static_cast<std::size_t>(j)] = true;
    ++t.reached;
    stack.emplace_back(v, 0);
  }
  return t;
}

inline bool is_connected(const DiGraph& g) {
  return dfs_spanning_tree(g).reached == g.vertex_count();
}

inline bool is_tree(const DiGraph& g) {
  return g.edge_count() == g.vertex_count() - 1 && is_connected(g);
}

inline int matrix_rank(const Eigen::MatrixXd& a) {
  if (a.size() == 0) return 0;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
  lu.setThreshold(kPivotTolerance);
  return static_cast<int>(lu.rank());
}

/// Fundamental loop matrix (m x (m - n + 1)) from the DFS spanning tree
/// rooted at vertex 1. Each non-tree edge, in edge order, closes one loop and
/// fixes that loop's orientation (+1 on the closing edge).
inline Eigen::MatrixXd fundamental_loop_matrix(const DiGraph& g) {
  const auto tree = dfs_spanning_tree(g);
  if (tree.reached != g.vertex_count())
    fail(ErrorCode::DisconnectedGraph, "fundamental loops need a connected graph");
  const int loops = g.edge_count() - g.vertex_count() + 1;
  Eigen::MatrixXd nmat = Eigen::MatrixXd::Zero(g.edge_count(), loops);

  // Signed contribution of the tree edge above `child` when the loop walks
  // from `from` to `to` along it.
  auto mark = [&](int col, int from, int to, int edge) {
    const auto& e = g.edge(edge);
    nmat(edge, col) = (e.tail - 1 == from && e.head - 1 == to) ? 1.0 : -1.0;
  };

  int col = 0;
  for (int j = 0; j < g.edge_count(); ++j) {
    if (tree.in_tree[static_cast<std::size_t>(j)]) continue;
    nmat(j, col) = 1.0;
    // Loop continues from the head of edge j back to its tail through the tree.
    int a = g.edge(j).head - 1;
    int b = g.edge(j).tail - 1;
    std::vector<std::pair<int, int>> descend;  // (parent, child) on b's side
    while (a != b) {
      const auto da = tree.depth[static_cast<std::size_t>(a)];
      const auto db = tree.depth[static_cast<std::size_t>(b)];
      if (da >= db) {
        const int p = tree.parent[static_cast<std::size_t>(a)];
        mark(col, a, p, tree.parent_edge[static_cast<std::size_t>(a)]);
        a = p;
      } else {
        const int p = tree.parent[static_cast<std::size_t>(b)];
        descend.emplace_back(p, b);
        b = p;
      }
    }
    for (auto it = descend.rbegin(); it != descend.rend(); ++it)
      mark(col, it->first, it->second, tree.parent_edge[static_cast<std::size_t>(it->second)]);
    ++col;
  }
  return nmat;
}

/// True when no two fundamental loops share an edge.
inline bool has_non_overlapping_loops(const DiGraph& g) {
  const Eigen::MatrixXd nmat = fundamental_loop_matrix(g);
  for (int i = 0; i < nmat.rows(); ++i) {
    int used = 0;
    for (int c = 0; c < nmat.cols(); ++c) used += nmat(i, c) != 0.0 ? 1 : 0;
    if (used > 1) return false;
  }
  return true;
}

/// A graph whose underlying undirected graph is a tree, with a chosen
/// reference vertex.
class TreeCertificate {
 public:
  TreeCertificate(DiGraph graph, int reference_vertex)
      : graph_(std::move(graph)), ref_(reference_vertex) {
    if (ref_ < 1 || ref_ > graph_.vertex_count())
      fail(ErrorCode::InvalidArgument, "reference vertex outside [1, n]");
    if (!is_tree(graph_)) fail(ErrorCode::NotATree, "graph is not a tree");
  }

  const DiGraph& graph() const noexcept { return graph_; }
  int reference_vertex() const noexcept { return ref_; }

 private:
  DiGraph graph_;
  int ref_;
};

/// Path matrix ((n - 1) x m). Row k corresponds to the k-th non-reference
/// vertex in ascending order; entry (k, j) is +1 / -1 when edge j lies on the
/// path from that vertex to the reference with the same / opposite
/// orientation.
inline Eigen::MatrixXd path_matrix(const TreeCertificate& t) {
  const auto& g = t.graph();
  const auto tree = dfs_spanning_tree(g, t.reference_vertex());
  const int n = g.vertex_count();
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(n - 1, g.edge_count());
  int row = 0;
  for (int v = 0; v < n; ++v) {
    if (v == t.reference_vertex() - 1) continue;
    for (int u = v; tree.parent[static_cast<std::size_t>(u)] >= 0;
         u = tree.parent[static_cast<std::size_t>(u)]) {
      const int j = tree.parent_edge[static_cast<std::size_t>(u)];
      p(row, j) = (g.edge(j).tail - 1 == u) ? 1.0 : -1.0;
    }
    ++row;
  }
  return p;
}

/// Incidence matrix with the reference vertex row removed.
inline Eigen::MatrixXd reduced_incidence(const DiGraph& g, int reference_vertex) {
  const Eigen::MatrixXd m = incidence_matrix(g);
  Eigen::MatrixXd r(g.vertex_count() - 1, g.edge_count());
  int row = 0;
  for (int v = 0; v < g.vertex_count(); ++v)
    if (v != reference_vertex - 1) r.row(row++) = m.row(v);
  return r;
}

/// L = D_out - A with A(i, j) the weight of edge i -> j.
inline Eigen::MatrixXd laplacian(const DiGraph& g) {
  const int n = g.vertex_count();
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(n, n);
  for (int j = 0; j < g.edge_count(); ++j) {
    const int i = g.edge(j).tail - 1;
    const int k = g.edge(j).head - 1;
    const double w = g.weights()[static_cast<std::size_t>(j)];
    l(i, k) -= w;
    l(i, i) += w;
  }
  return l;
}

inline bool is_strongly_connected(const DiGraph& g) {
  const auto n = static_cast<std::size_t>(g.vertex_count());
  auto reach_all = [&](bool forward) {
    std::vector<std::vector<int>> adj(n);
    for (int j = 0; j < g.edge_count(); ++j) {
      if (g.weights()[static_cast<std::size_t>(j)] <= 0.0) continue;
      const int a = forward ? g.edge(j).tail - 1 : g.edge(j).head - 1;
      const int b = forward ? g.edge(j).head - 1 : g.edge(j).tail - 1;
      adj[static_cast<std::size_t>(a)].push_back(b);
    }
    std::vector<bool> seen(n, false);
    std::vector<int> stack{0};
    seen[0] = true;
    std::size_t count = 1;
    while (!stack.empty()) {
      const int u = stack.back();
      stack.pop_back();
      for (int v : adj[static_cast<std::size_t>(u)]) {
        if (seen[static_cast<std::size_t>(v)]) continue;
        seen[static_cast<std::size_t>(v)] = true;
        ++count;
        stack.push_back(v);
      }
    }
    return count == n;
  };
  return reach_all(true) && reach_all(false);
}

inline bool is_weight_balanced(const DiGraph& g) {
  const Eigen::MatrixXd l = laplacian(g);
  return l.colwise().sum().cwiseAbs().maxCoeff() < 1e-12;
}

// Communication topologies used by the coordination layer.

/// Bidirectional ring 1 <-> 2 <-> ... <-> n <-> 1 (a single pair for n = 2).
inline DiGraph undirected_ring(int n) {
  std::vector<Edge> edges;
  if (n == 2) return DiGraph(2, {{1, 2}, {2, 1}});
  for (int i = 1; i <= n; ++i) {
    const int k = i % n + 1;
    edges.push_back({i, k});
    edges.push_back({k, i});
  }
  return DiGraph(n, std::move(edges));
}

/// Directed ring 1 -> 2 -> ... -> n -> 1.
inline DiGraph directed_ring(int n) {
  std::vector<Edge> edges;
  if (n == 2) return DiGraph(2, {{1, 2}, {2, 1}});
  for (int i = 1; i <= n; ++i) edges.push_back({i, i % n + 1});
  return DiGraph(n, std::move(edges));
}

inline DiGraph complete_graph(int n) {
  std::vector<Edge> edges;
  for (int i = 1; i <= n; ++i)
    for (int k = 1; k <= n; ++k)
      if (i != k) edges.push_back({i, k});
  return DiGraph(n, std::move(edges));
}

/// Bidirectional ring plus two bidirectional diameters, 1 - (1 + n/2) and
/// (1 + n/4) - (1 + 3n/4). For n < 8 this is the plain ring. For n = 12 the
/// largest Laplacian eigenvalue is about 4.81.
inline DiGraph ring_with_chords(int n) {
  if (n < 8) return undirected_ring(n);
  std::vector<Edge> edges = undirected_ring(n).edges();
  const std::vector<std::pair<int, int>> chords = {{1, 1 + n / 2}, {1 + n / 4, 1 + (3 * n) / 4}};
  for (auto [a, b] : chords) {
    edges.push_back({a, b});
    edges.push_back({b, a});
  }
  return DiGraph(n, std::move(edges));
}

}  // namespace regnet::graph
