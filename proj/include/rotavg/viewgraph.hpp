#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rotavg/so3.hpp"

namespace rotavg {

/// Observed relative rotation: `rel` estimates R_v * R_u^-1.
struct Edge {
  int u = 0;
  int v = 0;
  Quat rel;
};

/// One use of an undirected edge, oriented from `src` into `dst`.
/// `rel` maps src's orientation onto dst's: R_dst ~ rel * R_src.
struct DirectedEdge {
  int src = 0;
  int dst = 0;
  int edge = 0;
  Quat rel;
};

struct Neighbor {
  int node = 0;
  int directed = 0;  // index of the directed edge node -> owner
};

/// Immutable camera view-graph. Validated on construction: no self loops,
/// one edge per unordered pair, ids in [0, node_count).
class ViewGraph {
 public:
  ViewGraph(int node_count, std::vector<Edge> edges,
            std::optional<std::vector<Quat>> ground_truth = std::nullopt);

  int node_count() const { return node_count_; }
  int edge_count() const { return static_cast<int>(edges_.size()); }
  const std::vector<Edge>& edges() const { return edges_; }

  /// Directed edges: index 2i is edges()[i] forward (u -> v), 2i+1 is the
  /// reverse use (v -> u) carrying the inverse rotation.
  const std::vector<DirectedEdge>& directed_edges() const { return directed_; }

  /// Incoming neighbors of `v`, sorted by neighbor id.
  std::span<const Neighbor> neighbors(int v) const { return adjacency_[v]; }
  int degree(int v) const { return static_cast<int>(adjacency_[v].size()); }

  bool has_ground_truth() const { return ground_truth_.has_value(); }
  const std::vector<Quat>& ground_truth() const;

 private:
  int node_count_;
  std::vector<Edge> edges_;
  std::optional<std::vector<Quat>> ground_truth_;
  std::vector<DirectedEdge> directed_;
  std::vector<std::vector<Neighbor>> adjacency_;
};

// --- text format -----------------------------------------------------------

ViewGraph parse_graph(std::istream& in);
ViewGraph read_graph(const std::string& path);
void serialize_graph(const ViewGraph& g, std::ostream& out);
void write_graph(const ViewGraph& g, const std::string& path);

/// `EST <id> <qw> <qx> <qy> <qz>` lines, one per node.
std::vector<Quat> parse_estimates(std::istream& in, int node_count);
std::vector<Quat> read_estimates(const std::string& path, int node_count);
void serialize_estimates(std::span<const Quat> values, std::ostream& out);
void write_estimates(std::span<const Quat> values, const std::string& path);

// --- topology --------------------------------------------------------------

struct Connectivity {
  bool connected = false;
  int component_count = 0;
  std::vector<int> labels;  // component id per node, numbered by lowest member
};

Connectivity check_connected(const ViewGraph& g);

struct SpanningTree {
  int root = 0;
  std::vector<int> parent;       // -1 for the root
  std::vector<int> parent_edge;  // directed edge parent -> node, -1 at root
  std::vector<int> depth;
  std::vector<int> order;        // nodes in BFS order
};

/// Root = max-degree node (lowest id on ties); BFS layers, each node's parent
/// is its lowest-id neighbor in the previous layer.
SpanningTree shortest_path_tree(const ViewGraph& g);

/// Absolute rotations composed along the shortest path tree: R_v = R_uv R_u,
/// root fixed at identity.
std::vector<Quat> spt_initialize(const ViewGraph& g);

/// e_uv = R_v^-1 * R_uv * R_u for every directed edge.
std::vector<Quat> edge_discrepancies(const ViewGraph& g,
                                     std::span<const Quat> values);

/// n_uv = |N_u| / max_{j in N_v} |N_j| for every directed edge u -> v.
std::vector<double> relative_neighborhood_sizes(const ViewGraph& g);

/// Relative-pose residual angle d(R_uv, R_v R_u^-1) per undirected edge.
std::vector<double> edge_residuals(const ViewGraph& g,
                                   std::span<const Quat> values);

/// Stream formatting used by every writer: 17 significant digits.
std::string format_quat(const Quat& q);

}  // namespace rotavg
