#include "rotavg/viewgraph.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <utility>

namespace rotavg {

ViewGraph::ViewGraph(int node_count, std::vector<Edge> edges,
                     std::optional<std::vector<Quat>> ground_truth)
    : node_count_(node_count),
      edges_(std::move(edges)),
      ground_truth_(std::move(ground_truth)) {
  if (node_count_ < 1) {
    throw EmptyGraph("view-graph needs at least one node");
  }
  if (ground_truth_ && static_cast<int>(ground_truth_->size()) != node_count_) {
    throw NonContiguousIds("ground truth size does not match node count");
  }
  std::map<std::pair<int, int>, int> seen;
  adjacency_.resize(node_count_);
  directed_.reserve(2 * edges_.size());
  for (int i = 0; i < edge_count(); ++i) {
    const Edge& e = edges_[i];
    if (e.u < 0 || e.v < 0 || e.u >= node_count_ || e.v >= node_count_) {
      throw NonContiguousIds("edge " + std::to_string(i) +
                             " references unknown node");
    }
    if (e.u == e.v) {
      throw SelfLoop("edge " + std::to_string(i) + " is a self loop on node " +
                     std::to_string(e.u));
    }
    const auto key = std::minmax(e.u, e.v);
    if (!seen.emplace(std::pair{key.first, key.second}, i).second) {
      throw DuplicateEdge("duplicate edge between " + std::to_string(key.first) +
                          " and " + std::to_string(key.second));
    }
    const int fwd = static_cast<int>(directed_.size());
    directed_.push_back({e.u, e.v, i, e.rel});
    directed_.push_back({e.v, e.u, i, inverse(e.rel)});
    adjacency_[e.v].push_back({e.u, fwd});
    adjacency_[e.u].push_back({e.v, fwd + 1});
  }
  for (auto& list : adjacency_) {
    std::sort(list.begin(), list.end(),
              [](const Neighbor& a, const Neighbor& b) { return a.node < b.node; });
  }
}

const std::vector<Quat>& ViewGraph::ground_truth() const {
  if (!ground_truth_) {
    throw MissingGroundTruth("view-graph has no ground-truth rotations");
  }
  return *ground_truth_;
}

// --- text format -----------------------------------------------------------

namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < line.size() && !(line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

[[noreturn]] void parse_fail(int line_no, const std::string& why) {
  throw ParseError("line " + std::to_string(line_no) + ": " + why);
}

int to_int(std::string_view tok, int line_no) {
  int value = 0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value);
  if (ec != std::errc() || ptr != tok.data() + tok.size()) {
    parse_fail(line_no, "expected integer, got '" + std::string(tok) + "'");
  }
  return value;
}

double to_double(std::string_view tok, int line_no) {
  double value = 0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value);
  if (ec != std::errc() || ptr != tok.data() + tok.size() || !std::isfinite(value)) {
    parse_fail(line_no, "expected number, got '" + std::string(tok) + "'");
  }
  return value;
}

Quat to_quat(const std::vector<std::string_view>& t, std::size_t at, int line_no) {
  try {
    return Quat::normalize(to_double(t[at], line_no), to_double(t[at + 1], line_no),
                           to_double(t[at + 2], line_no), to_double(t[at + 3], line_no));
  } catch (const DegenerateQuaternion&) {
    parse_fail(line_no, "degenerate quaternion");
  }
}

std::string_view strip_comment(std::string_view line) {
  const auto hash = line.find('#');
  return hash == std::string_view::npos ? line : line.substr(0, hash);
}

}  // namespace

std::string format_quat(const Quat& q) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g %.17g", q.w(), q.x(), q.y(), q.z());
  return buf;
}

ViewGraph parse_graph(std::istream& in) {
  std::map<int, std::optional<Quat>> vertices;
  std::vector<Edge> edges;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto tok = split_ws(strip_comment(line));
    if (tok.empty()) continue;
    if (tok[0] == "VERTEX") {
      if (tok.size() != 2 && tok.size() != 6) {
        parse_fail(line_no, "VERTEX expects an id and an optional quaternion");
      }
      const int id = to_int(tok[1], line_no);
      std::optional<Quat> gt;
      if (tok.size() == 6) gt = to_quat(tok, 2, line_no);
      if (!vertices.emplace(id, gt).second) {
        parse_fail(line_no, "duplicate VERTEX " + std::to_string(id));
      }
    } else if (tok[0] == "EDGE") {
      if (tok.size() != 7) {
        parse_fail(line_no, "EDGE expects two ids and a quaternion");
      }
      const int u = to_int(tok[1], line_no);
      const int v = to_int(tok[2], line_no);
      if (u == v) {
        throw SelfLoop("line " + std::to_string(line_no) + ": self loop on node " +
                       std::to_string(u));
      }
      edges.push_back({u, v, to_quat(tok, 3, line_no)});
    } else {
      parse_fail(line_no, "unknown record '" + std::string(tok[0]) + "'");
    }
  }
  if (vertices.empty()) {
    throw ParseError("no VERTEX records");
  }
  const int n = static_cast<int>(vertices.size());
  if (vertices.begin()->first != 0 || vertices.rbegin()->first != n - 1) {
    throw NonContiguousIds("vertex ids must be exactly 0.." + std::to_string(n - 1));
  }
  for (const Edge& e : edges) {
    if (!vertices.contains(e.u) || !vertices.contains(e.v)) {
      throw NonContiguousIds("edge " + std::to_string(e.u) + "-" + std::to_string(e.v) +
                             " references an undeclared vertex");
    }
  }
  const std::size_t with_gt = std::count_if(
      vertices.begin(), vertices.end(), [](const auto& kv) { return kv.second.has_value(); });
  std::optional<std::vector<Quat>> gt;
  if (with_gt == vertices.size()) {
    gt.emplace();
    for (const auto& [id, q] : vertices) gt->push_back(*q);
  } else if (with_gt != 0) {
    throw ParseError("ground truth must be given for all vertices or none");
  }
  return ViewGraph(n, std::move(edges), std::move(gt));
}

ViewGraph read_graph(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open graph file " + path);
  return parse_graph(in);
}

void serialize_graph(const ViewGraph& g, std::ostream& out) {
  for (int v = 0; v < g.node_count(); ++v) {
    out << "VERTEX " << v;
    if (g.has_ground_truth()) out << ' ' << format_quat(g.ground_truth()[v]);
    out << '\n';
  }
  for (const Edge& e : g.edges()) {
    out << "EDGE " << e.u << ' ' << e.v << ' ' << format_quat(e.rel) << '\n';
  }
}

void write_graph(const ViewGraph& g, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write graph file " + path);
  serialize_graph(g, out);
}

std::vector<Quat> parse_estimates(std::istream& in, int node_count) {
  std::vector<std::optional<Quat>> slots(node_count);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto tok = split_ws(strip_comment(line));
    if (tok.empty()) continue;
    if (tok[0] != "EST" || tok.size() != 6) {
      parse_fail(line_no, "expected 'EST <id> <qw> <qx> <qy> <qz>'");
    }
    const int id = to_int(tok[1], line_no);
    if (id < 0 || id >= node_count) {
      parse_fail(line_no, "estimate for unknown node " + std::to_string(id));
    }
    if (slots[id]) parse_fail(line_no, "duplicate estimate for node " + std::to_string(id));
    slots[id] = to_quat(tok, 2, line_no);
  }
  std::vector<Quat> out;
  out.reserve(node_count);
  for (int v = 0; v < node_count; ++v) {
    if (!slots[v]) throw MissingEstimate("no estimate for node " + std::to_string(v));
    out.push_back(*slots[v]);
  }
  return out;
}

std::vector<Quat> read_estimates(const std::string& path, int node_count) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open estimate file " + path);
  return parse_estimates(in, node_count);
}

void serialize_estimates(std::span<const Quat> values, std::ostream& out) {
  for (std::size_t v = 0; v < values.size(); ++v) {
    out << "EST " << v << ' ' << format_quat(values[v]) << '\n';
  }
}

void write_estimates(std::span<const Quat> values, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write estimate file " + path);
  serialize_estimates(values, out);
}

// --- topology --------------------------------------------------------------

Connectivity check_connected(const ViewGraph& g) {
  Connectivity c;
  c.labels.assign(g.node_count(), -1);
  std::vector<int> stack;
  for (int s = 0; s < g.node_count(); ++s) {
    if (c.labels[s] >= 0) continue;
    const int label = c.component_count++;
    c.labels[s] = label;
    stack.push_back(s);
    while (!stack.empty()) {
      const int v = stack.back();
      stack.pop_back();
      for (const Neighbor& nb : g.neighbors(v)) {
        if (c.labels[nb.node] < 0) {
          c.labels[nb.node] = label;
          stack.push_back(nb.node);
        }
      }
    }
  }
  c.connected = c.component_count == 1;
  return c;
}

SpanningTree shortest_path_tree(const ViewGraph& g) {
  if (!check_connected(g).connected) {
    throw DisconnectedGraph("view-graph is not connected");
  }
  const int n = g.node_count();
  SpanningTree t;
  for (int v = 1; v < n; ++v) {
    if (g.degree(v) > g.degree(t.root)) t.root = v;
  }
  t.parent.assign(n, -1);
  t.parent_edge.assign(n, -1);
  t.depth.assign(n, -1);
  t.depth[t.root] = 0;
  t.order.push_back(t.root);

  std::vector<int> layer{t.root};
  while (!layer.empty()) {
    // `layer` is ascending, so the first claim on a node is its lowest-id parent
    std::vector<int> next;
    for (int u : layer) {
      for (const Neighbor& nb : g.neighbors(u)) {
        const int v = nb.node;
        if (t.depth[v] >= 0) continue;
        t.depth[v] = t.depth[u] + 1;
        t.parent[v] = u;
        // nb.directed is v -> u; its sibling is u -> v
        t.parent_edge[v] = nb.directed ^ 1;
        next.push_back(v);
      }
    }
    std::sort(next.begin(), next.end());
    t.order.insert(t.order.end(), next.begin(), next.end());
    layer = std::move(next);
  }
  return t;
}

std::vector<Quat> spt_initialize(const ViewGraph& g) {
  const SpanningTree t = shortest_path_tree(g);
  std::vector<Quat> values(g.node_count());
  const auto& de = g.directed_edges();
  for (int v : t.order) {
    if (v == t.root) continue;
    values[v] = compose(de[t.parent_edge[v]].rel, values[t.parent[v]]);
  }
  return values;
}

std::vector<Quat> edge_discrepancies(const ViewGraph& g, std::span<const Quat> values) {
  if (static_cast<int>(values.size()) != g.node_count()) {
    throw MissingEstimate("expected " + std::to_string(g.node_count()) +
                          " node values, got " + std::to_string(values.size()));
  }
  std::vector<Quat> out;
  out.reserve(g.directed_edges().size());
  for (const DirectedEdge& d : g.directed_edges()) {
    out.push_back(compose(inverse(values[d.dst]), compose(d.rel, values[d.src])));
  }
  return out;
}

std::vector<double> relative_neighborhood_sizes(const ViewGraph& g) {
  std::vector<int> max_nb_degree(g.node_count(), 0);
  for (int v = 0; v < g.node_count(); ++v) {
    for (const Neighbor& nb : g.neighbors(v)) {
      max_nb_degree[v] = std::max(max_nb_degree[v], g.degree(nb.node));
    }
  }
  std::vector<double> out;
  out.reserve(g.directed_edges().size());
  for (const DirectedEdge& d : g.directed_edges()) {
    out.push_back(static_cast<double>(g.degree(d.src)) / max_nb_degree[d.dst]);
  }
  return out;
}

std::vector<double> edge_residuals(const ViewGraph& g, std::span<const Quat> values) {
  std::vector<double> out;
  out.reserve(g.edges().size());
  for (const Edge& e : g.edges()) {
    out.push_back(geodesic_distance(e.rel, compose(values[e.v], inverse(values[e.u]))));
  }
  return out;
}

}  // namespace rotavg
