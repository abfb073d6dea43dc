#include "rotavg/baselines.hpp"

#include <algorithm>
#include <cmath>

namespace rotavg {

double RobustCost::value(double r) const {
  switch (kind) {
    case CostKind::L2: return r * r;
    case CostKind::L1: return r;
    case CostKind::LHalf: return std::sqrt(r);
  }
  return r;
}

double RobustCost::weight(double r) const {
  const double rf = std::max(r, residual_floor);
  switch (kind) {
    case CostKind::L2: return 2.0;
    case CostKind::L1: return 1.0 / rf;
    case CostKind::LHalf: return 0.5 / (rf * std::sqrt(rf));
  }
  return 1.0;
}

std::string to_string(CostKind k) {
  switch (k) {
    case CostKind::L2: return "l2";
    case CostKind::L1: return "l1";
    case CostKind::LHalf: return "l_half";
  }
  return "l1";
}

CostKind cost_from_string(const std::string& s) {
  if (s == "l2") return CostKind::L2;
  if (s == "l1") return CostKind::L1;
  if (s == "l_half" || s == "lhalf" || s == "l0.5") return CostKind::LHalf;
  throw InvalidConfig("unknown robust cost '" + s + "'");
}

double objective_value(const ViewGraph& g, std::span<const Quat> values, const RobustCost& cost) {
  if (static_cast<int>(values.size()) != g.node_count()) {
    throw MissingEstimate("node value count does not match graph");
  }
  double total = 0.0;
  for (const Edge& e : g.edges()) {
    total += cost.value(geodesic_distance(e.rel, compose(values[e.v], inverse(values[e.u]))));
  }
  return total;
}

namespace {

void require_solvable(const ViewGraph& g, std::span<const Quat> init) {
  if (!check_connected(g).connected) throw DisconnectedGraph("view-graph is not connected");
  if (static_cast<int>(init.size()) != g.node_count()) {
    throw MissingEstimate("initialization does not cover every node");
  }
}

/// Neighbor predictions for node v: R_uv R_u over incoming directed edges.
void predictions(const ViewGraph& g, std::span<const Quat> values, int v, std::vector<Quat>& out) {
  out.clear();
  const auto& de = g.directed_edges();
  for (const Neighbor& nb : g.neighbors(v)) {
    out.push_back(compose(de[nb.directed].rel, values[nb.node]));
  }
}

double node_cost(const Quat& rv, std::span<const Quat> preds, const RobustCost& cost) {
  double total = 0.0;
  for (const Quat& p : preds) total += cost.value(geodesic_distance(rv, p));
  return total;
}

/// Applies `step` at `rv` if it lowers the node cost, halving it otherwise.
/// Returns the length of the accepted step (0 if none).
double accept_step(Quat& rv, const Eigen::Vector3d& step, std::span<const Quat> preds,
                   const RobustCost& cost) {
  const double current = node_cost(rv, preds, cost);
  Eigen::Vector3d s = step;
  for (int attempt = 0; attempt < 20 && s.norm() > 0.0; ++attempt, s *= 0.5) {
    const Quat trial = compose(rv, Quat::exp(s));
    if (node_cost(trial, preds, cost) <= current) {
      rv = trial;
      return s.norm();
    }
  }
  return 0.0;
}

template <typename NodeStep>
void sweep_until_converged(const ViewGraph& g, std::vector<Quat>& values,
                                   const SolverOptions& opts, const RobustCost& cost,
                                   SolverResult& result, NodeStep&& node_step) {
  std::vector<Quat> preds;
  result.converged = false;
  for (int sweep = 0; sweep < opts.max_iters; ++sweep) {
    double max_move = 0.0;
    for (int v = 0; v < g.node_count(); ++v) {
      predictions(g, values, v, preds);
      if (preds.empty()) continue;
      std::vector<Eigen::Vector3d> residuals;
      residuals.reserve(preds.size());
      const Quat inv = inverse(values[v]);
      for (const Quat& p : preds) residuals.push_back(compose(inv, p).log());
      const Eigen::Vector3d step = node_step(residuals);
      max_move = std::max(max_move, accept_step(values[v], step, preds, cost));
    }
    ++result.sweeps;
    result.objective_history.push_back(objective_value(g, values, cost));
    if (max_move < opts.tol) {
      result.converged = true;
      break;
    }
  }
}

}  // namespace

namespace {

/// Robust M-estimate of tangent-space residuals by reweighting from x = 0.
/// Under L1, residuals within the floor of x count as coincident and are
/// handled with the Vardi-Zhang step, so an exact fit does not pin the node.
Eigen::Vector3d tangent_irls(const std::vector<Eigen::Vector3d>& pts, const RobustCost& cost,
                             int iterations) {
  Eigen::Vector3d x = Eigen::Vector3d::Zero();
  for (int it = 0; it < iterations; ++it) {
    Eigen::Vector3d num = Eigen::Vector3d::Zero();
    Eigen::Vector3d pull = Eigen::Vector3d::Zero();
    double den = 0.0;
    int coincident = 0;
    for (const auto& p : pts) {
      const double d = (p - x).norm();
      if (cost.kind == CostKind::L1 && d < cost.residual_floor) {
        ++coincident;
        continue;
      }
      const double w = cost.weight(d);
      num += w * p;
      pull += w * (p - x);
      den += w;
    }
    if (den == 0.0) break;
    const Eigen::Vector3d target = num / den;
    if (coincident > 0) {
      const double pn = pull.norm();
      const double gamma = pn > 0.0 ? std::min(1.0, coincident / pn) : 1.0;
      x = (1.0 - gamma) * target + gamma * x;
    } else {
      x = target;
    }
  }
  return x;
}

}  // namespace

SolverResult weiszfeld_l1(const ViewGraph& g, std::span<const Quat> init,
                          const SolverOptions& opts) {
  require_solvable(g, init);
  const RobustCost cost{CostKind::L1, opts.residual_floor};
  SolverResult result;
  std::vector<Quat> values(init.begin(), init.end());
  result.objective_history.push_back(objective_value(g, values, cost));
  sweep_until_converged(g, values, opts, cost, result,
                        [&](const std::vector<Eigen::Vector3d>& pts) {
                          return tangent_irls(pts, cost, opts.inner_iters);
                        });
  result.rotations = std::move(values);
  return result;
}

SolverResult irls_average(const ViewGraph& g, std::span<const Quat> init,
                          std::span<const CostKind> schedule, const SolverOptions& opts) {
  require_solvable(g, init);
  if (schedule.empty()) throw InvalidConfig("IRLS needs at least one cost stage");
  SolverResult result;
  std::vector<Quat> values(init.begin(), init.end());
  bool all_converged = true;
  for (CostKind kind : schedule) {
    const RobustCost cost{kind, opts.residual_floor};
    result.objective_history.push_back(objective_value(g, values, cost));
    // one reweighted solve per node visit; weights refresh every sweep
    sweep_until_converged(g, values, opts, cost, result,
                          [&](const std::vector<Eigen::Vector3d>& pts) {
                            return tangent_irls(pts, cost, 1);
                          });
    all_converged = all_converged && result.converged;
  }
  result.converged = all_converged;
  result.rotations = std::move(values);
  return result;
}

SolverResult irls_average(const ViewGraph& g, std::span<const Quat> init,
                          const SolverOptions& opts) {
  static constexpr CostKind kDefault[] = {CostKind::L1, CostKind::LHalf};
  return irls_average(g, init, kDefault, opts);
}

}  // namespace rotavg
