#pragma once

#include <span>
#include <string>
#include <vector>

#include "rotavg/viewgraph.hpp"

namespace rotavg {

enum class CostKind { L2, L1, LHalf };

/// Robust cost rho(r) on a residual angle r (radians), with IRLS weight
/// rho'(r)/r evaluated at max(r, residual_floor).
struct RobustCost {
  CostKind kind = CostKind::L1;
  double residual_floor = 1e-6;

  double value(double r) const;
  double weight(double r) const;
};

std::string to_string(CostKind k);
CostKind cost_from_string(const std::string& s);

/// sum over edges of rho(d(R_uv, R_v R_u^-1)).
double objective_value(const ViewGraph& g, std::span<const Quat> values, const RobustCost& cost);

struct SolverOptions {
  int max_iters = 100;
  double tol = 1e-4;             // rad; stop when every node moves less
  double residual_floor = 1e-6;  // rad
  int inner_iters = 10;          // Weiszfeld steps per node visit
};

struct SolverResult {
  std::vector<Quat> rotations;
  int sweeps = 0;
  bool converged = false;
  std::vector<double> objective_history;  // one entry per sweep, plus the start
};

/// Geodesic L1 averaging: each node moves to the Weiszfeld median of its
/// neighbors' predictions R_uv R_u, in the tangent space at its estimate.
/// Gauss-Seidel sweeps in ascending id order.
SolverResult weiszfeld_l1(const ViewGraph& g, std::span<const Quat> init,
                          const SolverOptions& opts = {});

/// Staged IRLS; the default schedule is an L1 roughing stage followed by an
/// L1/2 refinement. One objective history entry per sweep across stages.
SolverResult irls_average(const ViewGraph& g, std::span<const Quat> init,
                          std::span<const CostKind> schedule,
                          const SolverOptions& opts = {});
SolverResult irls_average(const ViewGraph& g, std::span<const Quat> init,
                          const SolverOptions& opts = {});

}  // namespace rotavg
