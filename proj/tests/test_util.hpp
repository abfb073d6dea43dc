#pragma once

#include <random>
#include <vector>

#include "rotavg/so3.hpp"
#include "rotavg/synthgen.hpp"
#include "rotavg/viewgraph.hpp"

namespace rotavg::testing {

inline Quat rot(double x, double y, double z, double deg) {
  return Quat::from_axis_angle(Eigen::Vector3d(x, y, z), deg_to_rad(deg));
}

inline std::vector<Quat> random_rotations(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Quat> out;
  for (int i = 0; i < n; ++i) out.push_back(random_rotation(rng));
  return out;
}

/// Edges consistent with `truth`: rel = truth_v * truth_u^-1.
inline ViewGraph consistent_graph(const std::vector<Quat>& truth,
                                  const std::vector<std::pair<int, int>>& pairs) {
  std::vector<Edge> edges;
  for (auto [u, v] : pairs) edges.push_back({u, v, compose(truth[v], inverse(truth[u]))});
  return ViewGraph(static_cast<int>(truth.size()), std::move(edges), truth);
}

inline SynthConfig desk_config(int nodes, double sigma, double outliers, std::uint64_t seed) {
  SynthConfig c;
  c.node_count = nodes;
  c.noise_sigma_deg = sigma;
  c.outlier_fraction = outliers;
  c.seed = seed;
  return c;
}

inline double max_aligned_error_deg(std::span<const Quat> pred, std::span<const Quat> truth);

}  // namespace rotavg::testing

#include "rotavg/eval_align.hpp"

inline double rotavg::testing::max_aligned_error_deg(std::span<const Quat> pred,
                                                     std::span<const Quat> truth) {
  const auto r = metrics(pred, truth);
  return *std::max_element(r.errors_deg.begin(), r.errors_deg.end());
}
