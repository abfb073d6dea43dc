#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "rotavg/baselines.hpp"
#include "test_util.hpp"

using namespace rotavg;
using rotavg::testing::consistent_graph;
using rotavg::testing::desk_config;
using rotavg::testing::random_rotations;
using rotavg::testing::rot;

TEST_CASE("robust costs") {
  const RobustCost l2{CostKind::L2}, l1{CostKind::L1}, lh{CostKind::LHalf};
  CHECK(l2.value(0.5) == 0.25);
  CHECK(l1.value(0.5) == 0.5);
  CHECK(lh.value(0.25) == 0.5);
  CHECK(l2.weight(0.3) == 2.0);
  CHECK(l1.weight(0.5) == 2.0);
  CHECK(lh.weight(0.25) == doctest::Approx(4.0));
  CHECK(l1.weight(0.0) == doctest::Approx(1e6));
  for (CostKind k : {CostKind::L2, CostKind::L1, CostKind::LHalf}) {
    CHECK(cost_from_string(to_string(k)) == k);
  }
  CHECK_THROWS_AS(cost_from_string("huber"), InvalidConfig);
}

TEST_CASE("objective value") {
  const auto truth = random_rotations(5, 1);
  const std::vector<std::pair<int, int>> pairs{{0, 1}, {1, 2}, {2, 3}, {3, 4}, {0, 4}};
  const ViewGraph g = consistent_graph(truth, pairs);
  CHECK(objective_value(g, truth, RobustCost{CostKind::L1}) < 1e-12);

  std::vector<Edge> edges = g.edges();
  edges[1].rel = compose(rot(0, 1, 0, 30), edges[1].rel);
  const ViewGraph off(5, edges, truth);
  CHECK(objective_value(off, truth, RobustCost{CostKind::L1}) ==
        doctest::Approx(std::numbers::pi / 6).epsilon(1e-12));

  // values are jittered off the SPT start: the L1/2 root magnifies rounding
  // on exactly fitted tree edges
  const SynthGraph s = generate(desk_config(80, 5, 0.2, 2));
  std::mt19937_64 rng(10);
  std::vector<Quat> values;
  for (const Quat& q : spt_initialize(s.graph)) {
    values.push_back(compose(q, random_noise_rotation(rng, 0.05)));
  }
  for (CostKind k : {CostKind::L2, CostKind::L1, CostKind::LHalf}) {
    double brute = 0.0;
    for (const Edge& e : s.graph.edges()) {
      const Eigen::Matrix3d rel =
          values[e.v].to_rotation_matrix() * values[e.u].to_rotation_matrix().transpose();
      const Eigen::Matrix3d d = e.rel.to_rotation_matrix().transpose() * rel;
      const Eigen::Vector3d axial(d(2, 1) - d(1, 2), d(0, 2) - d(2, 0), d(1, 0) - d(0, 1));
      const double angle = std::atan2(0.5 * axial.norm(), 0.5 * (d.trace() - 1.0));
      brute += k == CostKind::L2 ? angle * angle : k == CostKind::L1 ? angle : std::sqrt(angle);
    }
    CHECK(std::abs(objective_value(s.graph, values, RobustCost{k}) - brute) < 1e-12);

    std::vector<Quat> moved;
    for (const Quat& q : values) moved.push_back(compose(q, rot(1, 2, 3, 71)));
    CHECK(std::abs(objective_value(s.graph, moved, RobustCost{k}) -
                   objective_value(s.graph, values, RobustCost{k})) < 1e-9);
  }
  CHECK_THROWS_AS(objective_value(g, std::vector<Quat>(3), RobustCost{}), MissingEstimate);
}

TEST_CASE("noise-free graphs at ground truth are fixed points") {
  const SynthGraph s = generate(desk_config(60, 0, 0, 3));
  const auto& truth = s.graph.ground_truth();
  const SolverResult w = weiszfeld_l1(s.graph, truth);
  const SolverResult r = irls_average(s.graph, truth);
  CHECK(w.converged);
  CHECK(r.converged);
  CHECK(w.sweeps == 1);
  for (int v = 0; v < s.graph.node_count(); ++v) {
    CHECK(geodesic_distance(w.rotations[v], truth[v]) < 1e-12);
    CHECK(geodesic_distance(r.rotations[v], truth[v]) < 1e-12);
  }
}

TEST_CASE("noise-free graphs from the SPT start recover ground truth") {
  const SynthGraph s = generate(desk_config(100, 0, 0, 4));
  const auto init = spt_initialize(s.graph);
  CHECK(rotavg::testing::max_aligned_error_deg(weiszfeld_l1(s.graph, init).rotations,
                                               s.graph.ground_truth()) < 1e-6);
  CHECK(rotavg::testing::max_aligned_error_deg(irls_average(s.graph, init).rotations,
                                               s.graph.ground_truth()) < 1e-6);
}

TEST_CASE("Weiszfeld takes the median of conflicting proposals") {
  // node 0 hears rot(z, 0), rot(z, 0) and rot(z, 90) from three identity leaves
  std::vector<Edge> edges{{1, 0, Quat::identity()},
                          {2, 0, Quat::identity()},
                          {3, 0, rot(0, 0, 1, 90)}};
  const ViewGraph g(4, edges);
  std::vector<Quat> init(4, Quat::identity());
  init[0] = rot(0, 0, 1, 30);
  SolverOptions opts;
  opts.max_iters = 1;
  opts.inner_iters = 200;
  const SolverResult r = weiszfeld_l1(g, init, opts);
  CHECK(rad_to_deg(geodesic_distance(r.rotations[0], Quat::identity())) < 1e-3);
}

TEST_CASE("solvers improve on the SPT start of a noisy graph") {
  const SynthGraph s = generate(desk_config(150, 5, 0.2, 5));
  const auto init = spt_initialize(s.graph);
  const double spt = metrics(init, s.graph.ground_truth()).median_deg;
  const SolverResult w = weiszfeld_l1(s.graph, init);
  CHECK(metrics(w.rotations, s.graph.ground_truth()).median_deg < spt);
  const SolverResult r = irls_average(s.graph, init);
  CHECK(metrics(r.rotations, s.graph.ground_truth()).median_deg < spt);

  for (std::size_t i = 1; i < w.objective_history.size(); ++i) {
    CHECK(w.objective_history[i] <= w.objective_history[i - 1] + 1e-9);
  }
  CHECK(w.objective_history.size() == static_cast<std::size_t>(w.sweeps) + 1);
  CHECK(r.objective_history.size() == static_cast<std::size_t>(r.sweeps) + 2);
}

TEST_CASE("L2 and L1 agree on inlier-only graphs") {
  SynthConfig c = desk_config(120, 1, 0.0, 6);
  c.base_connectivity = 5;
  const SynthGraph s = generate(c);
  const auto init = spt_initialize(s.graph);
  const CostKind l2[] = {CostKind::L2};
  const CostKind l1[] = {CostKind::L1};
  SolverOptions opts;
  opts.max_iters = 1000;
  opts.tol = 1e-6;
  const auto a = irls_average(s.graph, init, l2, opts).rotations;
  const auto b = irls_average(s.graph, init, l1, opts).rotations;
  CHECK(metrics(a, b).median_deg < 0.5);
}

TEST_CASE("the L1/2 refinement does not add gross errors") {
  SynthConfig c = desk_config(150, 5, 0.2, 7);
  c.base_connectivity = 5;
  const SynthGraph s = generate(c);
  const auto init = spt_initialize(s.graph);
  const CostKind l1[] = {CostKind::L1};
  const auto rough = irls_average(s.graph, init, l1).rotations;
  const auto refined = irls_average(s.graph, init).rotations;
  CHECK(metrics(refined, s.graph.ground_truth()).pct_gt(30) <=
        metrics(rough, s.graph.ground_truth()).pct_gt(30));
}

TEST_CASE("solvers are deterministic and validate input") {
  const SynthGraph s = generate(desk_config(70, 5, 0.15, 8));
  const auto init = spt_initialize(s.graph);
  const auto a = weiszfeld_l1(s.graph, init).rotations;
  const auto b = weiszfeld_l1(s.graph, init).rotations;
  const auto c = irls_average(s.graph, init).rotations;
  const auto d = irls_average(s.graph, init).rotations;
  for (int v = 0; v < s.graph.node_count(); ++v) {
    CHECK(a[v].coeffs() == b[v].coeffs());
    CHECK(c[v].coeffs() == d[v].coeffs());
  }

  const auto truth = random_rotations(4, 9);
  const ViewGraph split = consistent_graph(truth, {{0, 1}, {2, 3}});
  CHECK_THROWS_AS(weiszfeld_l1(split, truth), DisconnectedGraph);
  CHECK_THROWS_AS(irls_average(s.graph, std::vector<Quat>(3)), MissingEstimate);
  CHECK_THROWS_AS(irls_average(s.graph, init, std::span<const CostKind>{}), InvalidConfig);
}
