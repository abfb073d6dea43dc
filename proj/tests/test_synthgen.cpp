#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include <json.hpp>

#include "rotavg/synthgen.hpp"
#include "test_util.hpp"

using namespace rotavg;
using rotavg::testing::desk_config;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string serialize(const ViewGraph& g) {
  std::ostringstream out;
  serialize_graph(g, out);
  return out.str();
}

double edge_error(const ViewGraph& g, const Edge& e) {
  const auto& t = g.ground_truth();
  return geodesic_distance(e.rel, compose(t[e.v], inverse(t[e.u])));
}

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("rotavg_test_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("config validation") {
  SynthConfig c;
  c.node_count = 1;
  CHECK_THROWS_AS(validate(c), InvalidConfig);
  c = SynthConfig{};
  c.outlier_fraction = 1.0;
  CHECK_THROWS_AS(validate(c), InvalidConfig);
  c = SynthConfig{};
  c.noise_sigma_deg = -1;
  CHECK_THROWS_AS(validate(c), InvalidConfig);
  c = SynthConfig{};
  c.base_connectivity = 0;
  CHECK_THROWS_AS(validate(c), InvalidConfig);
  CHECK_NOTHROW(validate(SynthConfig{}));
}

TEST_CASE("noise-free graphs are exactly consistent") {
  const SynthGraph s = generate(desk_config(100, 0, 0, 1));
  CHECK(s.outlier_edges.empty());
  for (const Edge& e : s.graph.edges()) CHECK(edge_error(s.graph, e) < 1e-12);
  for (const Quat& q : edge_discrepancies(s.graph, s.graph.ground_truth())) {
    CHECK(geodesic_distance(q, Quat::identity()) < 1e-12);
  }
}

TEST_CASE("lattice topology") {
  SynthConfig c = desk_config(50, 5, 0, 2);
  c.base_connectivity = 3;
  c.long_edge_prob = 0.0;
  const SynthGraph s = generate(c);
  CHECK(s.graph.edge_count() == 50 * 3 - 6);
  for (const Edge& e : s.graph.edges()) CHECK(std::abs(e.u - e.v) <= 3);

  c.long_edge_prob = 1.0;
  const SynthGraph dense = generate(c);
  CHECK(dense.graph.edge_count() > s.graph.edge_count());
}

TEST_CASE("inlier noise matches the drawn angles") {
  const SynthGraph s = generate(desk_config(100, 5, 0, 3));
  const double sigma = deg_to_rad(5.0);
  double mean = 0.0;
  for (int i = 0; i < s.graph.edge_count(); ++i) {
    const double err = edge_error(s.graph, s.graph.edges()[i]);
    CHECK(std::abs(err - s.noise_angle[i]) < 1e-9);
    mean += err;
  }
  mean /= s.graph.edge_count();
  // folded normal mean sigma * sqrt(2 / pi); a few hundred samples
  CHECK(mean == doctest::Approx(sigma * std::sqrt(2.0 / std::numbers::pi)).epsilon(0.15));
}

TEST_CASE("outlier fraction") {
  const double sigma = 5.0;
  int edges = 0, large = 0, labelled = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const SynthGraph s = generate(desk_config(200, sigma, 0.2, seed));
    const std::set<int> outliers(s.outlier_edges.begin(), s.outlier_edges.end());
    for (int i = 0; i < s.graph.edge_count(); ++i) {
      const bool is_large = rad_to_deg(edge_error(s.graph, s.graph.edges()[i])) > 3 * sigma;
      large += is_large;
      labelled += outliers.contains(i);
      if (!outliers.contains(i)) CHECK(s.noise_angle[i] == doctest::Approx(edge_error(s.graph, s.graph.edges()[i])));
    }
    edges += s.graph.edge_count();
  }
  CHECK(static_cast<double>(large) / edges == doctest::Approx(0.2).epsilon(0.15));
  CHECK(static_cast<double>(labelled) / edges == doctest::Approx(0.2).epsilon(0.15));
}

TEST_CASE("generation is deterministic and seed dependent") {
  const SynthConfig c = desk_config(120, 5, 0.15, 77);
  CHECK(serialize(generate(c).graph) == serialize(generate(c).graph));
  SynthConfig other = c;
  other.seed = 78;
  CHECK(serialize(generate(other).graph) != serialize(generate(c).graph));
}

TEST_CASE("generated graphs are connected") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    SynthConfig c = desk_config(100 + static_cast<int>(seed) * 10, 5, 0.3, seed);
    c.base_connectivity = 1;
    CHECK(check_connected(generate(c).graph).connected);
  }
}

TEST_CASE("edges depend only on relative pose") {
  const SynthGraph s = generate(desk_config(60, 5, 0.1, 4));
  const Quat g = rotavg::testing::rot(1, -1, 2, 63);
  const auto& t = s.graph.ground_truth();
  for (const Edge& e : s.graph.edges()) {
    const Quat moved = compose(compose(t[e.v], g), inverse(compose(t[e.u], g)));
    CHECK(geodesic_distance(moved, compose(t[e.v], inverse(t[e.u]))) < 1e-12);
  }
}

TEST_CASE("dataset generation") {
  const auto dir = scratch_dir("dataset");
  DatasetSpec spec;
  spec.base = desk_config(100, 5, 0.15, 0);
  spec.count = 1;
  spec.seed = 5;
  spec.out_dir = dir.string();
  const auto one = generate_dataset(spec);
  REQUIRE(one.size() == 1);
  SynthConfig member = dataset_member_config(spec, 0);
  CHECK(member.seed == 5);
  std::ostringstream expect;
  serialize_graph(generate(member).graph, expect);
  CHECK(slurp(one[0]) == expect.str());

  const auto meta = nlohmann::json::parse(slurp(dir / "graph_0000.meta.json"));
  CHECK(meta.contains("outlier_edges"));

  spec.count = 12;
  spec.min_nodes = 100;
  spec.max_nodes = 250;
  spec.threads = 3;
  const auto first = generate_dataset(spec);
  std::vector<std::string> bytes;
  for (const auto& p : first) bytes.push_back(slurp(p));
  spec.threads = 1;
  const auto second = generate_dataset(spec);
  for (std::size_t i = 0; i < second.size(); ++i) CHECK(slurp(second[i]) == bytes[i]);
  for (std::size_t i = 0; i < second.size(); ++i) {
    const int n = read_graph(second[i]).node_count();
    CHECK(n >= 100);
    CHECK(n <= 250);
  }

  spec.seed = 1000;
  spec.out_dir = (dir / "other").string();
  std::set<std::string> all(bytes.begin(), bytes.end());
  for (const auto& p : generate_dataset(spec)) CHECK_FALSE(all.contains(slurp(p)));
  std::filesystem::remove_all(dir);
}

TEST_CASE("dataset errors propagate from worker threads") {
  const auto dir = scratch_dir("blocked");
  // a directory in place of an output file cannot be opened for writing
  std::filesystem::create_directories(dir / "graph_0003.vg");
  DatasetSpec spec;
  spec.count = 6;
  spec.threads = 3;
  spec.out_dir = dir.string();
  CHECK_THROWS_AS(generate_dataset(spec), IoError);
  std::filesystem::remove_all(dir);
}
