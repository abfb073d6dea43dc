#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "rotavg/viewgraph.hpp"

namespace rotavg {

/// Trajectory-lattice view-graph: node i links to every j with |i - j| <= k,
/// plus sparse random long-range chords.
struct SynthConfig {
  int node_count = 100;
  int base_connectivity = 3;
  double long_edge_prob = 0.3;  // per node, chance of one extra long chord
  double noise_sigma_deg = 5.0;
  double outlier_fraction = 0.0;
  double walk_step_deg = 10.0;  // std-dev per axis of the ground-truth walk
  std::uint64_t seed = 0;
};

void validate(const SynthConfig& cfg);

struct SynthGraph {
  ViewGraph graph;
  SynthConfig config;
  std::vector<int> outlier_edges;     // indices into graph.edges()
  std::vector<double> noise_angle;    // drawn corruption angle per edge, rad
};

SynthGraph generate(const SynthConfig& cfg);

/// Uniform rotation on SO(3) via a normalized 4D Gaussian.
Quat random_rotation(std::mt19937_64& rng);
/// Small-angle noise: axis uniform on the sphere, angle |N(0, sigma)|.
Quat random_noise_rotation(std::mt19937_64& rng, double sigma_rad, double* angle_out = nullptr);

/// `<name>.meta.json`: config echo plus the outlier edge list.
void write_meta(const SynthGraph& s, const std::string& path);

struct DatasetSpec {
  SynthConfig base;
  int count = 1;
  int min_nodes = 100;
  int max_nodes = 100;
  std::uint64_t seed = 0;
  std::string out_dir = ".";
  std::string prefix = "graph";
  int threads = 1;
};

/// Config of dataset member `index`: seed = spec.seed + index, node count
/// drawn uniformly from [min_nodes, max_nodes].
SynthConfig dataset_member_config(const DatasetSpec& spec, int index);

/// Writes `count` graph files (plus sidecar meta) and returns their paths.
std::vector<std::string> generate_dataset(const DatasetSpec& spec);

}  // namespace rotavg
