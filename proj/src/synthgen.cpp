#include "rotavg/synthgen.hpp"

#include "parallel.hpp"

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <set>
#include <thread>

#include <json.hpp>

namespace rotavg {

void validate(const SynthConfig& cfg) {
  if (cfg.node_count < 3) throw InvalidConfig("node_count must be >= 3");
  if (cfg.base_connectivity < 1) throw InvalidConfig("base_connectivity must be >= 1");
  if (!(cfg.long_edge_prob >= 0.0 && cfg.long_edge_prob <= 1.0)) {
    throw InvalidConfig("long_edge_prob must lie in [0, 1]");
  }
  if (!(cfg.noise_sigma_deg >= 0.0)) throw InvalidConfig("noise sigma must be >= 0");
  if (!(cfg.outlier_fraction >= 0.0 && cfg.outlier_fraction < 1.0)) {
    throw InvalidConfig("outlier_fraction must lie in [0, 1)");
  }
  if (!(cfg.walk_step_deg >= 0.0)) throw InvalidConfig("walk step must be >= 0");
}

Quat random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (;;) {
    Quat::Coeffs c(normal(rng), normal(rng), normal(rng), normal(rng));
    if (c.norm() > 1e-6) return Quat::normalize(c);
  }
}

Quat random_noise_rotation(std::mt19937_64& rng, double sigma_rad, double* angle_out) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::Vector3d axis;
  do {
    axis = Eigen::Vector3d(normal(rng), normal(rng), normal(rng));
  } while (axis.norm() < 1e-6);
  const double angle = std::abs(normal(rng)) * sigma_rad;
  if (angle_out) *angle_out = angle;
  return Quat::from_axis_angle(axis, angle);
}

SynthGraph generate(const SynthConfig& cfg) {
  validate(cfg);
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int n = cfg.node_count;

  std::vector<Quat> truth(n);
  truth[0] = random_rotation(rng);
  const double step = deg_to_rad(cfg.walk_step_deg);
  for (int i = 1; i < n; ++i) {
    const Eigen::Vector3d omega(normal(rng) * step, normal(rng) * step, normal(rng) * step);
    truth[i] = compose(Quat::exp(omega), truth[i - 1]);
  }

  std::vector<std::pair<int, int>> pairs;
  std::set<std::pair<int, int>> taken;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j <= std::min(n - 1, i + cfg.base_connectivity); ++j) {
      pairs.emplace_back(i, j);
      taken.emplace(i, j);
    }
  }
  std::uniform_int_distribution<int> pick(0, n - 1);
  for (int i = 0; i < n; ++i) {
    if (unit(rng) >= cfg.long_edge_prob) continue;
    // bounded retries; dense small graphs may have no free partner
    for (int attempt = 0; attempt < 16; ++attempt) {
      const int j = pick(rng);
      if (std::abs(i - j) <= cfg.base_connectivity) continue;
      const auto key = std::minmax(i, j);
      if (taken.emplace(key.first, key.second).second) {
        pairs.emplace_back(key.first, key.second);
        break;
      }
    }
  }

  const double sigma = deg_to_rad(cfg.noise_sigma_deg);
  SynthGraph out{ViewGraph(1, {}), cfg, {}, {}};
  std::vector<Edge> edges;
  edges.reserve(pairs.size());
  for (auto [a, b] : pairs) {
    int u = a, v = b;
    if (unit(rng) < 0.5) std::swap(u, v);
    const Quat exact = compose(truth[v], inverse(truth[u]));
    Quat corruption;
    double angle = 0.0;
    if (unit(rng) < cfg.outlier_fraction) {
      corruption = random_rotation(rng);
      angle = rotation_angle(corruption);
      out.outlier_edges.push_back(static_cast<int>(edges.size()));
    } else if (sigma > 0.0) {
      corruption = random_noise_rotation(rng, sigma, &angle);
    }
    out.noise_angle.push_back(angle);
    edges.push_back({u, v, compose(corruption, exact)});
  }
  out.graph = ViewGraph(n, std::move(edges), std::move(truth));
  return out;
}

void write_meta(const SynthGraph& s, const std::string& path) {
  const SynthConfig& c = s.config;
  nlohmann::ordered_json j;
  j["config"] = {
      {"node_count", c.node_count},
      {"base_connectivity", c.base_connectivity},
      {"long_edge_prob", c.long_edge_prob},
      {"noise_sigma_deg", c.noise_sigma_deg},
      {"outlier_fraction", c.outlier_fraction},
      {"walk_step_deg", c.walk_step_deg},
      {"seed", c.seed},
  };
  j["edge_count"] = s.graph.edge_count();
  auto outliers = nlohmann::ordered_json::array();
  for (int e : s.outlier_edges) {
    const Edge& edge = s.graph.edges()[e];
    outliers.push_back({{"edge", e}, {"u", edge.u}, {"v", edge.v}});
  }
  j["outlier_edges"] = std::move(outliers);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << j.dump(2) << '\n';
}

SynthConfig dataset_member_config(const DatasetSpec& spec, int index) {
  if (spec.min_nodes > spec.max_nodes) {
    throw InvalidConfig("min_nodes exceeds max_nodes");
  }
  SynthConfig cfg = spec.base;
  cfg.seed = spec.seed + static_cast<std::uint64_t>(index);
  // separate stream so the size draw never perturbs the graph's own sequence
  std::mt19937_64 size_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  cfg.node_count = std::uniform_int_distribution<int>(spec.min_nodes, spec.max_nodes)(size_rng);
  return cfg;
}

std::vector<std::string> generate_dataset(const DatasetSpec& spec) {
  if (spec.count < 1) throw InvalidConfig("dataset count must be >= 1");
  for (int i = 0; i < spec.count; ++i) validate(dataset_member_config(spec, i));
  std::filesystem::create_directories(spec.out_dir);

  std::vector<std::string> paths(spec.count);
  for (int i = 0; i < spec.count; ++i) {
    char name[64];
    std::snprintf(name, sizeof name, "%s_%04d", spec.prefix.c_str(), i);
    paths[i] = (std::filesystem::path(spec.out_dir) / name).string();
  }

  detail::parallel_for(spec.count, spec.threads, [&](int i) {
    const SynthGraph s = generate(dataset_member_config(spec, i));
    write_graph(s.graph, paths[i] + ".vg");
    write_meta(s, paths[i] + ".meta.json");
  });
  for (auto& p : paths) p += ".vg";
  return paths;
}

}  // namespace rotavg
