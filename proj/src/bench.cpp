#include "rotavg/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ostream>

#include "rotavg/eval_align.hpp"

namespace rotavg {

double median_seconds(const std::function<void()>& fn, int repeats) {
  if (repeats < 1) throw InvalidConfig("repeats must be >= 1");
  std::vector<double> times;
  for (int i = 0; i < repeats; ++i) {
    const auto start = std::chrono::steady_clock::now();
    fn();
    const auto stop = std::chrono::steady_clock::now();
    times.push_back(std::chrono::duration<double>(stop - start).count());
  }
  return summarize(times).median;
}

std::vector<BenchRow> bench(std::span<const BenchSolver> solvers, std::span<const int> sizes,
                            int repeats, const SynthConfig& base) {
  std::vector<BenchRow> rows;
  for (int n : sizes) {
    SynthConfig cfg = base;
    cfg.node_count = n;
    const SynthGraph s = generate(cfg);
    std::vector<Quat> init;
    const double init_time = median_seconds([&] { init = spt_initialize(s.graph); }, repeats);
    for (const BenchSolver& solver : solvers) {
      std::vector<Quat> out;
      BenchRow row;
      row.solver = solver.name;
      row.n_nodes = n;
      row.n_edges = s.graph.edge_count();
      row.repeats = repeats;
      row.median_seconds = median_seconds([&] { out = solver.run(s.graph, init); }, repeats);
      row.init_seconds = init_time;
      row.median_error_deg = metrics(out, s.graph.ground_truth()).median_deg;
      rows.push_back(row);
    }
  }
  return rows;
}

void write_bench_csv(std::span<const BenchRow> rows, std::ostream& out) {
  char buf[256];
  for (const BenchRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%d,%d,%.6f,%.6f,%.3f", r.n_nodes, r.n_edges, r.repeats,
                  r.median_seconds, r.init_seconds, r.median_error_deg);
    out << r.solver << ',' << buf << '\n';
  }
}

}  // namespace rotavg
