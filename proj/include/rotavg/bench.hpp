#pragma once

#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "rotavg/synthgen.hpp"

namespace rotavg {

/// A solver under timing; it receives the graph and its SPT initialization.
struct BenchSolver {
  std::string name;
  std::function<std::vector<Quat>(const ViewGraph&, std::span<const Quat> init)> run;
};

struct BenchRow {
  std::string solver;
  int n_nodes = 0;
  int n_edges = 0;
  int repeats = 0;
  double median_seconds = 0;  // solver only; SPT init, file IO and model load excluded
  double init_seconds = 0;    // median SPT initialization time
  double median_error_deg = 0;
};

/// Median wall-clock of `repeats` calls.
double median_seconds(const std::function<void()>& fn, int repeats);

/// Generates one graph per size from `base` (seed fixed) and times every
/// solver on it.
std::vector<BenchRow> bench(std::span<const BenchSolver> solvers, std::span<const int> sizes,
                            int repeats, const SynthConfig& base);

inline constexpr const char* kBenchCsvHeader =
    "solver,n_nodes,n_edges,repeats,median_seconds,init_seconds,median_error_deg";
void write_bench_csv(std::span<const BenchRow> rows, std::ostream& out);

}  // namespace rotavg
