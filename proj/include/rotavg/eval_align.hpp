#pragma once

#include <array>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "rotavg/viewgraph.hpp"

namespace rotavg {

struct Alignment {
  Quat rotation;             // S, applied on the right of each prediction
  double initial_objective;  // sum of squared geodesic errors at the closed-form start
  double objective;          // after geodesic refinement
  int iterations = 0;
};

/// Global gauge S minimizing sum_v d(truth_v, pred_v * S)^2. Closed-form
/// chordal start, then Riemannian Newton with backtracking.
Alignment align(std::span<const Quat> pred, std::span<const Quat> truth);

inline constexpr std::array<double, 5> kErrorThresholdsDeg{10.0, 15.0, 30.0, 60.0, 90.0};

struct MetricsReport {
  std::vector<double> errors_deg;  // per node, after alignment
  double mean_deg = 0;
  double median_deg = 0;
  double rms_deg = 0;
  std::array<double, 5> pct_above{};  // matches kErrorThresholdsDeg
  Quat alignment;
  int node_count = 0;
  int edge_count = 0;
  double seconds = 0;

  double pct_gt(double threshold_deg) const;
};

struct ErrorSummary {
  double mean = 0, median = 0, rms = 0;
  std::array<double, 5> pct_above{};
};

/// Statistics of a list of errors in degrees; median of an even count is the
/// midpoint of the middle pair.
ErrorSummary summarize(std::span<const double> errors_deg);

MetricsReport metrics(std::span<const Quat> pred, std::span<const Quat> truth,
                      double seconds = 0.0, int edge_count = 0);

inline constexpr const char* kMetricsCsvHeader =
    "graph,solver,n_nodes,n_edges,mean_deg,median_deg,rms_deg,pct_gt10,pct_gt15,pct_gt30,"
    "pct_gt60,pct_gt90,seconds";

std::string metrics_csv_row(const MetricsReport& r, const std::string& graph,
                            const std::string& solver);

/// "mean & med & RMS & %>10 & %>30", three decimals.
std::string summary_table_row(const MetricsReport& r);

struct DegreeErrorRow {
  int node = 0;
  int degree = 0;
  double error_deg = 0;
};

/// One row per node; `values` are aligned against the graph's ground truth.
std::vector<DegreeErrorRow> degree_error_table(const ViewGraph& g, std::span<const Quat> values);

inline constexpr const char* kDegreeErrorCsvHeader = "node,degree,error_deg,stage";
void write_degree_error_csv(std::span<const DegreeErrorRow> rows, const std::string& stage,
                            std::ostream& out);

/// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> x, std::span<const double> y);

}  // namespace rotavg
