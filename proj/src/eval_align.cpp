#include "rotavg/eval_align.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <ostream>

namespace rotavg {

namespace {

double sum_sq(std::span<const Quat> offsets, const Quat& s) {
  double total = 0.0;
  for (const Quat& q : offsets) {
    const double d = geodesic_distance(s, q);
    total += d * d;
  }
  return total;
}

}  // namespace

Alignment align(std::span<const Quat> pred, std::span<const Quat> truth) {
  if (pred.empty()) throw EmptyGraph("cannot align an empty graph");
  if (pred.size() != truth.size()) {
    throw MissingEstimate("prediction and truth sizes differ");
  }
  // d(truth_v, pred_v S) = d(pred_v^-1 truth_v, S): S is the geodesic L2 mean
  // of the per-node offsets
  std::vector<Quat> offsets;
  offsets.reserve(pred.size());
  Eigen::Matrix4d scatter = Eigen::Matrix4d::Zero();
  for (std::size_t v = 0; v < pred.size(); ++v) {
    offsets.push_back(compose(inverse(pred[v]), truth[v]));
    scatter += offsets.back().coeffs() * offsets.back().coeffs().transpose();
  }
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> eig(scatter);
  Quat s = Quat::normalize(eig.eigenvectors().col(3));

  Alignment out{s, sum_sq(offsets, s), 0.0, 0};
  double current = out.initial_objective;
  for (int iter = 0; iter < 100; ++iter) {
    // Newton step on sum_v theta_v^2 / 2 in the tangent space at s
    Eigen::Vector3d grad = Eigen::Vector3d::Zero();
    Eigen::Matrix3d hess = Eigen::Matrix3d::Zero();
    for (const Quat& q : offsets) {
      const Eigen::Vector3d r = compose(inverse(s), q).log();
      const double theta = r.norm();
      grad += r;
      if (theta < 1e-8) {
        hess += Eigen::Matrix3d::Identity();
        continue;
      }
      const Eigen::Vector3d u = r / theta;
      const double c = 0.5 * theta / std::tan(0.5 * theta);
      hess += u * u.transpose() + c * (Eigen::Matrix3d::Identity() - u * u.transpose());
    }
    Eigen::Vector3d step = grad / static_cast<double>(offsets.size());
    const Eigen::LDLT<Eigen::Matrix3d> ldlt(hess);
    if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
      const Eigen::Vector3d newton = ldlt.solve(grad);
      if (newton.allFinite() && newton.dot(grad) > 0.0) step = newton;
    }
    if (step.norm() < 1e-15) break;
    out.iterations = iter + 1;
    if (step.norm() < 1e-6) {
      s = compose(s, Quat::exp(step));
      current = sum_sq(offsets, s);
      continue;
    }
    bool moved = false;
    for (double scale = 1.0; scale > 1e-6; scale *= 0.5) {
      const Quat trial = compose(s, Quat::exp(scale * step));
      const double value = sum_sq(offsets, trial);
      if (value <= current) {
        s = trial;
        current = value;
        moved = true;
        break;
      }
    }
    if (!moved) break;
  }
  out.rotation = s;
  out.objective = current;
  return out;
}

double MetricsReport::pct_gt(double threshold_deg) const {
  for (std::size_t i = 0; i < kErrorThresholdsDeg.size(); ++i) {
    if (kErrorThresholdsDeg[i] == threshold_deg) return pct_above[i];
  }
  const auto above = std::count_if(errors_deg.begin(), errors_deg.end(),
                                   [&](double e) { return e > threshold_deg; });
  return errors_deg.empty() ? 0.0 : 100.0 * above / static_cast<double>(errors_deg.size());
}

ErrorSummary summarize(std::span<const double> errors_deg) {
  ErrorSummary s;
  if (errors_deg.empty()) return s;
  const double n = static_cast<double>(errors_deg.size());
  std::vector<double> sorted(errors_deg.begin(), errors_deg.end());
  std::sort(sorted.begin(), sorted.end());
  s.mean = std::accumulate(sorted.begin(), sorted.end(), 0.0) / n;
  s.rms = std::sqrt(std::inner_product(sorted.begin(), sorted.end(), sorted.begin(), 0.0) / n);
  const std::size_t mid = sorted.size() / 2;
  s.median = sorted.size() % 2 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
  for (std::size_t i = 0; i < kErrorThresholdsDeg.size(); ++i) {
    const auto above = sorted.end() - std::upper_bound(sorted.begin(), sorted.end(),
                                                       kErrorThresholdsDeg[i]);
    s.pct_above[i] = 100.0 * static_cast<double>(above) / n;
  }
  return s;
}

MetricsReport metrics(std::span<const Quat> pred, std::span<const Quat> truth, double seconds,
                      int edge_count) {
  const Alignment a = align(pred, truth);
  MetricsReport r;
  r.alignment = a.rotation;
  r.node_count = static_cast<int>(pred.size());
  r.edge_count = edge_count;
  r.seconds = seconds;
  r.errors_deg.reserve(pred.size());
  for (std::size_t v = 0; v < pred.size(); ++v) {
    r.errors_deg.push_back(rad_to_deg(geodesic_distance(truth[v], compose(pred[v], a.rotation))));
  }
  const ErrorSummary s = summarize(r.errors_deg);
  r.mean_deg = s.mean;
  r.median_deg = s.median;
  r.rms_deg = s.rms;
  r.pct_above = s.pct_above;
  return r;
}

std::string metrics_csv_row(const MetricsReport& r, const std::string& graph,
                            const std::string& solver) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%s,%s,%d,%d,%.3f,%.3f,%.3f,%.3f,%.3f,%.3f,%.3f,%.3f,%.6f",
                graph.c_str(), solver.c_str(), r.node_count, r.edge_count, r.mean_deg,
                r.median_deg, r.rms_deg, r.pct_above[0], r.pct_above[1], r.pct_above[2],
                r.pct_above[3], r.pct_above[4], r.seconds);
  return buf;
}

std::string summary_table_row(const MetricsReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%.3f & %.3f & %.3f & %.3f & %.3f", r.mean_deg, r.median_deg,
                r.rms_deg, r.pct_gt(10.0), r.pct_gt(30.0));
  return buf;
}

std::vector<DegreeErrorRow> degree_error_table(const ViewGraph& g, std::span<const Quat> values) {
  const MetricsReport r = metrics(values, g.ground_truth());
  std::vector<DegreeErrorRow> rows;
  rows.reserve(g.node_count());
  for (int v = 0; v < g.node_count(); ++v) rows.push_back({v, g.degree(v), r.errors_deg[v]});
  return rows;
}

void write_degree_error_csv(std::span<const DegreeErrorRow> rows, const std::string& stage,
                            std::ostream& out) {
  char buf[128];
  for (const DegreeErrorRow& row : rows) {
    std::snprintf(buf, sizeof buf, "%d,%d,%.3f,", row.node, row.degree, row.error_deg);
    out << buf << stage << '\n';
  }
}

namespace {

std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return x[a] < x[b]; });
  std::vector<double> rank(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = r;
    i = j + 1;
  }
  return rank;
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw InvalidConfig("spearman needs two equal-length samples of size >= 2");
  }
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace rotavg
