#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "rotavg/attention_mra.hpp"
#include "rotavg/baselines.hpp"
#include "rotavg/bench.hpp"
#include "rotavg/errors.hpp"
#include "rotavg/eval_align.hpp"
#include "rotavg/synthgen.hpp"
#include "rotavg/viewgraph.hpp"

namespace rotavg::cli {

namespace {

enum class Level { Error = 0, Warn = 1, Info = 2, Debug = 3 };

class Logger {
 public:
  explicit Logger(std::ostream& sink) : sink_(sink) {
    if (const char* env = std::getenv("ROTAVG_LOG")) {
      const std::string v = env;
      if (v == "error") level_ = Level::Error;
      else if (v == "warn") level_ = Level::Warn;
      else if (v == "info") level_ = Level::Info;
      else if (v == "debug") level_ = Level::Debug;
    }
  }
  void raise_to(Level l) { level_ = std::max(level_, l); }
  void log(Level l, const std::string& msg) const {
    static constexpr const char* kNames[] = {"error", "warn", "info", "debug"};
    if (l <= level_) sink_ << '[' << kNames[static_cast<int>(l)] << "] " << msg << '\n';
  }
  void info(const std::string& msg) const { log(Level::Info, msg); }
  void debug(const std::string& msg) const { log(Level::Debug, msg); }

 private:
  std::ostream& sink_;
  Level level_ = Level::Info;
};

struct Globals {
  std::uint64_t seed = 0;
  int threads = 1;
  bool verbose = false;
};

struct GenFlags {
  std::string out_dir = ".";
  std::string prefix = "graph";
  int count = 1;
  int nodes = 100;
  int max_nodes = 0;
  int connectivity = 3;
  double long_edge_prob = 0.3;
  double sigma = 5.0;
  double outliers = 0.0;
  double walk_step = 10.0;
};

struct InitFlags {
  std::string graph, out;
};

struct TrainFlags {
  std::string data, val, out, log;
  int epochs = 30;
  double lr = 1e-3;
  double min_lr = 1e-5;
  int t_max = 4;
  int infer_iterations = 0;
  double beta = 0.25;
  int message_dim = 32;
  std::string aggregation = "mean";
  bool keep_optimizer = false;
};

struct InferFlags {
  std::string graph, checkpoint, out, init;
  int iterations = -1;
};

struct BaselineFlags {
  std::string graph, out, init;
  std::string solver = "weiszfeld";
  int max_iters = 100;
  double tol = 1e-4;
  std::vector<std::string> schedule{"l1", "l_half"};
};

struct EvalFlags {
  std::string graph, est, out, degree_out;
  std::string label = "estimate";
};

struct BenchFlags {
  std::vector<int> sizes{100, 400, 1000};
  std::vector<std::string> solvers{"weiszfeld", "irls"};
  std::string checkpoint, out;
  int repeats = 3;
  int connectivity = 3;
  double long_edge_prob = 0.3;
  double sigma = 5.0;
  double outliers = 0.15;
};

struct Flags {
  Globals global;
  GenFlags gen;
  InitFlags init;
  TrainFlags train;
  InferFlags infer;
  BaselineFlags baseline;
  EvalFlags eval;
  BenchFlags bench;
};

void build(CLI::App& app, Flags& f) {
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML/INI file supplying defaults for any flag");
  app.add_option("--seed", f.global.seed, "Seed for every random draw")->capture_default_str();
  app.add_option("--threads", f.global.threads, "Worker threads for parallel work")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app.add_flag("--verbose", f.global.verbose, "Debug-level logging");

  auto* gen = app.add_subcommand("gen", "Generate synthetic view-graphs with ground truth");
  gen->add_option("--out-dir", f.gen.out_dir, "Output directory")->capture_default_str();
  gen->add_option("--prefix", f.gen.prefix, "File name prefix")->capture_default_str();
  gen->add_option("--count", f.gen.count, "Number of graphs")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  gen->add_option("--nodes", f.gen.nodes, "Node count (minimum when --max-nodes is set)")
      ->capture_default_str();
  gen->add_option("--max-nodes", f.gen.max_nodes, "Upper node count; 0 means --nodes")
      ->capture_default_str();
  gen->add_option("--connectivity", f.gen.connectivity, "Lattice half-width k")
      ->capture_default_str();
  gen->add_option("--long-edge-prob", f.gen.long_edge_prob, "Per-node long chord probability")
      ->capture_default_str();
  gen->add_option("--sigma", f.gen.sigma, "Inlier noise std-dev, degrees")->capture_default_str();
  gen->add_option("--outliers", f.gen.outliers, "Outlier edge fraction in [0,1]")
      ->capture_default_str();
  gen->add_option("--walk-step", f.gen.walk_step, "Ground-truth walk step, degrees")
      ->capture_default_str();

  auto* init = app.add_subcommand("init", "Shortest-path-tree initialization");
  init->add_option("--graph", f.init.graph, "Input graph file")->required();
  init->add_option("--out", f.init.out, "Output estimate file")->required();

  auto* train = app.add_subcommand("train", "Train the attention network");
  train->add_option("--data", f.train.data, "Directory of training graphs (*.vg)")->required();
  train->add_option("--val", f.train.val, "Directory of validation graphs (*.vg)");
  train->add_option("--out", f.train.out, "Checkpoint file")->required();
  train->add_option("--log", f.train.log, "Per-epoch CSV log");
  train->add_option("--epochs", f.train.epochs, "Epochs")->capture_default_str();
  train->add_option("--lr", f.train.lr, "Initial learning rate")->capture_default_str();
  train->add_option("--min-lr", f.train.min_lr, "Cosine schedule floor")->capture_default_str();
  train->add_option("--t-max", f.train.t_max, "Message-passing iterations")
      ->capture_default_str();
  train->add_option("--infer-iterations", f.train.infer_iterations,
                    "Iterations at validation and inference; 0 means --t-max")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  train->add_option("--beta", f.train.beta, "Absolute loss weight")->capture_default_str();
  train->add_option("--message-dim", f.train.message_dim, "Message width")
      ->capture_default_str();
  train->add_option("--aggregation", f.train.aggregation, "Per-iteration loss: mean|sum|last")
      ->check(CLI::IsMember({"mean", "sum", "last"}))
      ->capture_default_str();
  train->add_flag("--keep-optimizer", f.train.keep_optimizer,
                  "Store Adam moments in the checkpoint");

  auto* infer = app.add_subcommand("infer", "Run a trained network on a graph");
  infer->add_option("--graph", f.infer.graph, "Input graph file")->required();
  infer->add_option("--checkpoint", f.infer.checkpoint, "Checkpoint file")->required();
  infer->add_option("--out", f.infer.out, "Output estimate file")->required();
  infer->add_option("--init", f.infer.init, "Initial estimates (default: SPT)");
  infer->add_option("--iterations", f.infer.iterations,
                    "Iterations; negative uses the checkpoint's setting")
      ->capture_default_str();

  auto* base = app.add_subcommand("baseline", "Run a classical averaging solver");
  base->add_option("--graph", f.baseline.graph, "Input graph file")->required();
  base->add_option("--out", f.baseline.out, "Output estimate file")->required();
  base->add_option("--solver", f.baseline.solver, "weiszfeld|irls")
      ->check(CLI::IsMember({"weiszfeld", "irls"}))
      ->capture_default_str();
  base->add_option("--init", f.baseline.init, "Initial estimates (default: SPT)");
  base->add_option("--max-iters", f.baseline.max_iters, "Sweep cap per stage")
      ->capture_default_str();
  base->add_option("--tol", f.baseline.tol, "Stop when no node moves more (rad)")
      ->capture_default_str();
  base->add_option("--schedule", f.baseline.schedule, "IRLS cost stages: l2|l1|l_half")
      ->delimiter(',')
      ->capture_default_str();

  auto* ev = app.add_subcommand("eval", "Aligned error metrics against ground truth");
  ev->add_option("--graph", f.eval.graph, "Graph file with ground truth")->required();
  ev->add_option("--est", f.eval.est, "Estimate file")->required();
  ev->add_option("--out", f.eval.out, "Metrics CSV")->required();
  ev->add_option("--degree-out", f.eval.degree_out, "Per-node degree/error CSV");
  ev->add_option("--label", f.eval.label, "Solver/stage label for the rows")
      ->capture_default_str();

  auto* bench = app.add_subcommand("bench", "Runtime benchmark on generated graphs");
  bench->add_option("--sizes", f.bench.sizes, "Node counts")->delimiter(',')->capture_default_str();
  bench->add_option("--solvers", f.bench.solvers, "weiszfeld|irls|network")
      ->delimiter(',')
      ->check(CLI::IsMember({"weiszfeld", "irls", "network"}))
      ->capture_default_str();
  bench->add_option("--checkpoint", f.bench.checkpoint, "Checkpoint for the network solver");
  bench->add_option("--out", f.bench.out, "Runtime CSV")->required();
  bench->add_option("--repeats", f.bench.repeats, "Timed repeats per cell")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  bench->add_option("--connectivity", f.bench.connectivity, "Lattice half-width k")
      ->capture_default_str();
  bench->add_option("--long-edge-prob", f.bench.long_edge_prob, "Per-node long chord probability")
      ->capture_default_str();
  bench->add_option("--sigma", f.bench.sigma, "Inlier noise std-dev, degrees")
      ->capture_default_str();
  bench->add_option("--outliers", f.bench.outliers, "Outlier edge fraction")
      ->capture_default_str();
}

std::vector<ViewGraph> read_graph_dir(const std::string& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("not a directory: " + dir);
  std::vector<std::string> paths;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".vg") {
      paths.push_back(entry.path().string());
    }
  }
  std::sort(paths.begin(), paths.end());
  std::vector<ViewGraph> graphs;
  graphs.reserve(paths.size());
  for (const auto& p : paths) graphs.push_back(read_graph(p));
  return graphs;
}

std::vector<Quat> initial_values(const ViewGraph& g, const std::string& init_path) {
  if (init_path.empty()) return spt_initialize(g);
  return read_estimates(init_path, g.node_count());
}

SolverOptions solver_options(const BaselineFlags& b) {
  SolverOptions o;
  o.max_iters = b.max_iters;
  o.tol = b.tol;
  if (o.max_iters < 1) throw InvalidConfig("--max-iters must be >= 1");
  if (!(o.tol > 0.0)) throw InvalidConfig("--tol must be > 0");
  return o;
}

int cmd_gen(const Flags& f, const Logger& log, std::ostream& out) {
  DatasetSpec spec;
  spec.base.base_connectivity = f.gen.connectivity;
  spec.base.long_edge_prob = f.gen.long_edge_prob;
  spec.base.noise_sigma_deg = f.gen.sigma;
  spec.base.outlier_fraction = f.gen.outliers;
  spec.base.walk_step_deg = f.gen.walk_step;
  spec.count = f.gen.count;
  spec.min_nodes = f.gen.nodes;
  spec.max_nodes = f.gen.max_nodes > 0 ? f.gen.max_nodes : f.gen.nodes;
  spec.seed = f.global.seed;
  spec.out_dir = f.gen.out_dir;
  spec.prefix = f.gen.prefix;
  spec.threads = f.global.threads;
  if (spec.max_nodes < spec.min_nodes) throw InvalidConfig("--max-nodes is below --nodes");
  const auto paths = generate_dataset(spec);
  log.info("wrote " + std::to_string(paths.size()) + " graphs to " + spec.out_dir);
  for (const auto& p : paths) out << p << '\n';
  return kExitOk;
}

int cmd_init(const Flags& f, const Logger& log, std::ostream& out) {
  const ViewGraph g = read_graph(f.init.graph);
  write_estimates(spt_initialize(g), f.init.out);
  log.info("root " + std::to_string(shortest_path_tree(g).root));
  out << f.init.out << '\n';
  return kExitOk;
}

int cmd_train(const Flags& f, const Logger& log, std::ostream& out) {
  const auto train_set = read_graph_dir(f.train.data);
  if (train_set.empty()) throw EmptyDataset("no .vg files in " + f.train.data);
  std::vector<ViewGraph> val_set;
  if (!f.train.val.empty()) val_set = read_graph_dir(f.train.val);
  log.info("training on " + std::to_string(train_set.size()) + " graphs, validating on " +
           std::to_string(val_set.size()));

  TrainConfig cfg;
  cfg.model.t_max = f.train.t_max;
  cfg.model.inference_iterations = f.train.infer_iterations;
  cfg.model.beta = f.train.beta;
  cfg.model.message_dim = f.train.message_dim;
  cfg.epochs = f.train.epochs;
  cfg.learning_rate = f.train.lr;
  cfg.min_learning_rate = f.train.min_lr;
  cfg.aggregation = aggregation_from_string(f.train.aggregation);
  cfg.seed = f.global.seed;
  cfg.threads = f.global.threads;
  cfg.keep_optimizer_state = f.train.keep_optimizer;
  cfg.log = [&](const std::string& line) { log.info(line); };

  const TrainResult result = train(train_set, val_set, cfg);
  save_checkpoint(f.train.out, result.best, &cfg, &result);
  if (!f.train.log.empty()) write_train_log(result.history, f.train.log);
  log.info("best epoch " + std::to_string(result.best_epoch));
  out << f.train.out << '\n';
  return kExitOk;
}

int cmd_infer(const Flags& f, const Logger& log, std::ostream& out) {
  const MraModel model = load_checkpoint(f.infer.checkpoint);
  const ViewGraph g = read_graph(f.infer.graph);
  InferOptions opts;
  if (f.infer.iterations >= 0) opts.iterations = f.infer.iterations;
  const auto init = initial_values(g, f.infer.init);
  const auto start = std::chrono::steady_clock::now();
  const auto pred = infer_from(g, init, model, opts);
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_estimates(pred, f.infer.out);
  log.debug("inference " + std::to_string(seconds) + " s");
  out << f.infer.out << '\n';
  return kExitOk;
}

int cmd_baseline(const Flags& f, const Logger& log, std::ostream& out) {
  const ViewGraph g = read_graph(f.baseline.graph);
  const auto init = initial_values(g, f.baseline.init);
  const SolverOptions opts = solver_options(f.baseline);
  SolverResult r;
  if (f.baseline.solver == "weiszfeld") {
    r = weiszfeld_l1(g, init, opts);
  } else {
    std::vector<CostKind> schedule;
    for (const auto& s : f.baseline.schedule) schedule.push_back(cost_from_string(s));
    r = irls_average(g, init, schedule, opts);
  }
  write_estimates(r.rotations, f.baseline.out);
  log.info(f.baseline.solver + ": " + std::to_string(r.sweeps) + " sweeps, " +
           (r.converged ? "converged" : "not converged"));
  out << f.baseline.out << '\n';
  return kExitOk;
}

int cmd_eval(const Flags& f, const Logger& log, std::ostream& out) {
  const ViewGraph g = read_graph(f.eval.graph);
  const auto est = read_estimates(f.eval.est, g.node_count());
  const MetricsReport r = metrics(est, g.ground_truth(), 0.0, g.edge_count());
  {
    std::ofstream csv(f.eval.out);
    if (!csv) throw IoError("cannot write " + f.eval.out);
    csv << kMetricsCsvHeader << '\n'
        << metrics_csv_row(r, std::filesystem::path(f.eval.graph).filename().string(),
                           f.eval.label)
        << '\n';
  }
  if (!f.eval.degree_out.empty()) {
    std::ofstream csv(f.eval.degree_out);
    if (!csv) throw IoError("cannot write " + f.eval.degree_out);
    csv << kDegreeErrorCsvHeader << '\n';
    write_degree_error_csv(degree_error_table(g, est), f.eval.label, csv);
  }
  log.info("mean & med & RMS & %>10 & %>30: " + summary_table_row(r));
  out << f.eval.out << '\n';
  return kExitOk;
}

int cmd_bench(const Flags& f, const Logger& log, std::ostream& out) {
  std::vector<BenchSolver> solvers;
  std::optional<MraModel> model;
  for (const auto& name : f.bench.solvers) {
    if (name == "weiszfeld") {
      solvers.push_back({name, [](const ViewGraph& g, std::span<const Quat> init) {
                           return weiszfeld_l1(g, init).rotations;
                         }});
    } else if (name == "irls") {
      solvers.push_back({name, [](const ViewGraph& g, std::span<const Quat> init) {
                           return irls_average(g, init).rotations;
                         }});
    } else {
      if (f.bench.checkpoint.empty()) throw InvalidConfig("network solver needs --checkpoint");
      model = load_checkpoint(f.bench.checkpoint);
      solvers.push_back({name, [&model](const ViewGraph& g, std::span<const Quat> init) {
                           return infer_from(g, init, *model);
                         }});
    }
  }
  SynthConfig base;
  base.base_connectivity = f.bench.connectivity;
  base.long_edge_prob = f.bench.long_edge_prob;
  base.noise_sigma_deg = f.bench.sigma;
  base.outlier_fraction = f.bench.outliers;
  base.seed = f.global.seed;
  const auto rows = bench(solvers, f.bench.sizes, f.bench.repeats, base);
  std::ofstream csv(f.bench.out);
  if (!csv) throw IoError("cannot write " + f.bench.out);
  csv << kBenchCsvHeader << '\n';
  write_bench_csv(rows, csv);
  for (const auto& row : rows) {
    log.info(row.solver + " n=" + std::to_string(row.n_nodes) + " " +
             std::to_string(row.median_seconds) + " s");
  }
  out << f.bench.out << '\n';
  return kExitOk;
}

const char* kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::Usage: return "usage";
    case ErrorKind::Data: return "data";
    case ErrorKind::Numerical: return "numerical";
  }
  return "data";
}

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::Usage: return kExitUsage;
    case ErrorKind::Data: return kExitData;
    case ErrorKind::Numerical: return kExitNumerical;
  }
  return kExitData;
}

/// `error kind=<kind> code=<code> message="<text>"` on one line.
void report(std::ostream& err, const std::string& kind, const std::string& code,
            std::string message) {
  std::replace(message.begin(), message.end(), '\n', ' ');
  std::replace(message.begin(), message.end(), '"', '\'');
  err << "error kind=" << kind << " code=" << code << " message=\"" << message << "\"\n";
}

}  // namespace

std::string help_text() {
  CLI::App app{"Rotation averaging on view-graphs", "rotavg"};
  Flags f;
  build(app, f);
  std::string text = app.help();
  for (const auto* sub : app.get_subcommands({})) text += "\n" + sub->help();
  return text;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Rotation averaging on view-graphs", "rotavg"};
  Flags f;
  build(app, f);
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << help_text();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    report(err, "usage", "ParseError", e.what());
    return kExitUsage;
  }

  Logger log(err);
  if (f.global.verbose) log.raise_to(Level::Debug);
  const CLI::App* sub = app.get_subcommands().front();
  const std::string name = sub->get_name();
  std::istringstream resolved(app.config_to_str(true, false));
  for (std::string line; std::getline(resolved, line);) {
    const auto eq = line.find('=');
    const auto dot = line.find('.');
    const bool global = dot == std::string::npos || dot > eq;
    if (!line.empty() && (global || line.starts_with(name + "."))) log.info("config " + line);
  }

  try {
    if (name == "gen") return cmd_gen(f, log, out);
    if (name == "init") return cmd_init(f, log, out);
    if (name == "train") return cmd_train(f, log, out);
    if (name == "infer") return cmd_infer(f, log, out);
    if (name == "baseline") return cmd_baseline(f, log, out);
    if (name == "eval") return cmd_eval(f, log, out);
    if (name == "bench") return cmd_bench(f, log, out);
  } catch (const Error& e) {
    report(err, kind_name(e.kind()), e.code(), e.what());
    return exit_code(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    report(err, "data", "IoError", e.what());
    return kExitData;
  } catch (const std::exception& e) {
    report(err, "data", "Unexpected", e.what());
    return kExitData;
  }
  report(err, "usage", "UnknownSubcommand", name);
  return kExitUsage;
}

}  // namespace rotavg::cli
