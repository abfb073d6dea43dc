#include "rotavg/attention_mra.hpp"

#include "parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <thread>

namespace rotavg {

using nn::Mat;
using nn::Tape;
using nn::Var;

// --- model ---------------------------------------------------------------------

namespace {

std::vector<int> dims_of(const nn::Mlp& m) {
  std::vector<int> d;
  if (m.layers.empty()) return d;
  d.push_back(m.in_dim());
  for (const auto& l : m.layers) d.push_back(static_cast<int>(l.weight.rows()));
  return d;
}

std::vector<int> chain(int in, const std::vector<int>& hidden, int out) {
  std::vector<int> d{in};
  d.insert(d.end(), hidden.begin(), hidden.end());
  d.push_back(out);
  return d;
}

}  // namespace

void MraModel::validate() const {
  if (message.in_dim() != 12) throw InvalidConfig("f_m must take 12 inputs");
  if (attention.in_dim() != 5 || attention.out_dim() != 1) {
    throw InvalidConfig("f_a must map 5 inputs to 1 logit");
  }
  if (readout.in_dim() != message.out_dim() || readout.out_dim() != 4) {
    throw InvalidConfig("f_ro must map the message width to 4");
  }
  if (t_max < 1) throw InvalidConfig("t_max must be >= 1");
  if (!(beta >= 0.0)) throw InvalidConfig("beta must be >= 0");
  if (inference_iterations < 0) throw InvalidConfig("inference_iterations must be >= 0");
}

std::size_t MraModel::parameter_count() const {
  return message.parameter_count() + attention.parameter_count() + readout.parameter_count();
}

MraModel make_model(const ModelConfig& cfg, std::uint64_t seed) {
  if (cfg.message_dim < 1) throw InvalidConfig("message_dim must be >= 1");
  std::mt19937_64 rng(seed);
  MraModel m;
  m.message = nn::make_mlp(chain(12, cfg.message_hidden, cfg.message_dim), rng);
  m.attention = nn::make_mlp(chain(5, cfg.attention_hidden, 1), rng);
  m.readout = nn::make_mlp(chain(cfg.message_dim, cfg.readout_hidden, 4), rng);
  nn::Layer& last = m.readout.layers.back();
  last.weight.setZero();
  last.bias << 1.0, 0.0, 0.0, 0.0;
  m.t_max = cfg.t_max;
  m.beta = cfg.beta;
  m.inference_iterations = cfg.inference_iterations;
  m.validate();
  return m;
}

// --- graph tensors -------------------------------------------------------------

Mat to_rows(std::span<const Quat> qs) {
  Mat m(static_cast<Eigen::Index>(qs.size()), 4);
  for (std::size_t i = 0; i < qs.size(); ++i) m.row(i) = qs[i].coeffs().transpose();
  return m;
}

std::vector<Quat> from_rows(const Mat& m) {
  std::vector<Quat> out;
  out.reserve(m.rows());
  for (Eigen::Index i = 0; i < m.rows(); ++i) out.push_back(Quat::normalize(m.row(i).transpose()));
  return out;
}

GraphTensors make_tensors(const ViewGraph& g) {
  GraphTensors t;
  t.node_count = g.node_count();
  const auto& de = g.directed_edges();
  const auto n_uv = relative_neighborhood_sizes(g);
  t.rel.resize(static_cast<Eigen::Index>(de.size()), 4);
  t.neighborhood.resize(static_cast<Eigen::Index>(de.size()), 1);
  const double inv_nodes = 1.0 / g.node_count();
  for (std::size_t d = 0; d < de.size(); ++d) {
    t.src.push_back(de[d].src);
    t.dst.push_back(de[d].dst);
    t.rel.row(d) = de[d].rel.coeffs().transpose();
    t.neighborhood(d, 0) = n_uv[d];
    t.relative_loss_weight.push_back(inv_nodes / g.degree(de[d].dst));
  }
  if (g.has_ground_truth()) {
    const auto& truth = g.ground_truth();
    t.truth = to_rows(truth);
    Mat rel(static_cast<Eigen::Index>(de.size()), 4);
    for (std::size_t d = 0; d < de.size(); ++d) {
      rel.row(d) = compose(truth[de[d].dst], inverse(truth[de[d].src])).coeffs().transpose();
    }
    t.truth_relative = std::move(rel);
  }
  return t;
}

ViewGraph truth_in_init_frame(const ViewGraph& g) {
  const auto& truth = g.ground_truth();
  const Quat gauge = inverse(truth[shortest_path_tree(g).root]);
  std::vector<Quat> moved;
  moved.reserve(truth.size());
  for (const Quat& q : truth) moved.push_back(compose(q, gauge));
  return ViewGraph(g.node_count(), g.edges(), std::move(moved));
}

// --- forward pass ----------------------------------------------------------------

BoundModel bind(Tape& t, const MraModel& model, MraModel* grads) {
  return BoundModel{nn::bind(t, model.message, grads ? &grads->message : nullptr),
                    nn::bind(t, model.attention, grads ? &grads->attention : nullptr),
                    nn::bind(t, model.readout, grads ? &grads->readout : nullptr)};
}

namespace {

Var discrepancies(Tape& t, const GraphTensors& g, Var rotations) {
  const Var rel = t.constant(g.rel);
  const Var r_dst = nn::gather_rows(t, rotations, g.dst);
  const Var r_src = nn::gather_rows(t, rotations, g.src);
  const Var e = nn::quat_mul(t, nn::quat_conj(t, r_dst), nn::quat_mul(t, rel, r_src));
  return nn::quat_canonical(t, e);
}

}  // namespace

IterationState initial_state(Tape& t, const GraphTensors& g, std::span<const Quat> init) {
  if (static_cast<int>(init.size()) != g.node_count) {
    throw MissingEstimate("initial values do not cover every node");
  }
  IterationState s;
  s.rotations = t.constant(to_rows(init));
  s.discrepancies = discrepancies(t, g, s.rotations);
  return s;
}

IterationState forward_iteration(Tape& t, const GraphTensors& g, const IterationState& prev,
                                 const BoundModel& model) {
  const Var r_dst = nn::gather_rows(t, prev.rotations, g.dst);
  const Var r_src = nn::gather_rows(t, prev.rotations, g.src);
  const Var messages = nn::mlp_forward(
      t, model.message, nn::concat_cols(t, {r_dst, r_src, prev.discrepancies}));

  const Var logits = nn::mlp_forward(
      t, model.attention, nn::concat_cols(t, {t.constant(g.neighborhood), prev.discrepancies}));
  IterationState next;
  next.weights = nn::segment_softmax(t, logits, g.dst, g.node_count);

  const Var aggregated =
      nn::segment_sum(t, nn::scale_rows(t, messages, next.weights), g.dst, g.node_count);
  const Var correction = nn::quat_normalize(t, nn::mlp_forward(t, model.readout, aggregated));
  next.rotations = nn::quat_canonical(t, nn::quat_mul(t, prev.rotations, correction));
  next.discrepancies = discrepancies(t, g, next.rotations);
  return next;
}

Var compute_loss(Tape& t, const GraphTensors& g, Var rotations, double beta) {
  if (!g.truth || !g.truth_relative) {
    throw MissingGroundTruth("loss needs ground-truth rotations");
  }
  const Var r_dst = nn::gather_rows(t, rotations, g.dst);
  const Var r_src = nn::gather_rows(t, rotations, g.src);
  const Var predicted_rel = nn::quat_mul(t, r_dst, nn::quat_conj(t, r_src));
  const Var relative = nn::weighted_sum(
      t, nn::quat_distance(t, t.constant(*g.truth_relative), predicted_rel),
      g.relative_loss_weight);
  const std::vector<double> node_weight(g.node_count, beta / g.node_count);
  const Var absolute =
      nn::weighted_sum(t, nn::quat_distance(t, t.constant(*g.truth), rotations), node_weight);
  return nn::add(t, relative, absolute);
}

LossTerms loss_terms(const ViewGraph& g, std::span<const Quat> prediction) {
  const GraphTensors gt = make_tensors(g);
  Tape t(false);
  const Var r = t.constant(to_rows(prediction));
  LossTerms terms;
  terms.relative = t.value(compute_loss(t, gt, r, 0.0))(0, 0);
  terms.absolute = t.value(compute_loss(t, gt, r, 1.0))(0, 0) - terms.relative;
  return terms;
}

double compute_loss(const ViewGraph& g, std::span<const Quat> prediction, double beta) {
  if (!(beta >= 0.0)) throw InvalidConfig("beta must be >= 0");
  const GraphTensors gt = make_tensors(g);
  Tape t(false);
  return t.value(compute_loss(t, gt, t.constant(to_rows(prediction)), beta))(0, 0);
}

std::vector<Quat> infer_from(const ViewGraph& g, std::span<const Quat> init, const MraModel& model,
                             const InferOptions& opts) {
  const int iterations = opts.iterations.value_or(model.iterations());
  if (iterations < 0) throw InvalidConfig("iteration count must be >= 0");
  const GraphTensors gt = make_tensors(g);
  if (static_cast<int>(init.size()) != gt.node_count) {
    throw MissingEstimate("initial values do not cover every node");
  }
  nn::Mat rows = to_rows(init);
  for (int it = 1; it <= iterations; ++it) {
    Tape t(false);
    const BoundModel bound = bind(t, model, nullptr);
    IterationState s;
    s.rotations = t.constant(rows);
    s.discrepancies = discrepancies(t, gt, s.rotations);
    s = forward_iteration(t, gt, s, bound);
    if (opts.observer) opts.observer(it, t, s);
    rows = t.value(s.rotations);
  }
  return from_rows(rows);
}

std::vector<Quat> infer(const ViewGraph& g, const MraModel& model, const InferOptions& opts) {
  return infer_from(g, spt_initialize(g), model, opts);
}

// --- training ------------------------------------------------------------------

std::string to_string(LossAggregation a) {
  switch (a) {
    case LossAggregation::Mean: return "mean";
    case LossAggregation::Sum: return "sum";
    case LossAggregation::Last: return "last";
  }
  return "mean";
}

LossAggregation aggregation_from_string(const std::string& s) {
  if (s == "mean") return LossAggregation::Mean;
  if (s == "sum") return LossAggregation::Sum;
  if (s == "last") return LossAggregation::Last;
  throw InvalidConfig("unknown loss aggregation '" + s + "'");
}

Var graph_loss(Tape& t, const GraphTensors& g, std::span<const Quat> init, const BoundModel& model,
               int t_max, double beta, LossAggregation agg) {
  if (t_max < 1) throw InvalidConfig("t_max must be >= 1");
  IterationState s = initial_state(t, g, init);
  std::vector<Var> per_iteration;
  for (int it = 1; it <= t_max; ++it) {
    s = forward_iteration(t, g, s, model);
    per_iteration.push_back(compute_loss(t, g, s.rotations, beta));
  }
  switch (agg) {
    case LossAggregation::Mean: return nn::mean_scalars(t, per_iteration);
    case LossAggregation::Sum:
      return nn::scale(t, nn::mean_scalars(t, per_iteration), static_cast<double>(t_max));
    case LossAggregation::Last: return per_iteration.back();
  }
  return per_iteration.back();
}

double loss_and_gradient(const ViewGraph& g, const MraModel& model, LossAggregation agg,
                         MraModel* grads) {
  const GraphTensors gt = make_tensors(truth_in_init_frame(g));
  const auto init = spt_initialize(g);
  Tape t(grads != nullptr);
  const BoundModel bound = bind(t, model, grads);
  const Var loss = graph_loss(t, gt, init, bound, model.t_max, model.beta, agg);
  if (grads) t.backward(loss);
  return t.value(loss)(0, 0);
}

ErrorSummary evaluate(const std::vector<ViewGraph>& graphs, const MraModel& model, int threads) {
  std::vector<std::vector<double>> errors(graphs.size());
  detail::parallel_for(static_cast<int>(graphs.size()), threads, [&](int i) {
    errors[i] = metrics(infer(graphs[i], model), graphs[i].ground_truth()).errors_deg;
  });
  std::vector<double> pooled;
  for (const auto& e : errors) pooled.insert(pooled.end(), e.begin(), e.end());
  return summarize(pooled);
}

TrainResult train(const std::vector<ViewGraph>& train_set, const std::vector<ViewGraph>& val_set,
                  const TrainConfig& cfg) {
  if (train_set.empty()) throw EmptyDataset("no training graphs");
  if (cfg.epochs < 1) throw InvalidConfig("epochs must be >= 1");
  for (const auto& g : train_set) {
    if (!g.has_ground_truth()) throw MissingGroundTruth("training graph without ground truth");
  }
  for (const auto& g : val_set) {
    if (!g.has_ground_truth()) throw MissingGroundTruth("validation graph without ground truth");
  }

  std::vector<GraphTensors> tensors;
  std::vector<std::vector<Quat>> inits;
  for (const auto& g : train_set) {
    tensors.push_back(make_tensors(truth_in_init_frame(g)));
    inits.push_back(spt_initialize(g));
  }

  MraModel model = make_model(cfg.model, cfg.seed);
  nn::AdamState adam[3] = {nn::make_adam_state(model.message),
                           nn::make_adam_state(model.attention),
                           nn::make_adam_state(model.readout)};
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainResult result;
  result.best = model;
  double best_score = std::numeric_limits<double>::infinity();

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double progress = cfg.epochs > 1 ? static_cast<double>(epoch) / (cfg.epochs - 1) : 0.0;
    const double lr = cfg.min_learning_rate + 0.5 * (cfg.learning_rate - cfg.min_learning_rate) *
                                                  (1.0 + std::cos(std::numbers::pi * progress));
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t idx : order) {
      MraModel grads{nn::zeros_like(model.message), nn::zeros_like(model.attention),
                     nn::zeros_like(model.readout), model.t_max, model.beta};
      Tape t(true);
      const BoundModel bound = bind(t, model, &grads);
      const Var loss =
          graph_loss(t, tensors[idx], inits[idx], bound, model.t_max, model.beta, cfg.aggregation);
      const double value = t.value(loss)(0, 0);
      if (!std::isfinite(value)) {
        throw Divergence("training loss became non-finite at epoch " + std::to_string(epoch + 1));
      }
      t.backward(loss);
      nn::adam_step(model.message, grads.message, adam[0], lr);
      nn::adam_step(model.attention, grads.attention, adam[1], lr);
      nn::adam_step(model.readout, grads.readout, adam[2], lr);
      nn::check_finite(model.message, "f_m");
      nn::check_finite(model.attention, "f_a");
      nn::check_finite(model.readout, "f_ro");
      loss_sum += value;
    }

    EpochLog entry;
    entry.epoch = epoch + 1;
    entry.train_loss = loss_sum / static_cast<double>(order.size());
    double score = entry.train_loss;
    if (!val_set.empty()) {
      entry.validation = evaluate(val_set, model, cfg.threads);
      score = entry.validation.median;
    }
    result.history.push_back(entry);
    if (score < best_score) {
      best_score = score;
      result.best = model;
      result.best_epoch = entry.epoch;
    }
    if (cfg.log) {
      std::ostringstream line;
      line << "epoch " << entry.epoch << " lr " << lr << " train_loss " << entry.train_loss;
      if (!val_set.empty()) {
        line << " val_median " << entry.validation.median << " val_mean " << entry.validation.mean
             << " val_gt30 " << entry.validation.pct_above[2];
      }
      cfg.log(line.str());
    }
  }
  if (cfg.keep_optimizer_state) {
    for (int k = 0; k < 3; ++k) result.optimizer[k] = adam[k];
  }
  return result;
}

void write_train_log(const std::vector<EpochLog>& history, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write training log " + path);
  out << kTrainLogHeader << '\n';
  char buf[256];
  for (const EpochLog& e : history) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.3f,%.3f,%.3f,%.3f,%.3f", e.epoch, e.train_loss,
                  e.validation.mean, e.validation.median, e.validation.rms,
                  e.validation.pct_above[0], e.validation.pct_above[2]);
    out << buf << '\n';
  }
}

// --- checkpoint ----------------------------------------------------------------

nlohmann::ordered_json checkpoint_json(const MraModel& model, const TrainConfig* cfg,
                                       const TrainResult* result) {
  nlohmann::ordered_json j;
  j["format_version"] = kCheckpointFormatVersion;
  j["architecture"] = {
      {"message_dim", model.message.out_dim()},
      {"f_m", dims_of(model.message)},
      {"f_a", dims_of(model.attention)},
      {"f_ro", dims_of(model.readout)},
      {"hidden_activation", "leaky_relu"},
      {"output_activation", "linear"},
      {"readout_normalization", "unit_quaternion"},
  };
  j["t_max"] = model.t_max;
  j["beta"] = model.beta;
  j["inference_iterations"] = model.inference_iterations;
  j["f_m"] = nn::to_json(model.message);
  j["f_a"] = nn::to_json(model.attention);
  j["f_ro"] = nn::to_json(model.readout);
  if (cfg) {
    j["seed"] = cfg->seed;
    j["training"] = {
        {"epochs", cfg->epochs},
        {"learning_rate", cfg->learning_rate},
        {"min_learning_rate", cfg->min_learning_rate},
        {"schedule", "cosine"},
        {"optimizer", "adam"},
        {"loss_aggregation", to_string(cfg->aggregation)},
    };
  }
  if (result) {
    j["best_epoch"] = result->best_epoch;
    if (result->optimizer[0]) {
      auto opt = nlohmann::ordered_json::object();
      const char* names[3] = {"f_m", "f_a", "f_ro"};
      for (int k = 0; k < 3; ++k) {
        const auto& st = *result->optimizer[k];
        opt[names[k]] = {{"step", st.step}, {"m", nn::to_json(st.m)}, {"v", nn::to_json(st.v)}};
      }
      j["optimizer"] = std::move(opt);
    }
  }
  return j;
}

MraModel model_from_checkpoint(const nlohmann::ordered_json& j) {
  MraModel m;
  try {
    const int version = j.at("format_version").get<int>();
    if (version != kCheckpointFormatVersion) {
      throw CheckpointError("checkpoint format_version " + std::to_string(version) +
                            " does not match supported version " +
                            std::to_string(kCheckpointFormatVersion));
    }
    m.message = nn::mlp_from_json(j.at("f_m"));
    m.attention = nn::mlp_from_json(j.at("f_a"));
    m.readout = nn::mlp_from_json(j.at("f_ro"));
    m.t_max = j.at("t_max").get<int>();
    m.beta = j.at("beta").get<double>();
    m.inference_iterations = j.at("inference_iterations").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint: ") + e.what());
  }
  try {
    m.validate();
  } catch (const InvalidConfig& e) {
    throw CheckpointError(std::string("inconsistent checkpoint: ") + e.what());
  }
  return m;
}

void save_checkpoint(const std::string& path, const MraModel& model, const TrainConfig* cfg,
                     const TrainResult* result) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write checkpoint " + path);
  out << checkpoint_json(model, cfg, result).dump(1) << '\n';
}

MraModel load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint " + path);
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  return model_from_checkpoint(j);
}

}  // namespace rotavg
