#pragma once

// Attention-weighted message passing for rotation averaging.
//
// Each iteration, for every node v and incoming neighbor u:
//   m_uv  = f_m(R_v, R_u, e_uv)             message
//   w_uv  = softmax_u f_a(n_uv, e_uv)       attention over N_v
//   M_v   = sum_u w_uv m_uv
//   R_v  <- R_v * normalize(f_ro(M_v))      multiplicative readout
// followed by e_uv = R_v^-1 R_uv R_u on the new values. Updates are
// synchronous: iteration t reads only iteration t-1 values.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "rotavg/diffnet.hpp"
#include "rotavg/eval_align.hpp"
#include "rotavg/viewgraph.hpp"

namespace rotavg {

inline constexpr int kCheckpointFormatVersion = 2;

struct ModelConfig {
  int message_dim = 32;
  std::vector<int> message_hidden{64, 64};
  std::vector<int> attention_hidden{32};
  std::vector<int> readout_hidden{64};
  int t_max = 4;
  double beta = 0.25;
  int inference_iterations = 0;  // 0 means t_max
};

struct MraModel {
  nn::Mlp message;    // f_m: 12 -> ... -> message_dim
  nn::Mlp attention;  // f_a: 5 -> ... -> 1
  nn::Mlp readout;    // f_ro: message_dim -> ... -> 4, then normalized
  int t_max = 4;
  double beta = 0.25;
  int inference_iterations = 0;  // 0 means t_max

  /// Iterations run at inference and validation.
  int iterations() const { return inference_iterations > 0 ? inference_iterations : t_max; }
  /// Throws InvalidConfig unless dims chain, t_max >= 1, beta >= 0 and
  /// inference_iterations >= 0.
  void validate() const;
  std::size_t parameter_count() const;
};

/// Seeded Kaiming init. The readout's last layer starts at zero weight with
/// bias (1, 0, 0, 0), so an untrained model applies exact identity corrections.
MraModel make_model(const ModelConfig& cfg, std::uint64_t seed);

/// Constant per-graph arrays feeding the batched network.
struct GraphTensors {
  int node_count = 0;
  std::vector<int> src;     // per directed edge
  std::vector<int> dst;
  nn::Mat rel;              // D x 4, R_uv per directed edge
  nn::Mat neighborhood;     // D x 1, n_uv
  std::vector<double> relative_loss_weight;  // D, 1 / (|V| |N_dst|)
  std::optional<nn::Mat> truth;           // N x 4
  std::optional<nn::Mat> truth_relative;  // D x 4, truth_dst truth_src^-1
};

GraphTensors make_tensors(const ViewGraph& g);

/// Copy of `g` whose ground truth is right-composed so the SPT root's truth is
/// the identity, i.e. expressed in the frame SPT initialization produces.
/// Relative rotations are unchanged.
ViewGraph truth_in_init_frame(const ViewGraph& g);

nn::Mat to_rows(std::span<const Quat> qs);
std::vector<Quat> from_rows(const nn::Mat& m);

struct IterationState {
  nn::Var rotations;      // N x 4
  nn::Var discrepancies;  // D x 4
  nn::Var weights;        // D x 1, empty before the first iteration
};

struct BoundModel {
  nn::MlpVars message, attention, readout;
};

/// Gradients accumulate into `grads` when given.
BoundModel bind(nn::Tape& t, const MraModel& model, MraModel* grads);

/// Initial state from node values: e_uv = R_v^-1 R_uv R_u.
IterationState initial_state(nn::Tape& t, const GraphTensors& g, std::span<const Quat> init);

IterationState forward_iteration(nn::Tape& t, const GraphTensors& g, const IterationState& prev,
                                 const BoundModel& model);

/// (1/|V|) sum_v [ (1/|N_v|) sum_u dQ(T_v T_u^-1, R_v R_u^-1) + beta dQ(T_v, R_v) ].
/// The relative term compares the quantity each edge observes, so it is
/// unchanged when predictions are right-composed by a common rotation.
nn::Var compute_loss(nn::Tape& t, const GraphTensors& g, nn::Var rotations, double beta);

/// Value-level loss for node predictions against the graph's ground truth.
double compute_loss(const ViewGraph& g, std::span<const Quat> prediction, double beta);

/// Per-term breakdown of the loss, both already averaged like the total.
struct LossTerms {
  double relative = 0;
  double absolute = 0;
};
LossTerms loss_terms(const ViewGraph& g, std::span<const Quat> prediction);

struct InferOptions {
  /// Overrides model.iterations(); 0 is allowed here and returns the init.
  std::optional<int> iterations;
  /// Called with every iteration's values (t = 1..T).
  std::function<void(int t, const nn::Tape&, const IterationState&)> observer;
};

/// SPT init followed by model.iterations() untaped iterations.
std::vector<Quat> infer(const ViewGraph& g, const MraModel& model, const InferOptions& opts = {});
/// Same, starting from given node values.
std::vector<Quat> infer_from(const ViewGraph& g, std::span<const Quat> init,
                             const MraModel& model, const InferOptions& opts = {});

enum class LossAggregation { Mean, Sum, Last };
std::string to_string(LossAggregation a);
LossAggregation aggregation_from_string(const std::string& s);

/// Overall training loss of one graph for the given model, recorded on `t`.
nn::Var graph_loss(nn::Tape& t, const GraphTensors& g, std::span<const Quat> init,
                   const BoundModel& model, int t_max, double beta, LossAggregation agg);

/// Training loss of one graph (targets in the SPT frame) and its gradient for
/// every parameter of `model`.
double loss_and_gradient(const ViewGraph& g, const MraModel& model, LossAggregation agg,
                         MraModel* grads);

struct TrainConfig {
  ModelConfig model;
  int epochs = 30;
  double learning_rate = 1e-3;
  double min_learning_rate = 1e-5;  // cosine floor
  LossAggregation aggregation = LossAggregation::Mean;
  std::uint64_t seed = 0;
  int threads = 1;  // validation only
  bool keep_optimizer_state = false;
  std::function<void(const std::string&)> log;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0;
  ErrorSummary validation;
};

inline constexpr const char* kTrainLogHeader =
    "epoch,train_loss,val_mean,val_median,val_rms,val_gt10,val_gt30";

struct TrainResult {
  MraModel best;
  int best_epoch = 0;
  std::vector<EpochLog> history;
  std::optional<nn::AdamState> optimizer[3];
};

/// One Adam step per graph, epochs shuffled by the seeded RNG, cosine-decayed
/// learning rate. Keeps the model with the lowest pooled validation median
/// (training loss when no validation set is given).
TrainResult train(const std::vector<ViewGraph>& train_set, const std::vector<ViewGraph>& val_set,
                  const TrainConfig& cfg);

/// Pooled aligned errors of a model over a set of graphs.
ErrorSummary evaluate(const std::vector<ViewGraph>& graphs, const MraModel& model, int threads = 1);

void write_train_log(const std::vector<EpochLog>& history, const std::string& path);

// --- checkpoint ---------------------------------------------------------------

nlohmann::ordered_json checkpoint_json(const MraModel& model, const TrainConfig* cfg = nullptr,
                                       const TrainResult* result = nullptr);
MraModel model_from_checkpoint(const nlohmann::ordered_json& j);
void save_checkpoint(const std::string& path, const MraModel& model,
                     const TrainConfig* cfg = nullptr, const TrainResult* result = nullptr);
/// Throws CheckpointError on version mismatch or malformed content.
MraModel load_checkpoint(const std::string& path);

}  // namespace rotavg
