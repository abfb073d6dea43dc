#pragma once

// Small reverse-mode autodiff engine over dense row-major matrices.
//
// Every tape node holds a full matrix value; rows are batch items (edges or
// nodes) and columns are features. Values are always computed, so a
// non-recording tape yields exactly the same numbers as a recording one; only
// the backward closures are skipped.

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "rotavg/errors.hpp"

namespace rotavg::nn {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Col = Eigen::VectorXd;

struct Var {
  int id = -1;
};

class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }

  Var constant(Mat value);
  /// Leaf whose gradient is added into `grad_sink` by backward().
  Var parameter(const Mat& value, Mat* grad_sink);

  const Mat& value(Var v) const;
  int rows(Var v) const { return static_cast<int>(value(v).rows()); }
  int cols(Var v) const { return static_cast<int>(value(v).cols()); }
  bool needs_grad(Var v) const { return nodes_.at(v.id).needs_grad; }

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded closure in reverse.
  /// `loss` must be 1x1.
  void backward(Var loss);

  /// Gradient buffer of `v` after backward(); zero-sized if none flowed.
  const Mat& grad(Var v) const { return nodes_.at(v.id).grad; }

  std::size_t size() const { return nodes_.size(); }

  // --- op construction API ---
  using Backward = std::function<void(Tape&, const Mat& out_grad)>;
  /// Appends a node; `inputs` decide whether the closure is kept.
  Var push(Mat value, std::initializer_list<Var> inputs, Backward back);
  /// Adds `g` into the gradient buffer of `v` (no-op for constants).
  void accumulate(Var v, const Mat& g);
  template <typename F>
  void accumulate_with(Var v, F&& fill) {
    if (!nodes_[v.id].needs_grad) return;
    Mat& g = ensure_grad(v);
    fill(g);
  }

 private:
  struct Node {
    Mat value;
    Mat grad;
    Backward back;
    Mat* sink = nullptr;
    bool needs_grad = false;
  };
  Mat& ensure_grad(Var v);

  bool recording_;
  std::vector<Node> nodes_;
};

// --- elementwise and structural ops ----------------------------------------

Var add(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double s);
Var leaky_relu(Tape& t, Var x, double slope = 0.01);
/// x W^T + b, with x: N x in, W: out x in, b: 1 x out.
Var linear(Tape& t, Var x, Var weight, Var bias);
Var concat_cols(Tape& t, std::initializer_list<Var> parts);
Var gather_rows(Tape& t, Var x, std::span<const int> index);
/// out[s] = sum of rows x[i] with segment[i] == s.
Var segment_sum(Tape& t, Var x, std::span<const int> segment, int segments);
/// Softmax of an N x 1 logit column within each segment, max-subtracted.
Var segment_softmax(Tape& t, Var logits, std::span<const int> segment, int segments);
/// Row i of x scaled by w(i, 0).
Var scale_rows(Tape& t, Var x, Var w);
/// sum_i x(i, 0) * weights[i]; the weights are constants.
Var weighted_sum(Tape& t, Var x, std::span<const double> weights);
/// Mean of several 1x1 scalars.
Var mean_scalars(Tape& t, std::span<const Var> xs);

// --- quaternion rows (w, x, y, z) ------------------------------------------

Var quat_mul(Tape& t, Var a, Var b);
Var quat_conj(Tape& t, Var a);
/// Flips rows into the canonical hemisphere (w >= 0, ties on first nonzero).
Var quat_canonical(Tape& t, Var a);
/// Row normalization; throws DegenerateQuaternion when a row norm <= eps.
/// Gradient is the normalization Jacobian (I - q q^T) / |raw|.
Var quat_normalize(Tape& t, Var raw, double eps = 1e-12);
/// Per-row min(|a - b|, |a + b|); the minus branch wins ties.
Var quat_distance(Tape& t, Var a, Var b);

/// Plain softmax with max subtraction; throws EmptySet on empty input.
std::vector<double> softmax(std::span<const double> logits);

// --- multi-layer perceptrons -------------------------------------------------

enum class Activation { Linear, LeakyRelu };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

struct Layer {
  Mat weight;  // out x in
  Mat bias;    // 1 x out
  Activation activation = Activation::Linear;
};

struct Mlp {
  std::vector<Layer> layers;

  int in_dim() const;
  int out_dim() const;
  std::size_t parameter_count() const;
};

/// Hidden layers leaky-ReLU, output linear. Kaiming-uniform fan-in init with
/// bias zero.
Mlp make_mlp(std::span<const int> dims, std::mt19937_64& rng);
/// Same shapes, all values zero.
Mlp zeros_like(const Mlp& m);
void check_finite(const Mlp& m, const char* what);

/// Tape leaves for one Mlp's parameters.
struct MlpVars {
  std::vector<Var> weight;
  std::vector<Var> bias;
  const Mlp* model = nullptr;
};

/// Registers every weight and bias as a parameter leaf. When `grads` is given
/// (same shape as `m`) backward() accumulates into it.
MlpVars bind(Tape& t, const Mlp& m, Mlp* grads);

/// Throws ShapeMismatch if the input width does not match.
Var mlp_forward(Tape& t, const MlpVars& vars, Var input);
Mat mlp_forward(const Mlp& m, const Mat& input);

// --- optimizer ---------------------------------------------------------------

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  Mlp m;
  Mlp v;
  std::int64_t step = 0;
};

AdamState make_adam_state(const Mlp& params);
/// One bias-corrected Adam update of `params` in place.
void adam_step(Mlp& params, const Mlp& grads, AdamState& state, double lr,
               const AdamConfig& cfg = {});

// --- serialization -----------------------------------------------------------

nlohmann::ordered_json to_json(const Mlp& m);
Mlp mlp_from_json(const nlohmann::ordered_json& j);

}  // namespace rotavg::nn
