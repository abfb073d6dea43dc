#include "rotavg/diffnet.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace rotavg::nn {

namespace {

void require_shape(bool ok, const std::string& what) {
  if (!ok) throw ShapeMismatch(what);
}

std::vector<int> copy_index(std::span<const int> s) { return {s.begin(), s.end()}; }

}  // namespace

// --- tape --------------------------------------------------------------------

Var Tape::constant(Mat value) {
  nodes_.push_back(Node{std::move(value), {}, {}, nullptr, false});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::parameter(const Mat& value, Mat* grad_sink) {
  const bool track = recording_ && grad_sink != nullptr;
  if (grad_sink) {
    require_shape(grad_sink->rows() == value.rows() && grad_sink->cols() == value.cols(),
                  "gradient sink shape differs from parameter");
  }
  nodes_.push_back(Node{value, {}, {}, track ? grad_sink : nullptr, track});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

const Mat& Tape::value(Var v) const {
  if (v.id < 0 || v.id >= static_cast<int>(nodes_.size())) {
    throw TapeCorrupt("variable " + std::to_string(v.id) + " is not on this tape");
  }
  return nodes_[v.id].value;
}

Var Tape::push(Mat value, std::initializer_list<Var> inputs, Backward back) {
  bool needs = false;
  if (recording_) {
    for (Var in : inputs) needs = needs || nodes_.at(in.id).needs_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(back) : Backward{}, nullptr,
                        needs});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Mat& Tape::ensure_grad(Var v) {
  Node& n = nodes_[v.id];
  if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::accumulate(Var v, const Mat& g) {
  if (!nodes_[v.id].needs_grad) return;
  ensure_grad(v) += g;
}

void Tape::backward(Var loss) {
  if (!recording_) throw TapeCorrupt("backward on a non-recording tape");
  const Mat& lv = value(loss);
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw TapeCorrupt("loss must be a 1x1 scalar");
  }
  if (!nodes_[loss.id].needs_grad) return;
  ensure_grad(loss).setConstant(1.0);
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.grad.size() == 0) continue;
    if (n.back) n.back(*this, n.grad);
    if (n.sink) *n.sink += n.grad;
  }
}

// --- elementwise and structural ops ----------------------------------------

Var add(Tape& t, Var a, Var b) {
  const Mat& av = t.value(a);
  const Mat& bv = t.value(b);
  require_shape(av.rows() == bv.rows() && av.cols() == bv.cols(), "add: shapes differ");
  return t.push(av + bv, {a, b}, [a, b](Tape& tp, const Mat& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, g);
  });
}

Var scale(Tape& t, Var a, double s) {
  return t.push(t.value(a) * s, {a},
                [a, s](Tape& tp, const Mat& g) { tp.accumulate(a, g * s); });
}

Var leaky_relu(Tape& t, Var x, double slope) {
  const Mat& xv = t.value(x);
  Mat out = xv.unaryExpr([slope](double v) { return v > 0.0 ? v : slope * v; });
  return t.push(std::move(out), {x}, [x, slope](Tape& tp, const Mat& g) {
    const Mat& xv = tp.value(x);
    tp.accumulate_with(x, [&](Mat& gx) {
      gx.array() += g.array() * xv.unaryExpr([slope](double v) { return v > 0.0 ? 1.0 : slope; }).array();
    });
  });
}

Var linear(Tape& t, Var x, Var weight, Var bias) {
  const Mat& xv = t.value(x);
  const Mat& wv = t.value(weight);
  const Mat& bv = t.value(bias);
  require_shape(xv.cols() == wv.cols(),
                "linear: input width " + std::to_string(xv.cols()) + " vs weight " +
                    std::to_string(wv.cols()));
  require_shape(bv.rows() == 1 && bv.cols() == wv.rows(), "linear: bias shape");
  Mat out = xv * wv.transpose();
  out.rowwise() += bv.row(0);
  return t.push(std::move(out), {x, weight, bias}, [x, weight, bias](Tape& tp, const Mat& g) {
    tp.accumulate_with(x, [&](Mat& gx) { gx.noalias() += g * tp.value(weight); });
    tp.accumulate_with(weight, [&](Mat& gw) { gw.noalias() += g.transpose() * tp.value(x); });
    tp.accumulate_with(bias, [&](Mat& gb) { gb.row(0) += g.colwise().sum(); });
  });
}

Var concat_cols(Tape& t, std::initializer_list<Var> parts) {
  std::vector<Var> ps(parts);
  const Eigen::Index rows = t.value(ps.front()).rows();
  Eigen::Index cols = 0;
  for (Var p : ps) {
    require_shape(t.value(p).rows() == rows, "concat_cols: row counts differ");
    cols += t.value(p).cols();
  }
  Mat out(rows, cols);
  Eigen::Index at = 0;
  for (Var p : ps) {
    const Mat& v = t.value(p);
    out.middleCols(at, v.cols()) = v;
    at += v.cols();
  }
  return t.push(std::move(out), parts, [ps](Tape& tp, const Mat& g) {
    Eigen::Index at = 0;
    for (Var p : ps) {
      const Eigen::Index c = tp.value(p).cols();
      tp.accumulate_with(p, [&](Mat& gp) { gp += g.middleCols(at, c); });
      at += c;
    }
  });
}

Var gather_rows(Tape& t, Var x, std::span<const int> index) {
  const Mat& xv = t.value(x);
  Mat out(static_cast<Eigen::Index>(index.size()), xv.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    require_shape(index[i] >= 0 && index[i] < xv.rows(), "gather_rows: index out of range");
    out.row(i) = xv.row(index[i]);
  }
  return t.push(std::move(out), {x}, [x, idx = copy_index(index)](Tape& tp, const Mat& g) {
    tp.accumulate_with(x, [&](Mat& gx) {
      for (std::size_t i = 0; i < idx.size(); ++i) gx.row(idx[i]) += g.row(i);
    });
  });
}

Var segment_sum(Tape& t, Var x, std::span<const int> segment, int segments) {
  const Mat& xv = t.value(x);
  require_shape(static_cast<Eigen::Index>(segment.size()) == xv.rows(),
                "segment_sum: segment ids must match rows");
  Mat out = Mat::Zero(segments, xv.cols());
  for (std::size_t i = 0; i < segment.size(); ++i) out.row(segment[i]) += xv.row(i);
  return t.push(std::move(out), {x}, [x, seg = copy_index(segment)](Tape& tp, const Mat& g) {
    tp.accumulate_with(x, [&](Mat& gx) {
      for (std::size_t i = 0; i < seg.size(); ++i) gx.row(i) += g.row(seg[i]);
    });
  });
}

Var segment_softmax(Tape& t, Var logits, std::span<const int> segment, int segments) {
  const Mat& lv = t.value(logits);
  require_shape(lv.cols() == 1, "segment_softmax: logits must be a column");
  require_shape(static_cast<Eigen::Index>(segment.size()) == lv.rows(),
                "segment_softmax: segment ids must match rows");
  Col peak = Col::Constant(segments, -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < segment.size(); ++i) {
    peak[segment[i]] = std::max(peak[segment[i]], lv(i, 0));
  }
  Mat out(lv.rows(), 1);
  Col total = Col::Zero(segments);
  for (std::size_t i = 0; i < segment.size(); ++i) {
    out(i, 0) = std::exp(lv(i, 0) - peak[segment[i]]);
    total[segment[i]] += out(i, 0);
  }
  for (std::size_t i = 0; i < segment.size(); ++i) out(i, 0) /= total[segment[i]];
  const int out_id = static_cast<int>(t.size());
  return t.push(std::move(out), {logits},
                [logits, segments, out_id, seg = copy_index(segment)](Tape& tp, const Mat& g) {
                  const Mat& s = tp.value(Var{out_id});
                  Col dot = Col::Zero(segments);
                  for (std::size_t i = 0; i < seg.size(); ++i) dot[seg[i]] += g(i, 0) * s(i, 0);
                  tp.accumulate_with(logits, [&](Mat& gl) {
                    for (std::size_t i = 0; i < seg.size(); ++i) {
                      gl(i, 0) += s(i, 0) * (g(i, 0) - dot[seg[i]]);
                    }
                  });
                });
}

Var scale_rows(Tape& t, Var x, Var w) {
  const Mat& xv = t.value(x);
  const Mat& wv = t.value(w);
  require_shape(wv.cols() == 1 && wv.rows() == xv.rows(), "scale_rows: weight column shape");
  Mat out = xv.array().colwise() * wv.col(0).array();
  return t.push(std::move(out), {x, w}, [x, w](Tape& tp, const Mat& g) {
    tp.accumulate_with(x, [&](Mat& gx) {
      gx.array() += g.array().colwise() * tp.value(w).col(0).array();
    });
    tp.accumulate_with(w, [&](Mat& gw) {
      gw.col(0) += (g.array() * tp.value(x).array()).rowwise().sum().matrix();
    });
  });
}

Var weighted_sum(Tape& t, Var x, std::span<const double> weights) {
  const Mat& xv = t.value(x);
  require_shape(xv.cols() == 1 && xv.rows() == static_cast<Eigen::Index>(weights.size()),
                "weighted_sum: weight count must match rows");
  const Eigen::Map<const Col> wmap(weights.data(), static_cast<Eigen::Index>(weights.size()));
  Mat out(1, 1);
  out(0, 0) = xv.col(0).dot(wmap);
  return t.push(std::move(out), {x}, [x, wv = Col(wmap)](Tape& tp, const Mat& g) {
    tp.accumulate_with(x, [&](Mat& gx) { gx.col(0) += g(0, 0) * wv; });
  });
}

Var mean_scalars(Tape& t, std::span<const Var> xs) {
  if (xs.empty()) throw EmptySet("mean of no scalars");
  Var acc = xs[0];
  for (std::size_t i = 1; i < xs.size(); ++i) acc = add(t, acc, xs[i]);
  return scale(t, acc, 1.0 / static_cast<double>(xs.size()));
}

// --- quaternion rows -----------------------------------------------------------

namespace {

using Row4 = Eigen::Matrix<double, 1, 4>;

inline Row4 hamilton_row(const Row4& a, const Row4& b) {
  return Row4(a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
              a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
              a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
              a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]);
}

inline Row4 conj_row(const Row4& a) { return Row4(a[0], -a[1], -a[2], -a[3]); }

double canonical_sign(const Eigen::Ref<const Row4>& q) {
  if (q[0] != 0.0) return q[0] < 0.0 ? -1.0 : 1.0;
  for (int i = 1; i < 4; ++i) {
    if (q[i] != 0.0) return q[i] < 0.0 ? -1.0 : 1.0;
  }
  return 1.0;
}

void require_quat(const Mat& m, const char* op) {
  require_shape(m.cols() == 4, std::string(op) + ": expected 4 columns");
}

}  // namespace

Var quat_mul(Tape& t, Var a, Var b) {
  const Mat& av = t.value(a);
  const Mat& bv = t.value(b);
  require_quat(av, "quat_mul");
  require_quat(bv, "quat_mul");
  require_shape(av.rows() == bv.rows(), "quat_mul: row counts differ");
  Mat out(av.rows(), 4);
  for (Eigen::Index i = 0; i < av.rows(); ++i) out.row(i) = hamilton_row(av.row(i), bv.row(i));
  return t.push(std::move(out), {a, b}, [a, b](Tape& tp, const Mat& g) {
    const Mat& av = tp.value(a);
    const Mat& bv = tp.value(b);
    // a -> a*b and b -> a*b have transposes given by conjugate products
    tp.accumulate_with(a, [&](Mat& ga) {
      for (Eigen::Index i = 0; i < g.rows(); ++i) ga.row(i) += hamilton_row(g.row(i), conj_row(bv.row(i)));
    });
    tp.accumulate_with(b, [&](Mat& gb) {
      for (Eigen::Index i = 0; i < g.rows(); ++i) gb.row(i) += hamilton_row(conj_row(av.row(i)), g.row(i));
    });
  });
}

Var quat_conj(Tape& t, Var a) {
  const Mat& av = t.value(a);
  require_quat(av, "quat_conj");
  Mat out = av;
  out.rightCols(3) *= -1.0;
  return t.push(std::move(out), {a}, [a](Tape& tp, const Mat& g) {
    tp.accumulate_with(a, [&](Mat& ga) {
      ga.col(0) += g.col(0);
      ga.rightCols(3) -= g.rightCols(3);
    });
  });
}

Var quat_canonical(Tape& t, Var a) {
  const Mat& av = t.value(a);
  require_quat(av, "quat_canonical");
  Col sign(av.rows());
  for (Eigen::Index i = 0; i < av.rows(); ++i) sign[i] = canonical_sign(av.row(i));
  Mat out = av.array().colwise() * sign.array();
  return t.push(std::move(out), {a}, [a, sign](Tape& tp, const Mat& g) {
    tp.accumulate_with(a, [&](Mat& ga) { ga.array() += g.array().colwise() * sign.array(); });
  });
}

Var quat_normalize(Tape& t, Var raw, double eps) {
  const Mat& rv = t.value(raw);
  require_quat(rv, "quat_normalize");
  Col norm = rv.rowwise().norm();
  for (Eigen::Index i = 0; i < norm.size(); ++i) {
    if (!(norm[i] > eps)) throw DegenerateQuaternion("readout produced a zero quaternion");
  }
  Mat out = rv.array().colwise() / norm.array();
  const int out_id = static_cast<int>(t.size());
  return t.push(std::move(out), {raw}, [raw, out_id, norm](Tape& tp, const Mat& g) {
    const Mat& q = tp.value(Var{out_id});
    tp.accumulate_with(raw, [&](Mat& gr) {
      for (Eigen::Index i = 0; i < g.rows(); ++i) {
        const double along = q.row(i).dot(g.row(i));
        gr.row(i) += (g.row(i) - along * q.row(i)) / norm[i];
      }
    });
  });
}

Var quat_distance(Tape& t, Var a, Var b) {
  const Mat& av = t.value(a);
  const Mat& bv = t.value(b);
  require_quat(av, "quat_distance");
  require_quat(bv, "quat_distance");
  require_shape(av.rows() == bv.rows(), "quat_distance: row counts differ");
  const Eigen::Index n = av.rows();
  Mat out(n, 1);
  // direction of d(distance)/d(a); d/d(b) is -sign times it
  Mat dir(n, 4);
  Col bsign(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Row4 minus = av.row(i) - bv.row(i);
    const Row4 plus = av.row(i) + bv.row(i);
    const double dm = minus.norm();
    const double dp = plus.norm();
    if (dm <= dp) {
      out(i, 0) = dm;
      dir.row(i) = dm > 0.0 ? Row4(minus / dm) : Row4::Zero();
      bsign[i] = -1.0;
    } else {
      out(i, 0) = dp;
      dir.row(i) = plus / dp;
      bsign[i] = 1.0;
    }
  }
  return t.push(std::move(out), {a, b}, [a, b, dir, bsign](Tape& tp, const Mat& g) {
    tp.accumulate_with(a, [&](Mat& ga) { ga.array() += dir.array().colwise() * g.col(0).array(); });
    tp.accumulate_with(b, [&](Mat& gb) {
      gb.array() += dir.array().colwise() * (g.col(0).array() * bsign.array());
    });
  });
}

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw EmptySet("softmax over an empty neighbor set");
  const double peak = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - peak);
    total += out[i];
  }
  for (double& o : out) o /= total;
  return out;
}

// --- multi-layer perceptrons -------------------------------------------------

std::string to_string(Activation a) {
  return a == Activation::LeakyRelu ? "leaky_relu" : "linear";
}

Activation activation_from_string(const std::string& s) {
  if (s == "leaky_relu") return Activation::LeakyRelu;
  if (s == "linear") return Activation::Linear;
  throw CheckpointError("unknown activation '" + s + "'");
}

int Mlp::in_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.front().weight.cols()); }
int Mlp::out_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.back().weight.rows()); }

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const Layer& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

Mlp make_mlp(std::span<const int> dims, std::mt19937_64& rng) {
  if (dims.size() < 2) throw InvalidConfig("an MLP needs at least input and output dims");
  Mlp m;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const int in = dims[l];
    const int out = dims[l + 1];
    if (in < 1 || out < 1) throw InvalidConfig("MLP dims must be positive");
    const bool hidden = l + 2 < dims.size();
    // fan-in Kaiming bound; gain sqrt(2) ahead of a rectifier, 1 otherwise
    const double bound = std::sqrt((hidden ? 6.0 : 3.0) / in);
    std::uniform_real_distribution<double> dist(-bound, bound);
    Layer layer;
    layer.weight.resize(out, in);
    for (Eigen::Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = dist(rng);
    layer.bias = Mat::Zero(1, out);
    layer.activation = hidden ? Activation::LeakyRelu : Activation::Linear;
    m.layers.push_back(std::move(layer));
  }
  return m;
}

Mlp zeros_like(const Mlp& m) {
  Mlp z = m;
  for (Layer& l : z.layers) {
    l.weight.setZero();
    l.bias.setZero();
  }
  return z;
}

void check_finite(const Mlp& m, const char* what) {
  for (const Layer& l : m.layers) {
    if (!l.weight.allFinite() || !l.bias.allFinite()) {
      throw Divergence(std::string(what) + " contains non-finite values");
    }
  }
}

MlpVars bind(Tape& t, const Mlp& m, Mlp* grads) {
  if (grads) {
    require_shape(grads->layers.size() == m.layers.size(), "bind: gradient layer count");
  }
  MlpVars vars;
  vars.model = &m;
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    vars.weight.push_back(t.parameter(m.layers[l].weight, grads ? &grads->layers[l].weight : nullptr));
    vars.bias.push_back(t.parameter(m.layers[l].bias, grads ? &grads->layers[l].bias : nullptr));
  }
  return vars;
}

Var mlp_forward(Tape& t, const MlpVars& vars, Var input) {
  require_shape(vars.model != nullptr, "mlp_forward: unbound model");
  require_shape(t.cols(input) == vars.model->in_dim(),
                "mlp_forward: input width " + std::to_string(t.cols(input)) + ", expected " +
                    std::to_string(vars.model->in_dim()));
  Var h = input;
  for (std::size_t l = 0; l < vars.weight.size(); ++l) {
    h = linear(t, h, vars.weight[l], vars.bias[l]);
    if (vars.model->layers[l].activation == Activation::LeakyRelu) h = leaky_relu(t, h);
  }
  return h;
}

Mat mlp_forward(const Mlp& m, const Mat& input) {
  Tape t(false);
  const MlpVars vars = bind(t, m, nullptr);
  return t.value(mlp_forward(t, vars, t.constant(input)));
}

// --- optimizer ---------------------------------------------------------------

AdamState make_adam_state(const Mlp& params) {
  return AdamState{zeros_like(params), zeros_like(params), 0};
}

void adam_step(Mlp& params, const Mlp& grads, AdamState& state, double lr,
               const AdamConfig& cfg) {
  require_shape(params.layers.size() == grads.layers.size() &&
                    params.layers.size() == state.m.layers.size(),
                "adam_step: layer counts differ");
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  auto update = [&](Mat& p, const Mat& g, Mat& m, Mat& v) {
    require_shape(p.rows() == g.rows() && p.cols() == g.cols(), "adam_step: gradient shape");
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v.array() = cfg.beta2 * v.array() + (1.0 - cfg.beta2) * g.array().square();
    p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.epsilon);
  };
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    update(params.layers[l].weight, grads.layers[l].weight, state.m.layers[l].weight,
           state.v.layers[l].weight);
    update(params.layers[l].bias, grads.layers[l].bias, state.m.layers[l].bias,
           state.v.layers[l].bias);
  }
}

// --- serialization -----------------------------------------------------------

nlohmann::ordered_json to_json(const Mlp& m) {
  auto layers = nlohmann::ordered_json::array();
  for (const Layer& l : m.layers) {
    std::vector<double> w(l.weight.data(), l.weight.data() + l.weight.size());
    std::vector<double> b(l.bias.data(), l.bias.data() + l.bias.size());
    layers.push_back({{"in", l.weight.cols()},
                      {"out", l.weight.rows()},
                      {"activation", to_string(l.activation)},
                      {"weight", w},
                      {"bias", b}});
  }
  return {{"layers", layers}};
}

Mlp mlp_from_json(const nlohmann::ordered_json& j) {
  Mlp m;
  try {
    for (const auto& jl : j.at("layers")) {
      const int in = jl.at("in").get<int>();
      const int out = jl.at("out").get<int>();
      const auto w = jl.at("weight").get<std::vector<double>>();
      const auto b = jl.at("bias").get<std::vector<double>>();
      if (in < 1 || out < 1 || w.size() != static_cast<std::size_t>(in) * out ||
          b.size() != static_cast<std::size_t>(out)) {
        throw CheckpointError("layer arrays do not match declared dims");
      }
      if (!m.layers.empty() && m.out_dim() != in) {
        throw CheckpointError("adjacent layer dims do not chain");
      }
      Layer layer;
      layer.weight = Eigen::Map<const Mat>(w.data(), out, in);
      layer.bias = Eigen::Map<const Mat>(b.data(), 1, out);
      layer.activation = activation_from_string(jl.at("activation").get<std::string>());
      m.layers.push_back(std::move(layer));
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("malformed MLP record: ") + e.what());
  }
  if (m.layers.empty()) throw CheckpointError("MLP has no layers");
  check_finite(m, "checkpoint");
  return m;
}

}  // namespace rotavg::nn
