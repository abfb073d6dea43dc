#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "rotavg/attention_mra.hpp"
#include "test_util.hpp"

using namespace rotavg;
using rotavg::testing::consistent_graph;
using rotavg::testing::desk_config;
using rotavg::testing::random_rotations;
using rotavg::testing::rot;

namespace {

/// Untrained model whose readout is not the identity.
MraModel lively_model(std::uint64_t seed, int t_max = 3) {
  ModelConfig cfg;
  cfg.t_max = t_max;
  MraModel m = make_model(cfg, seed);
  std::mt19937_64 rng(seed + 1);
  std::uniform_real_distribution<double> u(-0.2, 0.2);
  for (Eigen::Index i = 0; i < m.readout.layers.back().weight.size(); ++i) {
    m.readout.layers.back().weight.data()[i] = u(rng);
  }
  return m;
}

Quat row_quat(const nn::Mat& m) { return Quat::normalize(m.row(0).transpose()); }

nn::Mat quat_row(const Quat& q) { return q.coeffs().transpose(); }

/// One node-by-node pass of the update written out with scalar helpers.
std::vector<Quat> scripted_iteration(const ViewGraph& g, const std::vector<Quat>& r,
                                     const MraModel& model) {
  const auto& de = g.directed_edges();
  const auto n_uv = relative_neighborhood_sizes(g);
  std::vector<Quat> next(r.size());
  for (int v = 0; v < g.node_count(); ++v) {
    std::vector<double> logits;
    std::vector<nn::Mat> messages;
    for (const Neighbor& nb : g.neighbors(v)) {
      const DirectedEdge& d = de[nb.directed];
      const Quat e = compose(inverse(r[v]), compose(d.rel, r[nb.node]));
      nn::Mat fm_in(1, 12), fa_in(1, 5);
      fm_in << quat_row(r[v]), quat_row(r[nb.node]), quat_row(e);
      fa_in << n_uv[nb.directed], quat_row(e);
      messages.push_back(nn::mlp_forward(model.message, fm_in));
      logits.push_back(nn::mlp_forward(model.attention, fa_in)(0, 0));
    }
    const auto w = nn::softmax(logits);
    nn::Mat aggregated = nn::Mat::Zero(1, model.message.out_dim());
    for (std::size_t k = 0; k < w.size(); ++k) aggregated += w[k] * messages[k];
    next[v] = compose(r[v], row_quat(nn::mlp_forward(model.readout, aggregated)));
  }
  return next;
}

double max_gap(std::span<const Quat> a, std::span<const Quat> b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, geodesic_distance(a[i], b[i]));
  return worst;
}

}  // namespace

TEST_CASE("model construction") {
  const MraModel m = make_model(ModelConfig{}, 1);
  CHECK(m.message.in_dim() == 12);
  CHECK(m.message.out_dim() == 32);
  CHECK(m.attention.in_dim() == 5);
  CHECK(m.attention.out_dim() == 1);
  CHECK(m.readout.in_dim() == 32);
  CHECK(m.readout.out_dim() == 4);
  CHECK(m.message.layers.size() == 3);
  CHECK(m.parameter_count() ==
        m.message.parameter_count() + m.attention.parameter_count() + m.readout.parameter_count());

  ModelConfig bad;
  bad.t_max = 0;
  CHECK_THROWS_AS(make_model(bad, 1), InvalidConfig);
  bad = ModelConfig{};
  bad.beta = -1;
  CHECK_THROWS_AS(make_model(bad, 1), InvalidConfig);
}

TEST_CASE("untrained model returns the initialization") {
  const SynthGraph s = generate(desk_config(80, 5, 0.15, 3));
  const auto init = spt_initialize(s.graph);
  const MraModel m = make_model(ModelConfig{}, 2);
  const auto out = infer(s.graph, m);
  for (int v = 0; v < s.graph.node_count(); ++v) CHECK(out[v].coeffs() == init[v].coeffs());

  InferOptions zero;
  zero.iterations = 0;
  const auto same = infer(s.graph, lively_model(4), zero);
  for (int v = 0; v < s.graph.node_count(); ++v) CHECK(same[v].coeffs() == init[v].coeffs());
}

TEST_CASE("noise-free graphs stay within a degree of ground truth") {
  const SynthGraph s = generate(desk_config(100, 0, 0, 5));
  const auto out = infer(s.graph, make_model(ModelConfig{}, 9));
  CHECK(rotavg::testing::max_aligned_error_deg(out, s.graph.ground_truth()) < 1.0);
}

TEST_CASE("forward pass matches a scripted per-node implementation") {
  const auto truth = random_rotations(5, 21);
  std::vector<Edge> edges;
  const std::vector<std::pair<int, int>> pairs{{0, 1}, {1, 2}, {2, 3}, {3, 4}, {0, 2}, {1, 4}};
  std::mt19937_64 rng(22);
  for (auto [u, v] : pairs) {
    edges.push_back({u, v, compose(random_noise_rotation(rng, 0.2),
                                   compose(truth[v], inverse(truth[u])))});
  }
  const ViewGraph g(5, edges, truth);
  const MraModel m = lively_model(23, 3);
  std::vector<Quat> script = spt_initialize(g);
  for (int t = 0; t < m.t_max; ++t) script = scripted_iteration(g, script, m);
  CHECK(max_gap(infer(g, m), script) < 1e-9);
}

TEST_CASE("identity readout is a fixed point of each iteration") {
  const SynthGraph s = generate(desk_config(40, 5, 0.2, 6));
  const MraModel m = make_model(ModelConfig{}, 7);
  const GraphTensors gt = make_tensors(s.graph);
  nn::Tape t(false);
  const BoundModel bound = bind(t, m, nullptr);
  const IterationState s0 = initial_state(t, gt, spt_initialize(s.graph));
  const IterationState s1 = forward_iteration(t, gt, s0, bound);
  CHECK(t.value(s1.rotations) == t.value(s0.rotations));
  CHECK(t.value(s1.discrepancies) == t.value(s0.discrepancies));
}

TEST_CASE("attention weights sum to one and single neighbors get weight one") {
  const SynthGraph s = generate(desk_config(120, 5, 0.2, 8));
  const auto truth = random_rotations(4, 9);
  const ViewGraph path = consistent_graph(truth, {{0, 1}, {1, 2}, {2, 3}});
  const MraModel m = lively_model(10, 4);

  for (const ViewGraph* g : {&s.graph, &path}) {
    const auto& de = g->directed_edges();
    int calls = 0;
    InferOptions opts;
    opts.observer = [&](int, const nn::Tape& t, const IterationState& st) {
      ++calls;
      const nn::Mat& w = t.value(st.weights);
      std::vector<double> sums(g->node_count(), 0.0);
      for (std::size_t d = 0; d < de.size(); ++d) sums[de[d].dst] += w(d, 0);
      for (double x : sums) CHECK(std::abs(x - 1.0) < 1e-9);
      for (int v = 0; v < g->node_count(); ++v) {
        if (g->degree(v) == 1) CHECK(w(g->neighbors(v)[0].directed, 0) == 1.0);
      }
    };
    infer(*g, m, opts);
    CHECK(calls == 4);
  }
}

TEST_CASE("inference is equivariant to node relabeling") {
  const SynthGraph s = generate(desk_config(50, 5, 0.2, 11));
  const ViewGraph& g = s.graph;
  std::vector<int> perm(g.node_count());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(12));

  std::vector<Edge> edges;
  for (const Edge& e : g.edges()) edges.push_back({perm[e.u], perm[e.v], e.rel});
  std::vector<Quat> truth(g.node_count()), init_p(g.node_count());
  const auto init = spt_initialize(g);
  for (int v = 0; v < g.node_count(); ++v) {
    truth[perm[v]] = g.ground_truth()[v];
    init_p[perm[v]] = init[v];
  }
  const ViewGraph gp(g.node_count(), edges, truth);
  const MraModel m = lively_model(13, 3);
  const auto out = infer_from(g, init, m);
  const auto out_p = infer_from(gp, init_p, m);
  for (int v = 0; v < g.node_count(); ++v) {
    CHECK(geodesic_distance(out[v], out_p[perm[v]]) < 1e-9);
  }
}

TEST_CASE("loss values") {
  const auto truth = random_rotations(4, 30);
  const ViewGraph g = consistent_graph(truth, {{0, 1}, {1, 2}, {2, 3}, {0, 3}, {0, 2}});
  CHECK(compute_loss(g, truth, 0.25) < 1e-15);

  std::vector<Quat> shifted;
  for (const Quat& q : truth) shifted.push_back(compose(q, rot(0, 1, 1, 40)));
  const LossTerms terms = loss_terms(g, shifted);
  CHECK(terms.relative < 1e-12);
  CHECK(terms.absolute > 0.1);

  // node 2 off by 10 degrees about x
  std::vector<Quat> pred = truth;
  pred[2] = compose(pred[2], rot(1, 0, 0, 10));
  double hand = 0.0;
  for (int v = 0; v < 4; ++v) {
    double rel = 0.0;
    for (const Neighbor& nb : g.neighbors(v)) {
      const int u = nb.node;
      rel += quaternion_distance(compose(truth[v], inverse(truth[u])),
                                 compose(pred[v], inverse(pred[u])));
    }
    hand += rel / g.degree(v) + 0.25 * quaternion_distance(truth[v], pred[v]);
  }
  hand /= 4.0;
  CHECK(std::abs(compute_loss(g, pred, 0.25) - hand) < 1e-9);
  CHECK_THROWS_AS(compute_loss(g, pred, -1.0), InvalidConfig);

  const ViewGraph no_truth(2, {Edge{0, 1, Quat::identity()}});
  CHECK_THROWS_AS(compute_loss(no_truth, std::vector<Quat>(2), 0.25), MissingGroundTruth);
}

TEST_CASE("relative loss is gauge invariant") {
  const SynthGraph s = generate(desk_config(60, 5, 0.2, 31));
  const auto pred = spt_initialize(s.graph);
  const Quat gauge = rot(2, -1, 0.5, 117);
  std::vector<Quat> pred_g, truth_g;
  for (const Quat& q : pred) pred_g.push_back(compose(q, gauge));
  for (const Quat& q : s.graph.ground_truth()) truth_g.push_back(compose(q, gauge));
  const ViewGraph moved(s.graph.node_count(), s.graph.edges(), truth_g);
  const LossTerms a = loss_terms(s.graph, pred);
  const LossTerms b = loss_terms(moved, pred_g);
  CHECK(std::abs(a.relative - b.relative) < 1e-9);

  const LossTerms c = loss_terms(s.graph, pred_g);
  CHECK(std::abs(a.relative - c.relative) < 1e-9);
  CHECK(std::abs(a.absolute - c.absolute) > 1e-3);
}

TEST_CASE("truth re-expressed in the initialization frame") {
  const SynthGraph s = generate(desk_config(70, 5, 0.1, 32));
  const ViewGraph g = truth_in_init_frame(s.graph);
  const int root = shortest_path_tree(g).root;
  CHECK(geodesic_distance(g.ground_truth()[root], Quat::identity()) < 1e-12);
  const LossTerms a = loss_terms(s.graph, spt_initialize(s.graph));
  const LossTerms b = loss_terms(g, spt_initialize(g));
  CHECK(std::abs(a.relative - b.relative) < 1e-12);
}

TEST_CASE("loss gradient matches finite differences") {
  const SynthGraph s = generate([] {
    SynthConfig c = desk_config(10, 8, 0.2, 40);
    c.base_connectivity = 2;
    return c;
  }());
  MraModel m = lively_model(41, 2);
  MraModel grads{nn::zeros_like(m.message), nn::zeros_like(m.attention),
                 nn::zeros_like(m.readout), m.t_max, m.beta};
  loss_and_gradient(s.graph, m, LossAggregation::Mean, &grads);

  const double h = 1e-5;
  double worst = 0.0;
  int checked = 0;
  auto sweep = [&](nn::Mlp& net, const nn::Mlp& g) {
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      for (nn::Mat* p : {&net.layers[l].weight, &net.layers[l].bias}) {
        const nn::Mat& gp = p == &net.layers[l].weight ? g.layers[l].weight : g.layers[l].bias;
        for (Eigen::Index i = 0; i < p->size(); i += 11) {
          const double keep = p->data()[i];
          p->data()[i] = keep + h;
          const double up = loss_and_gradient(s.graph, m, LossAggregation::Mean, nullptr);
          p->data()[i] = keep - h;
          const double down = loss_and_gradient(s.graph, m, LossAggregation::Mean, nullptr);
          p->data()[i] = keep;
          const double fd = (up - down) / (2 * h);
          const double an = gp.data()[i];
          const double err = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-7});
          if (std::abs(fd - an) > 1e-9) worst = std::max(worst, err);
          ++checked;
        }
      }
    }
  };
  sweep(m.message, grads.message);
  sweep(m.attention, grads.attention);
  sweep(m.readout, grads.readout);
  CHECK(checked > 500);
  CHECK(worst < 1e-4);
}

TEST_CASE("loss aggregation names") {
  for (auto a : {LossAggregation::Mean, LossAggregation::Sum, LossAggregation::Last}) {
    CHECK(aggregation_from_string(to_string(a)) == a);
  }
  CHECK_THROWS_AS(aggregation_from_string("median"), InvalidConfig);
}

TEST_CASE("training on noise-free graphs keeps the loss near zero") {
  std::vector<ViewGraph> set;
  for (std::uint64_t seed = 0; seed < 4; ++seed) set.push_back(generate(desk_config(40, 0, 0, seed)).graph);
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.seed = 1;
  const TrainResult r = train(set, {}, cfg);
  REQUIRE(r.history.size() == 50);
  CHECK(r.history.back().train_loss < 1e-3);
}

TEST_CASE("training overfits a single graph") {
  SynthConfig c = desk_config(30, 3, 0.0, 50);
  const SynthGraph s = generate(c);
  const std::vector<ViewGraph> one{s.graph};
  TrainConfig cfg;
  cfg.epochs = 150;
  cfg.learning_rate = 3e-3;
  cfg.seed = 2;
  const TrainResult r = train(one, one, cfg);
  const double start = r.history.front().train_loss;
  CHECK(r.history.back().train_loss < 0.5 * start);
  const double spt_median = metrics(spt_initialize(s.graph), s.graph.ground_truth()).median_deg;
  CHECK(evaluate(one, r.best).median < spt_median);
}

TEST_CASE("training is deterministic and checkpoints round trip") {
  std::vector<ViewGraph> set, val;
  for (std::uint64_t seed = 0; seed < 3; ++seed) set.push_back(generate(desk_config(40, 5, 0.15, seed)).graph);
  val.push_back(generate(desk_config(40, 5, 0.15, 99)).graph);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.seed = 3;
  cfg.keep_optimizer_state = true;
  const TrainResult a = train(set, val, cfg);
  cfg.threads = 2;
  const TrainResult b = train(set, val, cfg);
  const std::string ja = checkpoint_json(a.best, &cfg, &a).dump();
  CHECK(ja == checkpoint_json(b.best, &cfg, &b).dump());
  CHECK(a.history.size() == 2);
  CHECK(a.best_epoch >= 1);

  const auto path = std::filesystem::temp_directory_path() / "rotavg_test_ckpt.json";
  save_checkpoint(path.string(), a.best, &cfg, &a);
  const MraModel back = load_checkpoint(path.string());
  CHECK(checkpoint_json(back).dump() == checkpoint_json(a.best).dump());
  const auto pa = infer(val[0], a.best), pb = infer(val[0], back);
  for (std::size_t v = 0; v < pa.size(); ++v) CHECK(pa[v].coeffs() == pb[v].coeffs());

  auto j = checkpoint_json(a.best);
  j["format_version"] = kCheckpointFormatVersion + 1;
  CHECK_THROWS_AS(model_from_checkpoint(j), CheckpointError);
  j = checkpoint_json(a.best);
  j.erase("f_ro");
  CHECK_THROWS_AS(model_from_checkpoint(j), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/ckpt.json"), Error);
  std::filesystem::remove(path);
}

TEST_CASE("training input validation") {
  TrainConfig cfg;
  CHECK_THROWS_AS(train({}, {}, cfg), EmptyDataset);
  const ViewGraph bare(2, {Edge{0, 1, Quat::identity()}});
  CHECK_THROWS_AS(train({bare}, {}, cfg), MissingGroundTruth);
  cfg.epochs = 0;
  CHECK_THROWS_AS(train({generate(desk_config(20, 5, 0, 1)).graph}, {}, cfg), InvalidConfig);
}
