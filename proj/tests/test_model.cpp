#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <numeric>

#include "gresnet/error.hpp"
#include "gresnet/model.hpp"
#include "test_support.hpp"

using namespace gresnet;
using namespace gresnet::nn;
using ad::Tensor;
using gresnet::testing::random_matrix;

namespace {

Matrix relu_m(Matrix m) {
  for (double& v : m.data()) v = v > 0.0 ? v : 0.0;
  return m;
}

// Replays the dropout stream: one draw per nonzero entry in row-major order.
Matrix dropout_m(Matrix m, double rate, Rng& rng) {
  for (double& v : m.data()) {
    if (v == 0.0) continue;
    v *= uniform01(rng) >= rate ? 1.0 / (1.0 - rate) : 0.0;
  }
  return m;
}

// H(k) = ReLU(Â H(k−1) W(k)), logits = Â H(K−1) W(K), written with plain
// matrix primitives in the same association order as the layer.
Matrix vanilla_reference(const Model& model, const SparseMatrix& a, const Matrix& x, Rng* drop) {
  Matrix h = x;
  const int k = model.config().depth;
  for (int l = 1; l <= k; ++l) {
    const Matrix in = drop ? dropout_m(h, model.config().dropout, *drop) : h;
    Matrix t = spmm(a, gresnet::matmul(in, model.parameter("W" + std::to_string(l)).value()));
    h = l == k ? t : relu_m(t);
  }
  return h;
}

data::Dataset small_dataset(std::uint64_t seed = 1) {
  data::SyntheticOptions o;
  o.seed = seed;
  return data::synthetic_citation(o);
}

Matrix permute_rows(const Matrix& m, const std::vector<std::size_t>& perm) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out(perm[i], j) = m(i, j);
  return out;
}

}  // namespace

TEST_CASE("residual kind names round-trip") {
  for (auto k : {ResidualKind::none, ResidualKind::naive, ResidualKind::graph_naive,
                 ResidualKind::raw, ResidualKind::graph_raw, ResidualKind::lazy_naive})
    CHECK(parse_residual_kind(to_string(k)) == k);
  CHECK(parse_residual_kind("graph_raw") == ResidualKind::graph_raw);
  CHECK_THROWS_AS(parse_residual_kind("dense"), PreconditionError);
}

TEST_CASE("config validation") {
  ModelConfig c;
  c.depth = 0;
  CHECK_THROWS_AS(c.validate(), PreconditionError);
  c = {};
  c.dropout = 1.0;
  CHECK_THROWS_AS(c.validate(), PreconditionError);
  c = {};
  c.hidden = 0;
  CHECK_THROWS_AS(Model(c, 4, 2), PreconditionError);
}

TEST_CASE("sgc_layer examples") {
  Rng rng(2);
  const Matrix h = random_matrix(3, 2, rng, 0.0, 1.0);
  const auto id3 = SparseMatrix::identity(3);
  CHECK(sgc_layer(id3, Tensor::constant(h), Tensor::constant(Matrix::identity(2)), Tensor(),
                  Activation::relu)
            .value() == h);

  const SparseMatrix k3 = normalized_adjacency(gresnet::testing::triangle());
  const Matrix ones = sgc_layer(k3, Tensor::constant(Matrix(3, 2, 1.0)),
                                Tensor::constant(Matrix::identity(2)), Tensor(), Activation::relu)
                          .value();
  for (double v : ones.data()) CHECK(v == doctest::Approx(1.0).epsilon(1e-15));

  const Matrix zero = sgc_layer(k3, Tensor::constant(random_matrix(3, 4, rng)),
                                Tensor::constant(Matrix(4, 2)), Tensor(), Activation::relu)
                          .value();
  CHECK(zero == Matrix(3, 2));

  const Matrix half = sgc_layer(id3, Tensor::constant(Matrix(3, 1)), Tensor::constant(Matrix(1, 1)),
                                Tensor(), Activation::sigmoid)
                          .value();
  CHECK(half == Matrix(3, 1, 0.5));
}

TEST_CASE("residual_term examples") {
  Rng rng(6);
  const SparseMatrix k3 = normalized_adjacency(gresnet::testing::triangle());
  const Tensor h = Tensor::constant(random_matrix(3, 2, rng));
  const Tensor x = Tensor::constant(Matrix::identity(3));

  CHECK(residual_term(ResidualKind::none, h, x, k3, Tensor(), 2).value() == Matrix(3, 2));
  const Tensor naive = residual_term(ResidualKind::naive, h, x, k3, Tensor(), 2);
  CHECK(naive.id() == h.id());

  const Matrix gr =
      residual_term(ResidualKind::graph_raw, h, x, k3, Tensor::constant(Matrix::identity(3)), 3)
          .value();
  for (double v : gr.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  CHECK(residual_term(ResidualKind::raw, h, x, k3, Tensor(), 3).value() == Matrix::identity(3));
  CHECK_THROWS_AS(residual_term(ResidualKind::raw, h, x, k3, Tensor(), 2), PreconditionError);
  CHECK_THROWS_AS(residual_term(ResidualKind::naive, h, x, k3, Tensor(), 5), PreconditionError);
  CHECK_THROWS_AS(
      residual_term(ResidualKind::raw, h, x, k3, Tensor::constant(Matrix(2, 2)), 2), ShapeError);
}

TEST_CASE("parameter layout") {
  ModelConfig c;
  c.depth = 3;
  c.residual = ResidualKind::raw;
  c.bias = true;
  const Model m(c, 10, 4);
  std::vector<std::string> names;
  for (const auto& p : m.parameters()) names.push_back(p.name);
  CHECK(names == std::vector<std::string>{"W1", "W2", "W3", "b1", "b2", "b3", "Wadj_hidden",
                                          "Wadj_out"});
  CHECK(m.parameter("Wadj_out").rows() == 10);
  const auto wd = m.weight_decay_coefficients();
  CHECK(wd[0] == 5e-4);
  CHECK(std::accumulate(wd.begin() + 1, wd.end(), 0.0) == 0.0);

  c.residual = ResidualKind::naive;
  const Model n(c, 10, 4);
  names.clear();
  for (const auto& p : n.parameters()) names.push_back(p.name);
  CHECK(names ==
        std::vector<std::string>{"W1", "W2", "W3", "b1", "b2", "b3", "Wadj1", "Wadj3"});

  // Residual parameters never disturb the base weights.
  ModelConfig v = c;
  v.residual = ResidualKind::none;
  CHECK(Model(v, 10, 4).parameter("W2").value() == n.parameter("W2").value());
}

TEST_CASE("depth-1 model is a single-layer GCN and ignores hidden width") {
  Rng rng(8);
  const Graph g = gresnet::testing::random_connected_graph(12, 8, rng);
  const SparseMatrix a = normalized_adjacency(g);
  const Matrix x = random_matrix(12, 5, rng);
  ModelConfig c;
  c.depth = 1;
  const Model m(c, 5, 3);
  Rng unused(0);
  const Matrix logits = m.forward(a, Tensor::constant(x), unused, false).logits.value();
  const Matrix oracle = gresnet::testing::naive_matmul(
      a.to_dense(), gresnet::testing::naive_matmul(x, m.parameter("W1").value()));
  CHECK(max_abs_diff(logits, oracle) <= 1e-12);

  c.hidden = 3;
  CHECK(Model(c, 5, 3).forward(a, Tensor::constant(x), unused, false).logits.value() == logits);
}

TEST_CASE("vanilla forward matches the reference stack bitwise") {
  Rng rng(10);
  const Graph g = gresnet::testing::random_connected_graph(30, 40, rng);
  const SparseMatrix a = normalized_adjacency(g);
  const Matrix x = random_matrix(30, 9, rng);
  for (int depth : {2, 3, 5}) {
    ModelConfig c;
    c.depth = depth;
    c.seed = 99;
    const Model m(c, 9, 4);
    Rng unused(0);
    CHECK(m.forward(a, Tensor::constant(x), unused, false).logits.value() ==
          vanilla_reference(m, a, x, nullptr));
    Rng d1(5), d2(5);
    CHECK(m.forward(a, Tensor::constant(x), d1, true).logits.value() ==
          vanilla_reference(m, a, x, &d2));
  }
}

TEST_CASE("sparse and dense input routes agree bitwise, gradients included") {
  const data::Dataset d = small_dataset(3);
  const SparseMatrix a = normalized_adjacency(d.graph);
  const Tensor x = Tensor::constant(d.features);
  for (ResidualKind kind : {ResidualKind::none, ResidualKind::naive, ResidualKind::graph_naive,
                            ResidualKind::raw, ResidualKind::graph_raw, ResidualKind::lazy_naive}) {
    for (bool dropped_residual : {false, true}) {
      for (int depth : {1, 3}) {
        ModelConfig c;
        c.depth = depth;
        c.residual = kind;
        c.bias = true;
        c.dropout_residual = dropped_residual;
        c.seed = 9;
        const Model m(c, d.feature_count(), d.class_count());
        std::vector<Matrix> grads[2];
        Matrix logits[2];
        for (int route = 0; route < 2; ++route) {
          for (auto p : m.parameter_tensors()) p.zero_grad();
          Rng rng = make_rng(4, "dropout");
          const auto f = m.forward(a, x, rng, true, route ? InputPath::sparse : InputPath::dense);
          ad::backward(ad::softmax_cross_entropy(f.logits, d.labels, d.train));
          logits[route] = f.logits.value();
          for (const auto& p : m.parameter_tensors()) grads[route].push_back(p.grad());
        }
        INFO(to_string(kind), " depth ", depth, " dropout_residual ", dropped_residual);
        CHECK(logits[0] == logits[1]);
        CHECK(grads[0] == grads[1]);
      }
    }
  }
}

TEST_CASE("zeroed residual weights reproduce vanilla bitwise") {
  Rng rng(12);
  const Graph g = gresnet::testing::random_connected_graph(25, 30, rng);
  const SparseMatrix a = normalized_adjacency(g);
  const Matrix x = random_matrix(25, 7, rng);
  ModelConfig base;
  base.depth = 4;
  base.seed = 3;
  const Model vanilla(base, 7, 3);
  for (auto kind : {ResidualKind::raw, ResidualKind::graph_raw}) {
    ModelConfig c = base;
    c.residual = kind;
    Model m(c, 7, 3);
    for (const auto& p : m.parameters())
      if (p.name.rfind("Wadj", 0) == 0) {
        Tensor t = p.tensor;
        t.mutable_value() = Matrix(t.rows(), t.cols());
      }
    for (bool training : {false, true}) {
      Rng r1(7), r2(7);
      CHECK(m.forward(a, Tensor::constant(x), r1, training).logits.value() ==
            vanilla.forward(a, Tensor::constant(x), r2, training).logits.value());
    }
  }
}

TEST_CASE("forward structure of each residual kind") {
  Rng rng(13);
  const Graph g = gresnet::testing::random_connected_graph(10, 10, rng);
  const SparseMatrix a = normalized_adjacency(g);
  const Matrix x = random_matrix(10, 6, rng);
  Rng unused(0);

  ModelConfig c;
  c.depth = 3;
  c.hidden = 4;
  c.residual = ResidualKind::naive;
  const Model naive(c, 6, 2);
  const auto fr = naive.forward(a, Tensor::constant(x), unused, false);
  REQUIRE(fr.layer_outputs.size() == 3);
  // Layer 2 keeps its width, so its residual is H(1) itself.
  const Matrix t2 = spmm(a, gresnet::matmul(fr.layer_outputs[0].value(),
                                            naive.parameter("W2").value()));
  CHECK(fr.layer_outputs[1].value() == relu_m(t2 + fr.layer_outputs[0].value()));

  c.residual = ResidualKind::lazy_naive;
  const Model lazy(c, 6, 2);
  const auto lr = lazy.forward(a, Tensor::constant(x), unused, false);
  const Matrix s2 = spmm(a, gresnet::matmul(lr.layer_outputs[0].value(),
                                            lazy.parameter("W2").value()));
  Matrix expect = s2;
  for (double& v : expect.data()) v = 1.0 / (1.0 + std::exp(-v));
  CHECK(max_abs_diff(lr.layer_outputs[1].value(), expect + lr.layer_outputs[0].value()) == 0.0);

  for (auto kind : {ResidualKind::graph_naive, ResidualKind::raw, ResidualKind::graph_raw}) {
    for (bool drop_res : {false, true}) {
      c.residual = kind;
      c.dropout_residual = drop_res;
      const Model m(c, 6, 2);
      Rng d(1);
      const auto out = m.forward(a, Tensor::constant(x), d, true);
      CHECK(out.logits.rows() == 10);
      CHECK(out.logits.cols() == 2);
      CHECK(out.layer_outputs.size() == 3);
    }
  }
}

TEST_CASE("permutation equivariance") {
  Rng rng(14);
  const std::size_t n = 20;
  const Graph g = gresnet::testing::random_connected_graph(n, 25, rng);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng() % i]);
  std::vector<Edge> pe;
  for (auto [i, j] : g.edges()) pe.emplace_back(perm[i], perm[j]);
  const Graph pg = build_graph(n, pe);
  const Matrix x = random_matrix(n, 5, rng);
  Rng unused(0);
  for (auto kind : {ResidualKind::none, ResidualKind::naive, ResidualKind::graph_naive,
                    ResidualKind::raw, ResidualKind::graph_raw, ResidualKind::lazy_naive}) {
    ModelConfig c;
    c.depth = 4;
    c.residual = kind;
    const Model m(c, 5, 3);
    const Matrix base = m.forward(normalized_adjacency(g), Tensor::constant(x), unused, false)
                            .logits.value();
    const Matrix moved = m.forward(normalized_adjacency(pg), Tensor::constant(permute_rows(x, perm)),
                                   unused, false)
                             .logits.value();
    // Neighbour sums run in a different order after relabeling, so equality
    // holds up to rounding.
    CHECK(max_abs_diff(moved, permute_rows(base, perm)) <= 1e-12);
  }
}

TEST_CASE("full model gradients match finite differences") {
  Rng rng(15);
  for (auto kind : {ResidualKind::none, ResidualKind::raw, ResidualKind::graph_raw,
                    ResidualKind::naive, ResidualKind::graph_naive, ResidualKind::lazy_naive}) {
    for (int trial = 0; trial < 4; ++trial) {
      const Graph g = gresnet::testing::random_connected_graph(6, 4, rng);
      const SparseMatrix a = normalized_adjacency(g);
      const Matrix x = random_matrix(6, 5, rng);
      Matrix y(6, 3);
      for (std::size_t i = 0; i < 6; ++i) y(i, rng() % 3) = 1.0;
      const std::vector<std::size_t> mask{0, 2, 4, 5};
      ModelConfig c;
      c.depth = 2;
      c.hidden = 4;
      c.bias = true;
      c.residual = kind;
      c.seed = rng();
      Model m(c, 5, 3);
      for (const auto& p : m.parameters())
        if (p.name[0] == 'b') {
          Tensor t = p.tensor;
          t.mutable_value() = random_matrix(1, t.cols(), rng);
        }
      Rng unused(0);
      auto loss = [&] {
        return ad::softmax_cross_entropy(m.forward(a, Tensor::constant(x), unused, false).logits, y,
                                         mask);
      };
      for (Tensor p : m.parameter_tensors()) p.zero_grad();
      ad::backward(loss());
      double worst = 0.0;
      for (Tensor p : m.parameter_tensors()) {
        const Matrix analytic = p.grad();
        auto f = [&] { return loss().value()(0, 0); };
        const Matrix numeric = gresnet::testing::numeric_gradient(f, p.mutable_value(), 1e-5);
        worst = std::max(worst, gresnet::testing::relative_error(analytic, numeric));
      }
      CHECK(worst <= 1e-4);
    }
  }
}

TEST_CASE("evaluate") {
  const Matrix y{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 0, 0}};
  CHECK(evaluate(y, y, {0, 1, 2, 3}) == 1.0);
  CHECK(evaluate(Matrix(4, 3, 0.2), Matrix{{1, 0, 0}, {1, 0, 0}, {1, 0, 0}, {1, 0, 0}},
                 {0, 1, 2, 3}) == 1.0);
  CHECK_THROWS_AS(evaluate(y, y, {}), PreconditionError);

  Rng rng(16);
  const Matrix logits = random_matrix(10, 4, rng);
  Matrix labels(10, 4);
  for (std::size_t i = 0; i < 10; ++i) labels(i, rng() % 4) = 1.0;
  const std::vector<std::size_t> mask{0, 1, 2, 4, 6, 7, 9};
  int hits = 0;
  for (auto r : mask) {
    std::size_t best = 0;
    for (std::size_t c = 0; c < 4; ++c)
      if (logits(r, c) > logits(r, best)) best = c;
    hits += labels(r, best) == 1.0;
  }
  CHECK(evaluate(logits, labels, mask) == static_cast<double>(hits) / 7.0);
}

TEST_CASE("training: zero epochs, determinism, early stopping, empty split") {
  const auto data = small_dataset();
  const SparseMatrix a = normalized_adjacency(data.graph);
  ModelConfig c;
  c.epochs = 0;
  const auto r0 = train(c, data, a);
  CHECK(r0.epochs.size() == 1);
  CHECK(r0.epochs[0].epoch == 0);
  CHECK(r0.best_epoch == 0);

  c.epochs = 30;
  c.seed = 4;
  c.patience = 0;
  const auto r1 = train(c, data, a);
  const auto r2 = train(c, data, a);
  REQUIRE(r1.epochs.size() == 31);
  for (std::size_t i = 0; i < r1.epochs.size(); ++i) {
    CHECK(r1.epochs[i].loss == r2.epochs[i].loss);
    CHECK(r1.epochs[i].val_acc == r2.epochs[i].val_acc);
    CHECK(r1.epochs[i].train_acc >= 0.0);
    CHECK(r1.epochs[i].train_acc <= 1.0);
  }
  CHECK(r1.best_test_acc == r2.best_test_acc);
  for (const auto& e : r1.epochs) CHECK(e.val_acc <= r1.best_val_acc);

  c.epochs = 400;
  c.patience = 10;
  const auto stopped = train(c, data, a);
  CHECK(stopped.stopped_early);
  CHECK(stopped.epochs.size() < 401);

  auto empty = data;
  empty.val.clear();
  CHECK_THROWS_AS(train(c, empty, a), PreconditionError);
}

TEST_CASE("shallow vanilla model learns the synthetic task") {
  const auto data = small_dataset();
  const SparseMatrix a = normalized_adjacency(data.graph);
  ModelConfig c;
  c.patience = 0;
  c.seed = 1;
  const auto r = train(c, data, a);
  CHECK(r.epochs.back().train_acc >= 0.9);
  CHECK(r.best_test_acc >= 0.7);
}

TEST_CASE("non-finite loss is reported as a numeric failure") {
  auto data = small_dataset();
  data.features(data.train[0], 0) = std::numeric_limits<double>::infinity();
  const SparseMatrix a = normalized_adjacency(data.graph);
  ModelConfig c;
  c.epochs = 3;
  c.dropout = 0.0;
  CHECK_THROWS_AS(train(c, data, a), NumericError);
}

TEST_CASE("gradient-norm probe on a 7-layer raw model") {
  Rng rng(17);
  data::SyntheticOptions o;
  o.nodes = 20;
  o.classes = 2;
  o.features = 10;
  o.per_class_train = 3;
  o.val_count = 4;
  o.test_count = 6;
  const auto data = data::synthetic_citation(o);
  ModelConfig c;
  c.depth = 7;
  c.residual = ResidualKind::raw;
  c.epochs = 10;
  c.probe_every = 1;
  c.patience = 0;
  const auto r = train(c, data, normalized_adjacency(data.graph));
  REQUIRE(r.probes.size() == 10);
  for (const auto& s : r.probes) {
    CHECK(s.probe.norms.size() == 7);
    REQUIRE(s.probe.ratios.size() == 6);
    for (const auto& ratio : s.probe.ratios) {
      REQUIRE(ratio.has_value());
      CHECK(std::isfinite(*ratio));
      CHECK(*ratio > 0.0);
    }
  }

  const auto chain = identity_chain_probe(7);
  for (const auto& ratio : chain.ratios) CHECK(*ratio == 1.0);
}

TEST_CASE("checkpoint round trip reproduces evaluation exactly") {
  const auto data = small_dataset();
  const SparseMatrix a = normalized_adjacency(data.graph);
  ModelConfig c;
  c.depth = 3;
  c.residual = ResidualKind::graph_raw;
  c.bias = true;
  c.epochs = 5;
  Model trained(c, 1, 1);
  train(c, data, a, &trained);
  const auto path = std::filesystem::temp_directory_path() / "gresnet_ckpt.json";
  save_checkpoint(trained, path);
  const Model loaded = load_checkpoint(path);
  Rng u1(0), u2(0);
  const Tensor x = Tensor::constant(data.features);
  CHECK(loaded.forward(a, x, u1, false).logits.value() ==
        trained.forward(a, x, u2, false).logits.value());
  CHECK(loaded.config().residual == ResidualKind::graph_raw);
  std::ofstream(path) << "{\"config\": 3}";
  CHECK_THROWS_AS(load_checkpoint(path), DataError);
  std::filesystem::remove(path);
}
