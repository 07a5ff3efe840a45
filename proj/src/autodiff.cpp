#include "gresnet/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <unordered_set>

#include "gresnet/error.hpp"

namespace gresnet::ad {

namespace detail {

struct Node {
  Matrix value;
  Matrix grad;
  bool has_grad = false;
  bool requires_grad = false;
  std::string op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const Matrix&)> backward;
};

namespace {

void accumulate(Node& n, const Matrix& g) {
  if (!n.requires_grad) return;
  if (!n.has_grad) {
    n.grad = g;
    n.has_grad = true;
    return;
  }
  auto& dst = n.grad.data();
  const auto& src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

struct Access {
  static Tensor leaf(Matrix value, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Node& node(const Tensor& t) {
    if (!t.node_) throw PreconditionError("autodiff: use of an undefined tensor");
    return *t.node_;
  }

  static const std::shared_ptr<Node>& ptr(const Tensor& t) { return t.node_; }

  // The backward closure receives the output gradient and must accumulate
  // into the parents itself (via `accumulate`).
  static Tensor result(std::string op, Matrix value, std::vector<Tensor> parents,
                       std::function<void(const Matrix&)> backward) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->op = std::move(op);
    for (const auto& p : parents) n->requires_grad = n->requires_grad || node(p).requires_grad;
    if (n->requires_grad) {
      for (auto& p : parents) n->parents.push_back(p.node_);
      n->backward = std::move(backward);
    }
    return Tensor(std::move(n));
  }
};

}  // namespace detail

using detail::Access;
using detail::accumulate;
using detail::Node;

namespace {

std::string dims(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace

Tensor Tensor::constant(Matrix value) { return Access::leaf(std::move(value), false); }
Tensor Tensor::parameter(Matrix value) { return Access::leaf(std::move(value), true); }

std::size_t Tensor::rows() const { return value().rows(); }
std::size_t Tensor::cols() const { return value().cols(); }
const Matrix& Tensor::value() const { return Access::node(*this).value; }
Matrix& Tensor::mutable_value() { return Access::node(*this).value; }
bool Tensor::requires_grad() const { return Access::node(*this).requires_grad; }
bool Tensor::has_grad() const { return Access::node(*this).has_grad; }

const Matrix& Tensor::grad() const {
  const Node& n = Access::node(*this);
  if (!n.has_grad) throw PreconditionError("autodiff: tensor has no gradient");
  return n.grad;
}

void Tensor::zero_grad() {
  Node& n = Access::node(*this);
  n.grad = Matrix();
  n.has_grad = false;
}

const std::string& Tensor::op() const { return Access::node(*this).op; }
bool Tensor::is_leaf() const { return Access::node(*this).op == "leaf"; }

Tensor matmul(const Tensor& a, const Tensor& b) {
  Node& na = Access::node(a);
  Node& nb = Access::node(b);
  Matrix value = gresnet::matmul(na.value, nb.value);
  return Access::result("matmul", std::move(value), {a, b}, [&na, &nb](const Matrix& g) {
    if (na.requires_grad) accumulate(na, matmul_nt(g, nb.value));
    if (nb.requires_grad) accumulate(nb, matmul_tn(na.value, g));
  });
}

// `m` is captured by address; callers keep the operator alive for the whole
// forward/backward cycle, which every model in this library does.
Tensor spmm_ad(const SparseMatrix& m, const Tensor& x) {
  Node& nx = Access::node(x);
  Matrix value = spmm(m, nx.value);
  const SparseMatrix* mp = &m;
  return Access::result("spmm", std::move(value), {x}, [mp, &nx](const Matrix& g) {
    accumulate(nx, spmm_transposed(*mp, g));
  });
}

Tensor spmm_ad(std::shared_ptr<const SparseMatrix> m, const Tensor& x) {
  if (!m) throw PreconditionError("spmm_ad: null operator");
  Node& nx = Access::node(x);
  Matrix value = spmm(*m, nx.value);
  return Access::result("spmm", std::move(value), {x}, [m = std::move(m), &nx](const Matrix& g) {
    accumulate(nx, spmm_transposed(*m, g));
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  Node& na = Access::node(a);
  Node& nb = Access::node(b);
  if (na.value.rows() != nb.value.rows() || na.value.cols() != nb.value.cols())
    throw ShapeError("add: " + dims(na.value) + " + " + dims(nb.value));
  return Access::result("add", na.value + nb.value, {a, b}, [&na, &nb](const Matrix& g) {
    accumulate(na, g);
    accumulate(nb, g);
  });
}

Tensor add_bias_row(const Tensor& a, const Tensor& bias) {
  Node& na = Access::node(a);
  Node& nb = Access::node(bias);
  if (nb.value.rows() != 1 || nb.value.cols() != na.value.cols())
    throw ShapeError("add_bias_row: " + dims(na.value) + " + bias " + dims(nb.value));
  Matrix value = na.value;
  for (std::size_t r = 0; r < value.rows(); ++r) {
    auto row = value.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += nb.value(0, c);
  }
  return Access::result("add_bias_row", std::move(value), {a, bias}, [&na, &nb](const Matrix& g) {
    accumulate(na, g);
    if (!nb.requires_grad) return;
    Matrix col_sums(1, g.cols());
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) col_sums(0, c) += g(r, c);
    accumulate(nb, col_sums);
  });
}

Tensor relu(const Tensor& x) {
  Node& nx = Access::node(x);
  Matrix value = nx.value;
  for (double& v : value.data()) v = v > 0.0 ? v : 0.0;
  return Access::result("relu", std::move(value), {x}, [&nx](const Matrix& g) {
    Matrix d = g;
    const auto& in = nx.value.data();
    for (std::size_t i = 0; i < in.size(); ++i)
      if (!(in[i] > 0.0)) d.data()[i] = 0.0;
    accumulate(nx, d);
  });
}

Tensor sigmoid(const Tensor& x) {
  Node& nx = Access::node(x);
  Matrix value = nx.value;
  for (double& v : value.data()) v = 1.0 / (1.0 + std::exp(-v));
  auto out = Access::result("sigmoid", std::move(value), {x}, {});
  // The derivative reads the output, so the closure is attached afterwards.
  Node& no = Access::node(out);
  if (no.requires_grad) {
    no.backward = [&nx, &no](const Matrix& g) {
      Matrix d = g;
      const auto& s = no.value.data();
      for (std::size_t i = 0; i < s.size(); ++i) d.data()[i] *= s[i] * (1.0 - s[i]);
      accumulate(nx, d);
    };
  }
  return out;
}

Tensor identity(const Tensor& x) {
  Node& nx = Access::node(x);
  return Access::result("identity", nx.value, {x}, [&nx](const Matrix& g) { accumulate(nx, g); });
}

Tensor sum(const Tensor& x) {
  Node& nx = Access::node(x);
  double s = 0.0;
  for (double v : nx.value.data()) s += v;
  return Access::result("sum", Matrix(1, 1, s), {x}, [&nx](const Matrix& g) {
    accumulate(nx, Matrix(nx.value.rows(), nx.value.cols(), g(0, 0)));
  });
}

Tensor softmax_cross_entropy(const Tensor& logits, const Matrix& labels,
                             const std::vector<std::size_t>& mask) {
  Node& nl = Access::node(logits);
  const Matrix& z = nl.value;
  if (mask.empty()) throw PreconditionError("softmax_cross_entropy: empty mask");
  if (labels.rows() != z.rows() || labels.cols() != z.cols())
    throw ShapeError("softmax_cross_entropy: logits " + dims(z) + " vs labels " + dims(labels));

  const std::size_t c = z.cols();
  Matrix probs(mask.size(), c);
  std::vector<std::size_t> truth(mask.size());
  double loss = 0.0;
  for (std::size_t k = 0; k < mask.size(); ++k) {
    const std::size_t r = mask[k];
    if (r >= z.rows()) throw ShapeError("softmax_cross_entropy: mask row out of range");
    std::size_t ones = 0;
    for (std::size_t j = 0; j < c; ++j) {
      const double y = labels(r, j);
      if (y == 1.0) {
        ++ones;
        truth[k] = j;
      } else if (y != 0.0) {
        ones = 2;
      }
    }
    if (ones != 1)
      throw PreconditionError("softmax_cross_entropy: label row " + std::to_string(r) +
                              " is not one-hot");
    double mx = z(r, 0);
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, z(r, j));
    double denom = 0.0;
    for (std::size_t j = 0; j < c; ++j) denom += std::exp(z(r, j) - mx);
    const double log_denom = std::log(denom);
    for (std::size_t j = 0; j < c; ++j) probs(k, j) = std::exp(z(r, j) - mx - log_denom);
    loss -= z(r, truth[k]) - mx - log_denom;
  }
  loss /= static_cast<double>(mask.size());

  return Access::result(
      "softmax_cross_entropy", Matrix(1, 1, loss), {logits},
      [&nl, probs = std::move(probs), truth = std::move(truth), mask](const Matrix& g) {
        Matrix d(nl.value.rows(), nl.value.cols());
        const double scale = g(0, 0) / static_cast<double>(mask.size());
        for (std::size_t k = 0; k < mask.size(); ++k) {
          for (std::size_t j = 0; j < d.cols(); ++j) {
            const double y = j == truth[k] ? 1.0 : 0.0;
            d(mask[k], j) += scale * (probs(k, j) - y);
          }
        }
        accumulate(nl, d);
      });
}

Tensor dropout(const Tensor& x, double rate, Rng& rng, bool training) {
  if (!(rate >= 0.0 && rate < 1.0)) throw PreconditionError("dropout: rate must be in [0, 1)");
  if (!training || rate == 0.0) return x;
  Node& nx = Access::node(x);
  const double keep_scale = 1.0 / (1.0 - rate);
  // A constant input never needs the mask.
  Matrix mask = nx.requires_grad ? Matrix(nx.value.rows(), nx.value.cols()) : Matrix();
  Matrix value = nx.value;
  for (std::size_t i = 0; i < value.size(); ++i) {
    double& v = value.data()[i];
    if (v == 0.0) continue;
    const double m = uniform01(rng) >= rate ? keep_scale : 0.0;
    if (nx.requires_grad) mask.data()[i] = m;
    v *= m;
  }
  return Access::result("dropout", std::move(value), {x},
                        [&nx, mask = std::move(mask)](const Matrix& g) {
                          Matrix d = g;
                          for (std::size_t i = 0; i < d.size(); ++i) d.data()[i] *= mask.data()[i];
                          accumulate(nx, d);
                        });
}

SparseMatrix dropout(const SparseMatrix& m, double rate, Rng& rng, bool training) {
  if (!(rate >= 0.0 && rate < 1.0)) throw PreconditionError("dropout: rate must be in [0, 1)");
  if (!training || rate == 0.0) return m;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<std::size_t> row_ptr{0}, cols;
  std::vector<double> vals;
  row_ptr.reserve(m.rows() + 1);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto c = m.row_columns(r);
    const auto v = m.row_values(r);
    for (std::size_t k = 0; k < c.size(); ++k) {
      if (uniform01(rng) < rate) continue;
      cols.push_back(c[k]);
      vals.push_back(v[k] * keep_scale);
    }
    row_ptr.push_back(cols.size());
  }
  return SparseMatrix::from_csr(m.rows(), m.cols(), std::move(row_ptr), std::move(cols),
                                std::move(vals));
}

void backward(const Tensor& loss) {
  Node& root = Access::node(loss);
  if (root.value.rows() != 1 || root.value.cols() != 1)
    throw ShapeError("backward: loss must be 1x1, got " + dims(root.value));
  if (!root.requires_grad) return;

  // Iterative depth-first post-order; reversing it gives a topological order
  // in which every node is processed after all of its consumers.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{&root, 0}};
  seen.insert(&root);
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  accumulate(root, Matrix(1, 1, 1.0));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->has_grad) n->backward(n->grad);
  }
  for (Node* n : order) {
    n->backward = nullptr;
    n->parents.clear();
  }
}

Tensor glorot_init(std::size_t rows, std::size_t cols, Rng& rng) {
  if (rows == 0 || cols == 0) throw PreconditionError("glorot_init: dimensions must be positive");
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix w(rows, cols);
  for (double& v : w.data()) v = limit * (2.0 * uniform01(rng) - 1.0);
  return Tensor::parameter(std::move(w));
}

AdamState::AdamState(const std::vector<Tensor>& params, AdamOptions opts,
                     std::vector<double> decay)
    : options(opts), weight_decay(std::move(decay)) {
  if (weight_decay.empty()) weight_decay.assign(params.size(), 0.0);
  if (weight_decay.size() != params.size())
    throw ShapeError("AdamState: weight_decay has " + std::to_string(weight_decay.size()) +
                     " entries for " + std::to_string(params.size()) + " parameters");
  for (const auto& p : params) {
    m.emplace_back(p.rows(), p.cols());
    v.emplace_back(p.rows(), p.cols());
  }
}

void adam_step(const std::vector<Tensor>& params, AdamState& state) {
  if (params.size() != state.m.size()) throw ShapeError("adam_step: parameter count changed");
  ++state.step;
  const auto& o = state.options;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(o.beta1, t);
  const double c2 = 1.0 - std::pow(o.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i];
    Matrix& w = p.mutable_value();
    Matrix& m = state.m[i];
    Matrix& v = state.v[i];
    if (w.rows() != m.rows() || w.cols() != m.cols())
      throw ShapeError("adam_step: parameter " + std::to_string(i) + " changed shape");
    const double* g = p.has_grad() ? p.grad().data().data() : nullptr;
    const double wd = state.weight_decay[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = (g ? g[k] : 0.0) + wd * w.data()[k];
      m.data()[k] = o.beta1 * m.data()[k] + (1.0 - o.beta1) * gk;
      v.data()[k] = o.beta2 * v.data()[k] + (1.0 - o.beta2) * gk * gk;
      const double m_hat = m.data()[k] / c1;
      const double v_hat = v.data()[k] / c2;
      w.data()[k] -= o.lr * m_hat / (std::sqrt(v_hat) + o.epsilon);
    }
  }
}

double l2_penalty(const std::vector<Tensor>& params, const AdamState& state) {
  double total = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.weight_decay[i] == 0.0) continue;
    double sq = 0.0;
    for (double v : params[i].value().data()) sq += v * v;
    total += 0.5 * state.weight_decay[i] * sq;
  }
  return total;
}

GradNormProbe grad_norm_probe(const std::vector<Tensor>& layer_outputs) {
  GradNormProbe probe;
  for (std::size_t k = 0; k < layer_outputs.size(); ++k) {
    if (!layer_outputs[k].has_grad())
      throw PreconditionError("grad_norm_probe: layer " + std::to_string(k + 1) +
                              " has no gradient");
    probe.norms.push_back(frobenius_norm(layer_outputs[k].grad()));
  }
  for (std::size_t k = 0; k + 1 < probe.norms.size(); ++k) {
    if (probe.norms[k + 1] > 1e-30) {
      const double r = probe.norms[k] / probe.norms[k + 1];
      probe.ratios.emplace_back(r);
      const double dev = std::abs(r - 1.0);
      probe.delta_hat = probe.delta_hat ? std::max(*probe.delta_hat, dev) : dev;
    } else {
      probe.ratios.emplace_back(std::nullopt);
    }
  }
  return probe;
}

}  // namespace gresnet::ad
