#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "gresnet/matrix.hpp"
#include "gresnet/rng.hpp"
#include "gresnet/sparse_matrix.hpp"

namespace gresnet::ad {

namespace detail {
struct Node;
struct Access;
}

// Handle to a node of the recording graph. Copies share the node, so a
// parameter held by a model and the same parameter seen inside a forward pass
// are one object.
class Tensor {
 public:
  Tensor() = default;

  /// A leaf that never receives a gradient (inputs, labels, fixed operators).
  static Tensor constant(Matrix value);
  /// A trainable leaf.
  static Tensor parameter(Matrix value);

  bool defined() const { return node_ != nullptr; }
  std::size_t rows() const;
  std::size_t cols() const;

  const Matrix& value() const;
  /// Mutable access for optimizers and checkpoint loading; do not use while a
  /// graph that reads this tensor is still waiting for backward.
  Matrix& mutable_value();

  bool requires_grad() const;
  bool has_grad() const;
  /// Throws PreconditionError when no gradient has been accumulated.
  const Matrix& grad() const;
  void zero_grad();

  /// Name of the producing operation, or "leaf".
  const std::string& op() const;
  bool is_leaf() const;

  /// Node identity, used by tests to check sharing.
  const void* id() const { return node_.get(); }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;

  friend struct detail::Access;
};

Tensor matmul(const Tensor& a, const Tensor& b);
/// m · x with m constant: no gradient flows into graph structure.
Tensor spmm_ad(const SparseMatrix& m, const Tensor& x);
/// Same product; the result owns `m` until backward has consumed it.
Tensor spmm_ad(std::shared_ptr<const SparseMatrix> m, const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
/// a plus a 1 × cols bias broadcast over every row.
Tensor add_bias_row(const Tensor& a, const Tensor& bias);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
/// Passes values and gradients through unchanged; the building block of the
/// identity-chain debug network.
Tensor identity(const Tensor& x);
/// Scalar sum of all entries (1 × 1).
Tensor sum(const Tensor& x);

/// Mean over `mask` rows of −log softmax(logits)[true class]. `labels` rows
/// must be one-hot. Throws PreconditionError on an empty mask or a label row
/// that is not one-hot, ShapeError on mismatched shapes or out-of-range rows.
Tensor softmax_cross_entropy(const Tensor& logits, const Matrix& labels,
                             const std::vector<std::size_t>& mask);

/// Inverted dropout. Entries that are already zero stay zero without
/// consuming randomness, so sparse inputs are cheap; every nonzero entry is
/// kept with probability 1 − rate and scaled by 1/(1 − rate).
/// Throws PreconditionError unless rate ∈ [0, 1).
Tensor dropout(const Tensor& x, double rate, Rng& rng, bool training);
/// Dropout on a constant sparse matrix. Draws from `rng` exactly as dropout()
/// would on its dense form; dropped entries leave the structure.
SparseMatrix dropout(const SparseMatrix& m, double rate, Rng& rng, bool training);

/// Reverse pass from a 1 × 1 tensor. Gradients accumulate (+=) into every
/// node that requires one, visiting nodes in reverse topological order of a
/// depth-first post-order from `loss`, parents in argument order. Afterwards
/// the recording is released: intermediate tensors keep value and grad but
/// can no longer be differentiated through.
/// Throws ShapeError for a non-scalar loss.
void backward(const Tensor& loss);

/// Uniform on ±sqrt(6 / (rows + cols)). Throws PreconditionError on a zero
/// dimension.
Tensor glorot_init(std::size_t rows, std::size_t cols, Rng& rng);

struct AdamOptions {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamOptions options;
  /// Per-parameter L2 coefficient; the optimizer adds weight_decay[i] · W to
  /// the loss gradient before the moment update.
  std::vector<double> weight_decay;
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  long step = 0;

  AdamState(const std::vector<Tensor>& params, AdamOptions options,
            std::vector<double> weight_decay = {});
};

/// One bias-corrected Adam update. Parameters without a gradient are treated
/// as having a zero gradient. Throws ShapeError if `state` does not match.
void adam_step(const std::vector<Tensor>& params, AdamState& state);

/// ½ Σ_i weight_decay[i] ‖W_i‖², the loss term whose gradient adam_step adds.
double l2_penalty(const std::vector<Tensor>& params, const AdamState& state);

struct GradNormProbe {
  /// ‖∂ℓ/∂x^(k)‖₂ for k = 1..K, in the order given.
  std::vector<double> norms;
  /// ratios[k] = norms[k] / norms[k + 1]; absent when the denominator ≤ 1e-30.
  std::vector<std::optional<double>> ratios;
  /// max |r − 1| over defined ratios; absent when there are none.
  std::optional<double> delta_hat;
};

/// Throws PreconditionError when a listed tensor has no gradient.
GradNormProbe grad_norm_probe(const std::vector<Tensor>& layer_outputs);

}  // namespace gresnet::ad
