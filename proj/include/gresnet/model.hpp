#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "gresnet/autodiff.hpp"
#include "gresnet/dataset.hpp"
#include "gresnet/sparse_matrix.hpp"

namespace gresnet::nn {

enum class ResidualKind { none, naive, graph_naive, raw, graph_raw, lazy_naive };

/// "none", "naive", "graph-naive", "raw", "graph-raw", "lazy-naive".
std::string to_string(ResidualKind kind);
/// Accepts the names above with '-' or '_'. Throws PreconditionError.
ResidualKind parse_residual_kind(const std::string& text);

struct ModelConfig {
  int depth = 2;  // hidden layers + output layer
  std::size_t hidden = 16;
  ResidualKind residual = ResidualKind::none;
  bool bias = false;
  double dropout = 0.5;
  double lr = 0.01;
  double weight_decay = 5e-4;
  // Decay every weight matrix instead of the first layer's only.
  bool decay_all_layers = false;
  // Build the residual from the dropped-out layer input instead of the clean one.
  bool dropout_residual = false;
  int epochs = 200;
  std::uint64_t seed = 0;
  // Stop once validation loss exceeds the mean of the previous `patience`
  // epochs; 0 disables.
  int patience = 10;
  // Record a gradient-norm probe every this many epochs; 0 disables.
  int probe_every = 0;

  /// Throws PreconditionError on depth < 1, hidden < 1, dropout ∉ [0,1),
  /// negative epochs or patience.
  void validate() const;
};

enum class Activation { relu, sigmoid, none };

/// activation(Â · h · w [+ bias]). `Activation::none` leaves the softmax to
/// the loss.
ad::Tensor sgc_layer(const SparseMatrix& a_hat, const ad::Tensor& h, const ad::Tensor& w,
                     const ad::Tensor& bias, Activation activation);

/// Graph residual term of width `target_width`:
///   none → zeros, naive → h_prev, graph_naive → Â h_prev,
///   raw → X, graph_raw → Â X,
/// each followed by · w_adj when w_adj is defined. lazy_naive behaves like
/// naive. Throws PreconditionError when the source width differs from the
/// target and no w_adj is given, ShapeError when w_adj does not conform.
ad::Tensor residual_term(ResidualKind kind, const ad::Tensor& h_prev, const ad::Tensor& x,
                         const SparseMatrix& a_hat, const ad::Tensor& w_adj,
                         std::size_t target_width);

struct NamedParameter {
  std::string name;
  ad::Tensor tensor;
};

/// How forward() treats the first layer input. `automatic` takes the sparse
/// route for constant features with at most 25% nonzeros. Both routes give
/// bitwise identical results; sparse is just cheaper for bag-of-words input.
enum class InputPath { automatic, dense, sparse };

struct ForwardResult {
  ad::Tensor logits;
  /// x^(1..K): every hidden layer output followed by the logits.
  std::vector<ad::Tensor> layer_outputs;
};

class Model {
 public:
  /// Glorot-initialized weights, zero biases. Each parameter draws from its
  /// own stream derived from config.seed and its name, so adding a residual
  /// leaves the base weights unchanged.
  Model(ModelConfig config, std::size_t input_dim, std::size_t classes);

  const ModelConfig& config() const { return config_; }
  std::size_t input_dim() const { return input_dim_; }
  std::size_t classes() const { return classes_; }

  /// Stable order: W1..WK, b1..bK (if bias), then adjustment matrices.
  const std::vector<NamedParameter>& parameters() const { return params_; }
  std::vector<ad::Tensor> parameter_tensors() const;
  /// Per-parameter L2 coefficients matching parameters().
  std::vector<double> weight_decay_coefficients() const;
  /// Throws PreconditionError for an unknown name.
  ad::Tensor parameter(const std::string& name) const;

  /// Residual added inside the activation for the table kinds:
  ///   H^(k) = act(Â H^(k−1) W^(k) + R^(k)),
  /// the output layer skipping the activation. lazy_naive instead computes
  ///   H^(k) = sigmoid(Â H^(k−1) W^(k)) + R^(k).
  /// Dropout hits each layer input when training.
  ForwardResult forward(const SparseMatrix& a_hat, const ad::Tensor& x, Rng& rng, bool training,
                        InputPath path = InputPath::automatic) const;

 private:
  struct SparseInput;
  const SparseInput& sparse_input(const SparseMatrix& a_hat, const ad::Tensor& x) const;

  std::size_t in_width(int layer) const;   // 1-based
  std::size_t out_width(int layer) const;  // 1-based

  ModelConfig config_;
  std::size_t input_dim_;
  std::size_t classes_;
  std::vector<NamedParameter> params_;
  // Sparse copies of the last constant input, rebuilt when x or Â changes.
  mutable std::shared_ptr<SparseInput> sparse_cache_;
};

/// Fraction of `mask` rows whose argmax (lowest index on ties) matches the
/// one-hot label. Throws PreconditionError on an empty mask.
double evaluate(const Matrix& logits, const Matrix& labels, const std::vector<std::size_t>& mask);

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;  // training objective incl. L2; epoch 0 is the untrained model
  double val_loss = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
  double test_acc = 0.0;
};

struct ProbeSample {
  int epoch = 0;
  ad::GradNormProbe probe;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;  // epoch 0 first
  int best_epoch = 0;               // highest val accuracy, earliest on ties
  double best_val_acc = 0.0;
  double best_test_acc = 0.0;
  bool stopped_early = false;
  std::vector<ProbeSample> probes;
};

/// Full-batch Adam on the masked cross-entropy of data.train. Accuracies are
/// measured in inference mode after each update. Deterministic given
/// config.seed. Throws PreconditionError on an empty split and NumericError
/// when the loss becomes non-finite.
/// `model_out`, when given, receives the trained model.
TrainReport train(const ModelConfig& config, const data::Dataset& data, const SparseMatrix& a_hat,
                  Model* model_out = nullptr);

/// Depth-K chain of identity layers over a leaf, loss = sum of the last.
ad::GradNormProbe identity_chain_probe(int depth);

void save_checkpoint(const Model& model, const std::filesystem::path& path);
/// Throws DataError on a malformed file.
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace gresnet::nn
