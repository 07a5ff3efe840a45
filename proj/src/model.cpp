#include "gresnet/model.hpp"

#include <cmath>
#include <fstream>
#include <map>

#include "gresnet/error.hpp"
#include "json.hpp"

namespace gresnet::nn {

using ad::Tensor;

namespace {

const std::map<ResidualKind, std::string>& kind_names() {
  static const std::map<ResidualKind, std::string> names{
      {ResidualKind::none, "none"},           {ResidualKind::naive, "naive"},
      {ResidualKind::graph_naive, "graph-naive"}, {ResidualKind::raw, "raw"},
      {ResidualKind::graph_raw, "graph-raw"}, {ResidualKind::lazy_naive, "lazy-naive"}};
  return names;
}

bool is_raw(ResidualKind k) { return k == ResidualKind::raw || k == ResidualKind::graph_raw; }

}  // namespace

std::string to_string(ResidualKind kind) { return kind_names().at(kind); }

ResidualKind parse_residual_kind(const std::string& text) {
  std::string t = text;
  for (char& c : t)
    if (c == '_') c = '-';
  for (const auto& [k, name] : kind_names())
    if (name == t) return k;
  throw PreconditionError("unknown residual kind '" + text + "'");
}

void ModelConfig::validate() const {
  if (depth < 1) throw PreconditionError("depth must be at least 1");
  if (hidden < 1) throw PreconditionError("hidden width must be at least 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw PreconditionError("dropout must be in [0, 1)");
  if (epochs < 0) throw PreconditionError("epochs must be non-negative");
  if (patience < 0) throw PreconditionError("patience must be non-negative");
  if (probe_every < 0) throw PreconditionError("probe interval must be non-negative");
  if (!(lr > 0.0)) throw PreconditionError("learning rate must be positive");
  if (!(weight_decay >= 0.0)) throw PreconditionError("weight decay must be non-negative");
}

Tensor sgc_layer(const SparseMatrix& a_hat, const Tensor& h, const Tensor& w, const Tensor& bias,
                 Activation activation) {
  Tensor t = ad::spmm_ad(a_hat, ad::matmul(h, w));
  if (bias.defined()) t = ad::add_bias_row(t, bias);
  switch (activation) {
    case Activation::relu: return ad::relu(t);
    case Activation::sigmoid: return ad::sigmoid(t);
    case Activation::none: return t;
  }
  return t;
}

Tensor residual_term(ResidualKind kind, const Tensor& h_prev, const Tensor& x,
                     const SparseMatrix& a_hat, const Tensor& w_adj, std::size_t target_width) {
  Tensor source;
  switch (kind) {
    case ResidualKind::none:
      return Tensor::constant(Matrix(h_prev.rows(), target_width));
    case ResidualKind::naive:
    case ResidualKind::lazy_naive: source = h_prev; break;
    case ResidualKind::graph_naive: source = ad::spmm_ad(a_hat, h_prev); break;
    case ResidualKind::raw: source = x; break;
    case ResidualKind::graph_raw: source = ad::spmm_ad(a_hat, x); break;
  }
  if (w_adj.defined()) {
    if (w_adj.rows() != source.cols() || w_adj.cols() != target_width)
      throw ShapeError("residual_term: adjustment matrix " + std::to_string(w_adj.rows()) + "x" +
                       std::to_string(w_adj.cols()) + " does not map width " +
                       std::to_string(source.cols()) + " to " + std::to_string(target_width));
    return ad::matmul(source, w_adj);
  }
  if (source.cols() != target_width)
    throw PreconditionError("residual_term: width " + std::to_string(source.cols()) +
                            " differs from target " + std::to_string(target_width) +
                            " and no adjustment matrix was given");
  return source;
}

Model::Model(ModelConfig config, std::size_t input_dim, std::size_t classes)
    : config_(std::move(config)), input_dim_(input_dim), classes_(classes) {
  config_.validate();
  if (input_dim == 0 || classes == 0)
    throw PreconditionError("model needs at least one feature and one class");
  const int k = config_.depth;
  auto glorot = [&](const std::string& name, std::size_t r, std::size_t c) {
    Rng rng = make_rng(config_.seed, "init/" + name);
    params_.push_back({name, ad::glorot_init(r, c, rng)});
  };
  for (int l = 1; l <= k; ++l) glorot("W" + std::to_string(l), in_width(l), out_width(l));
  if (config_.bias)
    for (int l = 1; l <= k; ++l)
      params_.push_back({"b" + std::to_string(l), Tensor::parameter(Matrix(1, out_width(l)))});

  const ResidualKind kind = config_.residual;
  if (is_raw(kind)) {
    // One adjustment per distinct target width, shared by every layer of that width.
    if (k > 1 && input_dim_ != config_.hidden) glorot("Wadj_hidden", input_dim_, config_.hidden);
    if (input_dim_ != classes_) glorot("Wadj_out", input_dim_, classes_);
  } else if (kind != ResidualKind::none) {
    for (int l = 1; l <= k; ++l)
      if (in_width(l) != out_width(l))
        glorot("Wadj" + std::to_string(l), in_width(l), out_width(l));
  }
}

std::size_t Model::in_width(int layer) const { return layer == 1 ? input_dim_ : config_.hidden; }
std::size_t Model::out_width(int layer) const {
  return layer == config_.depth ? classes_ : config_.hidden;
}

std::vector<Tensor> Model::parameter_tensors() const {
  std::vector<Tensor> out;
  for (const auto& p : params_) out.push_back(p.tensor);
  return out;
}

std::vector<double> Model::weight_decay_coefficients() const {
  std::vector<double> out;
  for (const auto& p : params_) {
    const bool weight = p.name[0] == 'W';
    const bool decayed = config_.decay_all_layers ? weight : p.name == "W1";
    out.push_back(decayed ? config_.weight_decay : 0.0);
  }
  return out;
}

Tensor Model::parameter(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return p.tensor;
  throw PreconditionError("model has no parameter '" + name + "'");
}

struct Model::SparseInput {
  Tensor x;  // holds the node so its id cannot be reused
  SparseMatrix a_hat;
  std::shared_ptr<const SparseMatrix> features;
  std::shared_ptr<const SparseMatrix> propagated;  // Â X, built on demand
};

const Model::SparseInput& Model::sparse_input(const SparseMatrix& a_hat, const Tensor& x) const {
  auto& c = sparse_cache_;
  if (!c || c->x.id() != x.id() || !(c->a_hat == a_hat)) {
    auto fresh = std::make_shared<SparseInput>();
    fresh->x = x;
    fresh->a_hat = a_hat;
    fresh->features = std::make_shared<const SparseMatrix>(SparseMatrix::from_dense(x.value()));
    c = std::move(fresh);
  }
  return *c;
}

namespace {

bool mostly_zero(const Matrix& m) {
  std::size_t nz = 0;
  for (std::size_t i = 0; i < m.size(); ++i) nz += m.data()[i] != 0.0;
  return 4 * nz <= m.size();
}

}  // namespace

ForwardResult Model::forward(const SparseMatrix& a_hat, const Tensor& x, Rng& rng, bool training,
                             InputPath path) const {
  if (x.rows() != a_hat.rows() || x.cols() != input_dim_)
    throw ShapeError("forward: features " + std::to_string(x.rows()) + "x" +
                     std::to_string(x.cols()) + " do not fit the model/graph");
  auto find = [&](const std::string& name) {
    for (const auto& p : params_)
      if (p.name == name) return p.tensor;
    return Tensor();
  };

  bool sparse = false;
  if (path != InputPath::dense && !x.requires_grad()) {
    if (path == InputPath::sparse) sparse = true;
    else if (sparse_cache_ && sparse_cache_->x.id() == x.id()) sparse = true;
    else sparse = mostly_zero(x.value());
  }

  const ResidualKind kind = config_.residual;
  const int k_max = config_.depth;
  ForwardResult out;
  Tensor h = x;
  Tensor raw_source = x;
  Tensor raw_hidden, raw_out;  // shared raw residuals, built on first use

  // Sparse route: layer 1 and every residual that reads X go through CSR
  // copies. spmm walks each row in the same order as the zero-skipping dense
  // matmul, so the arithmetic is unchanged.
  std::shared_ptr<const SparseMatrix> xs, xs_in;
  if (sparse) {
    xs = sparse_input(a_hat, x).features;
    xs_in = std::make_shared<const SparseMatrix>(ad::dropout(*xs, config_.dropout, rng, training));
  }
  std::shared_ptr<const SparseMatrix> propagated_in;
  auto sparse_source = [&](bool graph) {
    const bool dropped = config_.dropout_residual;
    if (!graph) return dropped ? xs_in : xs;
    if (dropped) {
      if (!propagated_in)
        propagated_in = std::make_shared<const SparseMatrix>(
            SparseMatrix::from_dense(spmm(a_hat, xs_in->to_dense())));
      return propagated_in;
    }
    auto& cached = sparse_cache_->propagated;
    if (!cached)
      cached = std::make_shared<const SparseMatrix>(
          SparseMatrix::from_dense(spmm(a_hat, x.value())));
    return cached;
  };
  auto sparse_residual = [&](bool graph, const Tensor& w_adj, std::size_t width) {
    const auto src = sparse_source(graph);
    if (w_adj.defined()) {
      if (w_adj.rows() != src->cols() || w_adj.cols() != width)
        throw ShapeError("forward: adjustment matrix does not conform");
      return ad::spmm_ad(src, w_adj);
    }
    if (src->cols() != width)
      throw PreconditionError("forward: residual width differs and no adjustment matrix");
    return Tensor::constant(src->to_dense());
  };

  for (int k = 1; k <= k_max; ++k) {
    const bool last = k == k_max;
    const std::size_t width = out_width(k);
    const Tensor w = find("W" + std::to_string(k));
    const Tensor b = config_.bias ? find("b" + std::to_string(k)) : Tensor();
    Tensor h_in, t;
    if (sparse && k == 1) {
      t = ad::spmm_ad(a_hat, ad::spmm_ad(xs_in, w));
      if (b.defined()) t = ad::add_bias_row(t, b);
    } else {
      h_in = ad::dropout(h, config_.dropout, rng, training);
      if (k == 1 && config_.dropout_residual) raw_source = h_in;
      t = sgc_layer(a_hat, h_in, w, b, Activation::none);
    }
    if (kind == ResidualKind::none) {
      h = last ? t : ad::relu(t);
      out.layer_outputs.push_back(h);
      continue;
    }

    Tensor r;
    if (is_raw(kind)) {
      Tensor& cached = last ? raw_out : raw_hidden;
      const Tensor w_adj = find(last ? "Wadj_out" : "Wadj_hidden");
      if (!cached.defined())
        cached = sparse ? sparse_residual(kind == ResidualKind::graph_raw, w_adj, width)
                        : residual_term(kind, h, raw_source, a_hat, w_adj, width);
      r = cached;
    } else if (sparse && k == 1) {
      r = sparse_residual(kind == ResidualKind::graph_naive, find("Wadj1"), width);
    } else {
      r = residual_term(kind, config_.dropout_residual ? h_in : h, x, a_hat,
                        find("Wadj" + std::to_string(k)), width);
    }

    if (kind == ResidualKind::lazy_naive && !last) {
      h = ad::add(ad::sigmoid(t), r);
    } else {
      const Tensor pre = ad::add(t, r);
      h = last ? pre : ad::relu(pre);
    }
    out.layer_outputs.push_back(h);
  }
  out.logits = h;
  return out;
}

double evaluate(const Matrix& logits, const Matrix& labels, const std::vector<std::size_t>& mask) {
  if (mask.empty()) throw PreconditionError("evaluate: empty mask");
  if (logits.rows() != labels.rows() || logits.cols() != labels.cols())
    throw ShapeError("evaluate: logits and labels differ in shape");
  std::size_t correct = 0;
  for (std::size_t r : mask) {
    if (r >= logits.rows()) throw ShapeError("evaluate: mask row out of range");
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.cols(); ++c)
      if (logits(r, c) > logits(r, best)) best = c;
    if (labels(r, best) == 1.0) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(mask.size());
}

namespace {

double mean_loss(const Tensor& logits, const Matrix& labels, const std::vector<std::size_t>& mask) {
  return ad::softmax_cross_entropy(logits, labels, mask).value()(0, 0);
}

}  // namespace

TrainReport train(const ModelConfig& config, const data::Dataset& data, const SparseMatrix& a_hat,
                  Model* model_out) {
  config.validate();
  if (data.train.empty() || data.val.empty() || data.test.empty())
    throw PreconditionError("train: train, validation and test splits must be non-empty");

  Model model(config, data.feature_count(), data.class_count());
  const std::vector<Tensor> params = model.parameter_tensors();
  ad::AdamState adam(params, ad::AdamOptions{.lr = config.lr}, model.weight_decay_coefficients());
  const Tensor x = Tensor::constant(data.features);
  Rng dropout_rng = make_rng(config.seed, "dropout");
  Rng unused = make_rng(config.seed, "inference");

  TrainReport report;
  auto record = [&](int epoch, double loss) {
    const Matrix logits = model.forward(a_hat, x, unused, false).logits.value();
    const Tensor lt = Tensor::constant(logits);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = loss;
    rec.val_loss = mean_loss(lt, data.labels, data.val) + ad::l2_penalty(params, adam);
    rec.train_acc = evaluate(logits, data.labels, data.train);
    rec.val_acc = evaluate(logits, data.labels, data.val);
    rec.test_acc = evaluate(logits, data.labels, data.test);
    if (report.epochs.empty() || rec.val_acc > report.best_val_acc) {
      report.best_epoch = epoch;
      report.best_val_acc = rec.val_acc;
      report.best_test_acc = rec.test_acc;
    }
    report.epochs.push_back(rec);
    return rec;
  };

  {
    const Tensor logits = model.forward(a_hat, x, unused, false).logits;
    record(0, mean_loss(logits, data.labels, data.train) + ad::l2_penalty(params, adam));
  }

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    for (Tensor p : params) p.zero_grad();
    const ForwardResult fr = model.forward(a_hat, x, dropout_rng, true);
    const Tensor loss = ad::softmax_cross_entropy(fr.logits, data.labels, data.train);
    const double objective = loss.value()(0, 0) + ad::l2_penalty(params, adam);
    if (!std::isfinite(objective)) {
      std::string msg = "non-finite loss at epoch " + std::to_string(epoch);
      if (!report.probes.empty() && report.probes.back().probe.delta_hat)
        msg += "; last probe (epoch " + std::to_string(report.probes.back().epoch) +
               ") delta_hat " + std::to_string(*report.probes.back().probe.delta_hat);
      throw NumericError(msg);
    }
    ad::backward(loss);
    if (config.probe_every > 0 && epoch % config.probe_every == 0)
      report.probes.push_back({epoch, ad::grad_norm_probe(fr.layer_outputs)});
    ad::adam_step(params, adam);
    record(epoch, objective);

    const int p = config.patience;
    if (p > 0 && epoch > p) {
      double mean = 0.0;
      const auto n = report.epochs.size();
      for (std::size_t i = n - 1 - static_cast<std::size_t>(p); i < n - 1; ++i)
        mean += report.epochs[i].val_loss;
      mean /= p;
      if (report.epochs.back().val_loss > mean) {
        report.stopped_early = true;
        break;
      }
    }
  }
  if (model_out) *model_out = model;
  return report;
}

ad::GradNormProbe identity_chain_probe(int depth) {
  if (depth < 1) throw PreconditionError("identity chain needs depth >= 1");
  std::vector<Tensor> chain{Tensor::parameter(Matrix(4, 3, 0.5))};
  for (int k = 1; k < depth; ++k) chain.push_back(ad::identity(chain.back()));
  ad::backward(ad::sum(chain.back()));
  return ad::grad_norm_probe(chain);
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  const ModelConfig& c = model.config();
  nlohmann::json j;
  j["config"] = {{"depth", c.depth},
                 {"hidden", c.hidden},
                 {"residual", to_string(c.residual)},
                 {"bias", c.bias},
                 {"dropout", c.dropout},
                 {"lr", c.lr},
                 {"weight_decay", c.weight_decay},
                 {"decay_all_layers", c.decay_all_layers},
                 {"dropout_residual", c.dropout_residual},
                 {"epochs", c.epochs},
                 {"seed", c.seed},
                 {"patience", c.patience},
                 {"probe_every", c.probe_every}};
  j["input_dim"] = model.input_dim();
  j["classes"] = model.classes();
  for (const auto& p : model.parameters()) {
    const Matrix& m = p.tensor.value();
    j["parameters"].push_back(
        {{"name", p.name}, {"rows", m.rows()}, {"cols", m.cols()}, {"values", m.data()}});
  }
  std::ofstream out(path);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out << j.dump() << '\n';
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  try {
    const nlohmann::json j = nlohmann::json::parse(in);
    const auto& jc = j.at("config");
    ModelConfig c;
    c.depth = jc.at("depth").get<int>();
    c.hidden = jc.at("hidden").get<std::size_t>();
    c.residual = parse_residual_kind(jc.at("residual").get<std::string>());
    c.bias = jc.at("bias").get<bool>();
    c.dropout = jc.at("dropout").get<double>();
    c.lr = jc.at("lr").get<double>();
    c.weight_decay = jc.at("weight_decay").get<double>();
    c.decay_all_layers = jc.at("decay_all_layers").get<bool>();
    c.dropout_residual = jc.at("dropout_residual").get<bool>();
    c.epochs = jc.at("epochs").get<int>();
    c.seed = jc.at("seed").get<std::uint64_t>();
    c.patience = jc.at("patience").get<int>();
    c.probe_every = jc.at("probe_every").get<int>();
    Model model(c, j.at("input_dim").get<std::size_t>(), j.at("classes").get<std::size_t>());
    const auto& jp = j.at("parameters");
    if (jp.size() != model.parameters().size())
      throw DataError("checkpoint parameter count does not match its config");
    for (const auto& e : jp) {
      Tensor t = model.parameter(e.at("name").get<std::string>());
      const auto rows = e.at("rows").get<std::size_t>();
      const auto cols = e.at("cols").get<std::size_t>();
      auto values = e.at("values").get<std::vector<double>>();
      if (rows != t.rows() || cols != t.cols() || values.size() != rows * cols)
        throw DataError("checkpoint parameter '" + e.at("name").get<std::string>() +
                        "' has the wrong shape");
      t.mutable_value() = Matrix(rows, cols, std::move(values));
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed checkpoint " + path.string() + ": " + e.what());
  } catch (const PreconditionError& e) {
    throw DataError("malformed checkpoint " + path.string() + ": " + e.what());
  }
}

}  // namespace gresnet::nn
