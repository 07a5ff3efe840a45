#include "gresnet/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "gresnet/dataset.hpp"
#include "gresnet/error.hpp"
#include "json.hpp"

namespace gresnet::cli {

using nlohmann::json;

namespace {

// Largest n for which the limit command feeds every one-hot column; above
// it an evenly spaced subset keeps the dense iterate in memory.
constexpr std::size_t kMaxOneHotColumns = 4096;

std::string num(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

struct Loaded {
  Graph graph{1, {}};
  Matrix features;
  std::optional<data::Dataset> labeled;
};

Loaded load(const ExperimentSpec& spec) {
  const std::string& name = spec.dataset;
  if (name.empty()) throw PreconditionError("--dataset is required");
  Loaded l;
  if (name.rfind("edgelist:", 0) == 0) {
    LabeledGraph lg = read_edge_list(name.substr(9));
    l.features = Matrix::identity(lg.graph.node_count());
    l.graph = std::move(lg.graph);
    return l;
  }
  data::Dataset d;
  if (name.rfind("synthetic", 0) == 0) {
    data::SyntheticOptions o;
    std::vector<std::uint64_t> parts;
    std::stringstream ss(name);
    std::string piece;
    std::getline(ss, piece, ':');
    while (std::getline(ss, piece, ':')) {
      std::uint64_t v = 0;
      const auto [p, ec] = std::from_chars(piece.data(), piece.data() + piece.size(), v);
      if (ec != std::errc() || p != piece.data() + piece.size())
        throw PreconditionError("bad synthetic dataset spec '" + name + "'");
      parts.push_back(v);
    }
    if (parts.size() > 0) o.seed = parts[0];
    if (parts.size() > 1) o.nodes = parts[1];
    if (parts.size() > 2) o.classes = parts[2];
    if (parts.size() > 3) o.features = parts[3];
    if (parts.size() > 1) {
      // Keep the split proportional for resized graphs.
      o.val_count = o.nodes / 5;
      o.test_count = o.nodes * 2 / 5;
      o.per_class_train = std::max<std::size_t>(1, o.nodes / (15 * o.classes));
    }
    d = data::synthetic_citation(o);
  } else {
    d = data::load_named(name, spec.data_dir, spec.split_seed);
  }
  l.graph = d.graph;
  l.features = d.features;
  l.labeled = std::move(d);
  return l;
}

const data::Dataset& require_labels(const Loaded& l, const std::string& name) {
  if (!l.labeled) throw DataError("dataset '" + name + "' has no labels to train on");
  return *l.labeled;
}

json config_json(const nn::ModelConfig& c) {
  return {{"layers", c.depth},
          {"hidden", c.hidden},
          {"residual", nn::to_string(c.residual)},
          {"bias", c.bias},
          {"dropout", c.dropout},
          {"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"decay_all_layers", c.decay_all_layers},
          {"dropout_residual", c.dropout_residual},
          {"epochs", c.epochs},
          {"patience", c.patience},
          {"seed", c.seed}};
}

json depth_json(const spectral::BoundDepth& b) {
  return b.is_infinite() ? json("inf") : json(*b.value);
}

void write_output(const ExperimentSpec& spec, const std::string& text, std::ostream& out) {
  if (spec.out == "-") {
    out << text;
    return;
  }
  std::ofstream f(spec.out, std::ios::binary);
  if (!f) throw DataError("cannot write " + spec.out);
  f << text;
}

std::string side_path(const ExperimentSpec& spec, const std::string& suffix) {
  return spec.out == "-" ? std::string() : spec.out + suffix;
}

std::vector<std::uint64_t> seeds_or_default(const ExperimentSpec& spec) {
  return spec.seeds.empty() ? std::vector<std::uint64_t>{spec.model.seed} : spec.seeds;
}

std::vector<nn::ResidualKind> residuals_or_default(const ExperimentSpec& spec) {
  return spec.residuals.empty() ? std::vector<nn::ResidualKind>{spec.model.residual}
                                : spec.residuals;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

void cmd_train(const ExperimentSpec& spec, std::ostream& out) {
  const Loaded l = load(spec);
  const data::Dataset& d = require_labels(l, spec.dataset);
  const SparseMatrix a = normalized_adjacency(d.graph);
  nn::Model model(spec.model, 1, 1);
  const nn::TrainReport r = nn::train(spec.model, d, a, &model);
  if (!spec.checkpoint.empty()) nn::save_checkpoint(model, spec.checkpoint);

  std::ostringstream s;
  if (spec.format == Format::json) {
    json j{{"dataset", spec.dataset},
           {"config", config_json(spec.model)},
           {"best_epoch", r.best_epoch},
           {"best_val_acc", r.best_val_acc},
           {"best_test_acc", r.best_test_acc},
           {"stopped_early", r.stopped_early},
           {"checkpoint", spec.checkpoint.empty() ? json(nullptr) : json(spec.checkpoint)}};
    j["epochs"] = json::array();
    for (const auto& e : r.epochs)
      j["epochs"].push_back({{"epoch", e.epoch},
                             {"loss", e.loss},
                             {"val_loss", e.val_loss},
                             {"train_acc", e.train_acc},
                             {"val_acc", e.val_acc},
                             {"test_acc", e.test_acc}});
    s << j.dump(2) << '\n';
  } else {
    s << "epoch,loss,val_loss,train_acc,val_acc,test_acc\n";
    for (const auto& e : r.epochs)
      s << e.epoch << ',' << num(e.loss) << ',' << num(e.val_loss) << ',' << num(e.train_acc)
        << ',' << num(e.val_acc) << ',' << num(e.test_acc) << '\n';
  }
  write_output(spec, s.str(), out);
}

void cmd_sweep(const ExperimentSpec& spec, std::ostream& out, std::ostream& err) {
  if (spec.depths.empty()) throw PreconditionError("sweep needs a non-empty --depths list");
  const Loaded l = load(spec);
  const data::Dataset& d = require_labels(l, spec.dataset);
  const SparseMatrix a = normalized_adjacency(d.graph);
  const auto seeds = seeds_or_default(spec);
  const auto residuals = residuals_or_default(spec);

  std::ostringstream s;
  json cells = json::array();
  if (spec.format == Format::csv) s << "depth,residual,seed,epoch,loss,train_acc,val_acc,test_acc\n";
  for (int depth : spec.depths) {
    for (auto kind : residuals) {
      std::vector<double> best_tests;
      for (auto seed : seeds) {
        nn::ModelConfig c = spec.model;
        c.depth = depth;
        c.residual = kind;
        c.seed = seed;
        const auto r = nn::train(c, d, a);
        double max_train = 0.0;
        for (const auto& e : r.epochs) {
          max_train = std::max(max_train, e.train_acc);
          if (spec.format == Format::csv)
            s << depth << ',' << nn::to_string(kind) << ',' << seed << ',' << e.epoch << ','
              << num(e.loss) << ',' << num(e.train_acc) << ',' << num(e.val_acc) << ','
              << num(e.test_acc) << '\n';
        }
        best_tests.push_back(r.best_test_acc);
        cells.push_back({{"depth", depth},
                         {"residual", nn::to_string(kind)},
                         {"seed", seed},
                         {"best_epoch", r.best_epoch},
                         {"best_val_acc", r.best_val_acc},
                         {"best_test_acc", r.best_test_acc},
                         {"max_train_acc", max_train},
                         {"final_train_acc", r.epochs.back().train_acc}});
      }
      double mean = 0.0;
      for (double t : best_tests) mean += t;
      mean /= static_cast<double>(best_tests.size());
      err << "depth " << depth << " residual " << nn::to_string(kind)
          << ": mean best-validation test accuracy " << num(mean) << " over " << seeds.size()
          << " seed(s)\n";
    }
  }
  if (spec.format == Format::json) s << json{{"cells", cells}}.dump(2) << '\n';
  write_output(spec, s.str(), out);
}

struct LimitInput {
  Graph graph{1, {}};
  Matrix x;
};

LimitInput limit_input(const ExperimentSpec& spec) {
  Loaded l = load(spec);
  LimitInput in{l.graph, {}};
  Matrix features = std::move(l.features);
  if (spec.largest_component) {
    const auto keep = largest_component(l.graph);
    in.graph = induced_subgraph(l.graph, keep);
    Matrix sub(keep.size(), features.cols());
    for (std::size_t i = 0; i < keep.size(); ++i)
      std::copy(features.row(keep[i]).begin(), features.row(keep[i]).end(), sub.row(i).begin());
    features = std::move(sub);
  }
  const std::size_t n = in.graph.node_count();
  if (spec.feature_input) {
    // Drop all-zero columns: they carry no distribution to converge.
    const Matrix cn = data::column_normalize(features);
    std::vector<std::size_t> keep;
    for (std::size_t c = 0; c < cn.cols(); ++c) {
      double s = 0.0;
      for (std::size_t r = 0; r < n; ++r) s += cn(r, c);
      if (s > 0.0) keep.push_back(c);
    }
    in.x = Matrix(n, keep.size());
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t k = 0; k < keep.size(); ++k) in.x(r, k) = cn(r, keep[k]);
  } else {
    const std::size_t m = std::min(n, kMaxOneHotColumns);
    in.x = Matrix(n, m);
    for (std::size_t k = 0; k < m; ++k) in.x(k * n / m, k) = 1.0;
  }
  return in;
}

json limit_json(const spectral::LimitReport& r, const spectral::SpectrumSummary& lazy,
                const spectral::BoundDepth& lazy_bound, double pi_max, bool self_loops,
                std::size_t columns) {
  json j{{"n", r.n},
         {"edge_count", r.edge_count},
         {"operator_kind", spectral::to_string(r.operator_kind)},
         {"self_loops", self_loops},
         {"lambda1", r.spectrum.lambda1},
         {"lambda2", r.spectrum.lambda2},
         {"lambda_n", r.spectrum.lambda_n},
         {"lambda_max", r.spectrum.lambda_max},
         {"pi_min", r.pi_min},
         {"pi_max", pi_max},
         {"epsilon", r.epsilon},
         {"bound_depth", depth_json(r.bound_depth)},
         {"lazy_lambda2", lazy.lambda2},
         {"lazy_bound_depth", depth_json(lazy_bound)},
         {"input_columns", columns},
         {"warning", r.warning ? json(*r.warning) : json(nullptr)}};
  return j;
}

void cmd_limit(const ExperimentSpec& spec, std::ostream& out, bool empirical) {
  const LimitInput in = limit_input(spec);
  spectral::LimitOptions o;
  o.kind = spec.op;
  o.self_loops = spec.self_loops;
  o.epsilon = spec.epsilon;
  o.max_iter = empirical ? spec.max_iter : 0;
  const spectral::LimitReport r = empirical ? spectral::analyze_limit(in.graph, in.x, o)
                                            : spectral::analyze_limit(in.graph, Matrix(), o);

  const auto lazy = spectral::eigen_extremes(lazy_walk_matrix(normalized_adjacency(in.graph)));
  const auto uniform =
      spectral::StationaryDistribution{std::vector<double>(in.graph.node_count(),
                                                           1.0 / static_cast<double>(in.graph.node_count()))};
  const auto lazy_bound = spectral::lazy_limit_bound(lazy, uniform, spec.epsilon);
  const auto pi = spec.op == spectral::OperatorKind::random_walk
                      ? spectral::degree_distribution(in.graph, spec.self_loops)
                      : uniform;
  json j = limit_json(r, lazy, lazy_bound, pi.max(), spec.self_loops, in.x.cols());
  if (empirical)
    j["empirical_depth"] = r.empirical_depth.reached() ? json(*r.empirical_depth.value)
                                                       : json(nullptr);
  write_output(spec, j.dump(2) + "\n", out);
}

void cmd_probe(const ExperimentSpec& spec, std::ostream& out, std::ostream& err) {
  std::ostringstream s;
  s << "residual,seed,epoch,layer,norm,ratio,delta_hat\n";
  auto emit = [&](const std::string& residual, std::uint64_t seed, int epoch,
                  const ad::GradNormProbe& p) {
    for (std::size_t k = 0; k < p.norms.size(); ++k) {
      s << residual << ',' << seed << ',' << epoch << ',' << k + 1 << ',' << num(p.norms[k]) << ',';
      // ratio r_k = ‖g(k−1)‖ / ‖g(k)‖ belongs to layer k ≥ 2.
      if (k > 0 && p.ratios[k - 1]) s << num(*p.ratios[k - 1]);
      s << ',';
      if (p.delta_hat) s << num(*p.delta_hat);
      s << '\n';
    }
  };

  std::map<std::string, std::vector<double>> deltas;
  if (spec.identity_chain) {
    const auto p = nn::identity_chain_probe(spec.model.depth);
    emit("identity", 0, 0, p);
    if (p.delta_hat) deltas["identity"].push_back(*p.delta_hat);
  } else {
    const Loaded l = load(spec);
    const data::Dataset& d = require_labels(l, spec.dataset);
    const SparseMatrix a = normalized_adjacency(d.graph);
    for (auto kind : residuals_or_default(spec)) {
      for (auto seed : seeds_or_default(spec)) {
        nn::ModelConfig c = spec.model;
        c.residual = kind;
        c.seed = seed;
        if (c.probe_every == 0) c.probe_every = 10;
        const auto r = nn::train(c, d, a);
        for (const auto& sample : r.probes) {
          emit(nn::to_string(kind), seed, sample.epoch, sample.probe);
          if (sample.probe.delta_hat) deltas[nn::to_string(kind)].push_back(*sample.probe.delta_hat);
        }
      }
    }
  }
  write_output(spec, s.str(), out);

  std::ostringstream summary;
  summary << "residual,samples,median_delta_hat\n";
  for (const auto& [kind, v] : deltas)
    summary << kind << ',' << v.size() << ',' << num(median(v)) << '\n';
  err << summary.str();
  if (const auto path = side_path(spec, ".summary.csv"); !path.empty()) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write " + path);
    f << summary.str();
  }
}

void cmd_distance(const ExperimentSpec& spec, std::ostream& out, std::ostream& err) {
  const Loaded l = load(spec);
  const Graph& g = l.graph;
  const std::size_t n = g.node_count();
  const std::size_t width = spec.feature_width.value_or(l.features.cols());
  const Matrix x = data::column_normalize(l.features);
  const SparseMatrix a = normalized_adjacency(g);

  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  if (spec.all_pairs) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
  } else {
    if (n < 2) throw PreconditionError("distance needs at least two nodes");
    Rng rng = make_rng(spec.model.seed, "pairs");
    while (pairs.size() < spec.pairs) {
      const std::size_t i = rng() % n, j = rng() % n;
      if (i != j) pairs.emplace_back(i, j);
    }
  }

  std::ostringstream s;
  json rows = json::array();
  if (spec.format == Format::csv) s << "i,j,degree_distance,feature_distance\n";
  for (auto [i, j] : pairs) {
    const double dd = spectral::degree_representation_distance(g, i, j, width);
    const double fd = spectral::feature_representation_distance(a, x, i, j);
    if (spec.format == Format::csv)
      s << i << ',' << j << ',' << num(dd) << ',' << num(fd) << '\n';
    else
      rows.push_back({{"i", i}, {"j", j}, {"degree_distance", dd}, {"feature_distance", fd}});
  }

  std::map<std::size_t, std::size_t> hist;
  for (auto deg : g.degrees()) ++hist[deg];
  if (spec.format == Format::json) {
    json h = json::array();
    for (auto [deg, count] : hist) h.push_back({{"degree", deg}, {"count", count}});
    s << json{{"pairs", rows}, {"degree_histogram", h}}.dump(2) << '\n';
  }
  write_output(spec, s.str(), out);

  const std::string hist_path = spec.hist.empty() ? side_path(spec, ".hist.csv") : spec.hist;
  std::ostringstream h;
  h << "degree,count\n";
  for (auto [deg, count] : hist) h << deg << ',' << count << '\n';
  if (hist_path == "-") {
    err << h.str();
  } else if (!hist_path.empty()) {
    std::ofstream f(hist_path, std::ios::binary);
    if (!f) throw DataError("cannot write " + hist_path);
    f << h.str();
  }
}

}  // namespace

void execute(const ExperimentSpec& spec, std::ostream& out, std::ostream& err) {
  switch (spec.command) {
    case Command::train: cmd_train(spec, out); break;
    case Command::sweep: cmd_sweep(spec, out, err); break;
    case Command::limit: cmd_limit(spec, out, true); break;
    case Command::bound: cmd_limit(spec, out, false); break;
    case Command::probe: cmd_probe(spec, out, err); break;
    case Command::distance: cmd_distance(spec, out, err); break;
  }
}

int report_exception(std::ostream& err) {
  try {
    throw;
  } catch (const PreconditionError& e) {
    err << "error: " << e.what() << '\n';
    return usage_error;
  } catch (const ShapeError& e) {
    err << "error: " << e.what() << '\n';
    return usage_error;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return data_error;
  } catch (const GraphError& e) {
    err << "data error: " << e.what() << '\n';
    return data_error;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return numeric_error;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  ExperimentSpec spec;
  std::string residual = "none", format = "csv", op = "normalized";
  std::vector<std::string> residual_list;
  int repeats = 0;

  CLI::App app{"Graph residual networks and suspended-animation analysis", "gresnet"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);

  const char* env_dir = std::getenv("GRESNET_DATA_DIR");
  spec.data_dir = env_dir ? env_dir : "";

  auto common = [&](CLI::App* sub) {
    sub->add_option("--dataset", spec.dataset,
                    "cora | citeseer | pubmed | edgelist:<path> | synthetic:<seed>[:n[:classes[:features]]]");
    sub->add_option("--data-dir", spec.data_dir, "Dataset directory (env GRESNET_DATA_DIR)");
    sub->add_option("--split-seed", spec.split_seed, "0 = index-order split");
    sub->add_option("--seed", spec.model.seed, "Master seed");
    sub->add_option("--out", spec.out, "Output path, - for stdout");
    sub->add_option("--format", format, "csv | json")->check(CLI::IsMember({"csv", "json"}));
  };
  auto model_flags = [&](CLI::App* sub) {
    sub->add_option("--layers", spec.model.depth, "Depth K (hidden + output layers)");
    sub->add_option("--hidden", spec.model.hidden, "Hidden width");
    sub->add_flag("--bias", spec.model.bias, "Enable layer biases");
    sub->add_option("--dropout", spec.model.dropout, "Dropout rate");
    sub->add_option("--lr", spec.model.lr, "Adam step size");
    sub->add_option("--weight-decay", spec.model.weight_decay, "L2 coefficient");
    sub->add_flag("--decay-all", spec.model.decay_all_layers, "Decay every weight matrix");
    sub->add_flag("--dropout-residual", spec.model.dropout_residual,
                  "Build residuals from the dropped-out layer input");
    sub->add_option("--epochs", spec.model.epochs, "Training epochs");
    sub->add_option("--patience", spec.model.patience, "Early-stopping window, 0 = off");
  };
  auto spectral_flags = [&](CLI::App* sub) {
    sub->add_option("--operator", op, "normalized | random-walk | lazy")
        ->check(CLI::IsMember({"normalized", "random-walk", "random_walk", "lazy"}));
    sub->add_flag("--self-loops,!--no-self-loops", spec.self_loops,
                  "Random-walk operator with self-loops");
    sub->add_option("--epsilon", spec.epsilon, "Convergence tolerance");
    sub->add_flag("--largest-component", spec.largest_component,
                  "Analyse the largest connected component only");
  };

  auto* train = app.add_subcommand("train", "Train one model");
  common(train);
  model_flags(train);
  train->add_option("--residual", residual, "none | naive | graph-naive | raw | graph-raw | lazy-naive");
  train->add_option("--checkpoint", spec.checkpoint, "Write the trained model here");

  auto* sweep = app.add_subcommand("sweep", "Depth x residual x seed grid");
  common(sweep);
  model_flags(sweep);
  sweep->add_option("--depths", spec.depths, "Depth list, e.g. 1,2,3")->delimiter(',');
  sweep->add_option("--residual", residual_list, "Residual kind list")->delimiter(',');
  sweep->add_option("--seeds", spec.seeds, "Seed list")->delimiter(',');
  sweep->add_option("--repeats", repeats, "Seeds 0..N-1 when --seeds is absent");

  auto* limit = app.add_subcommand("limit", "Spectrum, closed-form bound and measured depth");
  common(limit);
  spectral_flags(limit);
  limit->add_option("--max-iter", spec.max_iter, "Iteration budget for the measured depth");
  limit->add_flag("--feature-input", spec.feature_input,
                  "Iterate the column-normalized features instead of one-hot columns");

  auto* bound = app.add_subcommand("bound", "Spectrum and closed-form bounds only");
  common(bound);
  spectral_flags(bound);

  auto* probe = app.add_subcommand("probe", "Gradient-norm ratios between layers");
  common(probe);
  model_flags(probe);
  probe->add_option("--residual", residual_list, "Residual kind list")->delimiter(',');
  probe->add_option("--seeds", spec.seeds, "Seed list")->delimiter(',');
  probe->add_option("--repeats", repeats, "Seeds 0..N-1 when --seeds is absent");
  probe->add_option("--probe-every", spec.model.probe_every, "Sampling interval in epochs");
  probe->add_flag("--identity-chain", spec.identity_chain, "Probe the identity-chain debug model");

  auto* distance = app.add_subcommand("distance", "Degree and feature representation distances");
  common(distance);
  distance->add_option("--pairs", spec.pairs, "Number of sampled node pairs");
  distance->add_flag("--all-pairs", spec.all_pairs, "Every pair i < j instead of sampling");
  distance->add_option("--feature-width", spec.feature_width, "Override d_x in the degree distance");
  distance->add_option("--hist", spec.hist,
                        "Degree histogram path, - for stderr (default <out>.hist.csv)");

  spec.model.probe_every = 10;
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, r;
    const int code = app.exit(e, o, r);
    out << o.str();
    err << r.str();
    return code == 0 ? ok : usage_error;
  }

  try {
    if (train->parsed()) spec.command = Command::train;
    if (sweep->parsed()) spec.command = Command::sweep;
    if (limit->parsed()) spec.command = Command::limit;
    if (bound->parsed()) spec.command = Command::bound;
    if (probe->parsed()) spec.command = Command::probe;
    if (distance->parsed()) spec.command = Command::distance;
    if (spec.command != Command::probe && spec.command != Command::train)
      spec.model.probe_every = 0;
    if (spec.command == Command::train) spec.model.probe_every = 0;
    spec.format = format == "json" ? Format::json : Format::csv;
    spec.op = spectral::parse_operator_kind(op);
    spec.model.residual = nn::parse_residual_kind(residual);
    for (const auto& r : residual_list) spec.residuals.push_back(nn::parse_residual_kind(r));
    if (repeats < 0) throw PreconditionError("--repeats must be positive");
    if (spec.seeds.empty()) {
      // Table protocol: ten repetitions unless told otherwise.
      const int n = repeats > 0 ? repeats : (spec.command == Command::sweep ? 10 : 0);
      for (int s = 0; s < n; ++s) spec.seeds.push_back(static_cast<std::uint64_t>(s));
    }
    spec.model.validate();
    execute(spec, out, err);
    return ok;
  } catch (...) {
    return report_exception(err);
  }
}

}  // namespace gresnet::cli
