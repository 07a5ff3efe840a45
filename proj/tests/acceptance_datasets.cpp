// Acceptance criteria that train on the citation datasets. The data
// directory comes from GRESNET_DATA_DIR; without it every criterion is
// skipped and the binary exits 77.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "acceptance_support.hpp"
#include "gresnet/dataset.hpp"
#include "gresnet/error.hpp"
#include "gresnet/model.hpp"
#include "gresnet/spectral.hpp"

using namespace gresnet;
using gresnet::acceptance::fmt;
using gresnet::acceptance::Report;
using gresnet::acceptance::Stopwatch;
using nn::ResidualKind;

namespace {

constexpr int kSeeds = 10;
constexpr double kAccuracyBand = 0.02;

struct Loaded {
  data::Dataset data;
  SparseMatrix a_hat;
};

std::optional<Loaded> load(const std::string& name, const std::optional<std::filesystem::path>& dir,
                           std::string& why) {
  if (!dir) {
    why = "GRESNET_DATA_DIR not set";
    return std::nullopt;
  }
  try {
    Loaded l{data::load_named(name, *dir), {}};
    l.a_hat = normalized_adjacency(l.data.graph);
    return l;
  } catch (const Error& e) {
    why = e.what();
    return std::nullopt;
  }
}

std::vector<nn::TrainReport> run_seeds(nn::ModelConfig c, const Loaded& l) {
  std::vector<nn::TrainReport> out;
  for (int s = 0; s < kSeeds; ++s) {
    c.seed = static_cast<std::uint64_t>(s);
    out.push_back(nn::train(c, l.data, l.a_hat));
  }
  return out;
}

double mean_best_test(const std::vector<nn::TrainReport>& runs) {
  double s = 0.0;
  for (const auto& r : runs) s += r.best_test_acc;
  return s / static_cast<double>(runs.size());
}

// Highest training accuracy after any optimization step.
double max_train_acc(const nn::TrainReport& r) {
  double best = 0.0;
  for (const auto& e : r.epochs)
    if (e.epoch > 0) best = std::max(best, e.train_acc);
  return best;
}

nn::ModelConfig config(int depth, ResidualKind kind) {
  nn::ModelConfig c;
  c.depth = depth;
  c.residual = kind;
  return c;
}

void table_criterion(Report& report, const std::string& id, const std::string& dataset,
                     const std::optional<std::filesystem::path>& dir, int depth, ResidualKind kind,
                     double target, std::optional<double> time_limit) {
  const std::string text = dataset + ", " + nn::to_string(kind) + ", K=" + std::to_string(depth) +
                           ": mean best-validation test accuracy " + fmt("%.3f", target) +
                           " +/- 0.02 over 10 seeds" +
                           (time_limit ? ", runtime <= " + fmt("%.0f", *time_limit) + " s" : "");
  std::string why;
  const auto l = load(dataset, dir, why);
  if (!l) {
    report.skip(id, text, why);
    return;
  }
  const Stopwatch clock;
  const auto runs = run_seeds(config(depth, kind), *l);
  const double elapsed = clock.seconds();
  const double mean = mean_best_test(runs);
  const bool in_band = std::abs(mean - target) <= kAccuracyBand;
  const bool in_time = !time_limit || elapsed <= *time_limit;
  report.check(id, text, in_band && in_time,
               "mean " + fmt("%.4f", mean) + ", " + fmt("%.1f", elapsed) + " s");
}

double median(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

std::vector<double> delta_hats(const std::vector<nn::TrainReport>& runs, std::size_t& samples,
                               std::size_t& bad_shape, int depth) {
  std::vector<double> out;
  for (const auto& r : runs)
    for (const auto& s : r.probes) {
      ++samples;
      if (s.probe.ratios.size() != static_cast<std::size_t>(depth - 1)) ++bad_shape;
      if (s.probe.delta_hat) out.push_back(*s.probe.delta_hat);
    }
  return out;
}

void cora_depth_criteria(Report& report, const std::optional<std::filesystem::path>& dir) {
  const std::string t5 =
      "Cora, no bias, 200 epochs: K=5,6,7 vanilla max train accuracy <= 0.5 in >= 8/10 seeds, "
      "K=2 > 0.9 in all seeds";
  const std::string t6a = "Cora, raw, K=7: train accuracy >= 0.9 and test accuracy >= 0.78 in >= 8/10 seeds";
  const std::string t6b =
      "Cora, graph-raw, K=7: train accuracy >= 0.9 and test accuracy >= 0.78 in >= 8/10 seeds";
  const std::string t13b = "Cora, K=7 probes: every sample carries K-1 = 6 ratios";
  const std::string t13c = "Cora, K=7: median delta-hat raw < none over 10 seeds (soft)";
  std::string why;
  const auto l = load("cora", dir, why);
  if (!l) {
    for (auto [id, text] : {std::pair{"5", t5}, {"6a", t6a}, {"6b", t6b}, {"13b", t13b}})
      report.skip(id, text, why);
    report.info("13c", t13c, "not run: " + why);
    return;
  }

  auto full_length = [](int depth, ResidualKind kind) {
    nn::ModelConfig c = config(depth, kind);
    c.epochs = 200;
    c.patience = 0;
    c.probe_every = depth == 7 ? 10 : 0;
    return c;
  };

  std::map<int, std::vector<nn::TrainReport>> vanilla;
  std::ostringstream detail;
  bool ok5 = true;
  for (int depth : {2, 5, 6, 7}) {
    vanilla[depth] = run_seeds(full_length(depth, ResidualKind::none), *l);
    int hits = 0;
    double lo = 1.0, hi = 0.0;
    for (const auto& r : vanilla[depth]) {
      const double m = max_train_acc(r);
      lo = std::min(lo, m);
      hi = std::max(hi, m);
      hits += depth == 2 ? m > 0.9 : m <= 0.5;
    }
    ok5 = ok5 && (depth == 2 ? hits == kSeeds : hits >= 8);
    detail << (depth == 2 ? "" : "; ") << "K=" << depth << " " << hits << "/10 (max train "
           << fmt("%.3f", lo) << ".." << fmt("%.3f", hi) << ")";
  }
  report.check("5", t5, ok5, detail.str());

  std::map<ResidualKind, std::vector<nn::TrainReport>> rescued;
  for (auto [id, kind, text] : {std::tuple{"6a", ResidualKind::raw, t6a},
                                std::tuple{"6b", ResidualKind::graph_raw, t6b}}) {
    rescued[kind] = run_seeds(full_length(7, kind), *l);
    int hits = 0;
    double min_train = 1.0, min_test = 1.0;
    for (const auto& r : rescued[kind]) {
      const double tr = max_train_acc(r);
      min_train = std::min(min_train, tr);
      min_test = std::min(min_test, r.best_test_acc);
      hits += tr >= 0.9 && r.best_test_acc >= 0.78;
    }
    report.check(id, text, hits >= 8,
                 std::to_string(hits) + "/10 seeds; lowest train " + fmt("%.3f", min_train) +
                     ", lowest test " + fmt("%.3f", min_test) + ", mean test " +
                     fmt("%.4f", mean_best_test(rescued[kind])));
  }

  std::size_t samples = 0, bad_shape = 0;
  const auto none_d = delta_hats(vanilla[7], samples, bad_shape, 7);
  const auto raw_d = delta_hats(rescued[ResidualKind::raw], samples, bad_shape, 7);
  report.check("13b", t13b, samples > 0 && bad_shape == 0,
               std::to_string(samples) + " samples, " + std::to_string(bad_shape) + " malformed");
  const double m_none = median(none_d), m_raw = median(raw_d);
  report.info("13c", t13c,
              std::string(m_raw < m_none ? "holds" : "does not hold") + ": residual,samples,median " +
                  "none," + std::to_string(none_d.size()) + "," + fmt("%.4g", m_none) + " | raw," +
                  std::to_string(raw_d.size()) + "," + fmt("%.4g", m_raw));
}

void cora_bound_criterion(Report& report, const std::optional<std::filesystem::path>& dir) {
  const std::string text =
      "Cora: measured depth (eps 1e-4) <= closed-form bound, plain and lazy operators";
  std::string why;
  const auto l = load("cora", dir, why);
  if (!l) {
    report.skip("8b", text, why);
    return;
  }
  using namespace spectral;
  // The full graph is disconnected, so its bound is infinite and the check
  // is vacuous; the largest component gives the substantive comparison.
  LimitOptions opt;
  opt.epsilon = 1e-4;
  opt.max_iter = 0;
  const auto full = analyze_limit(l->data.graph, Matrix(), opt);

  const Graph g = induced_subgraph(l->data.graph, largest_component(l->data.graph));
  const std::size_t n = g.node_count();
  // Evenly spaced one-hot columns: the bound covers every column-stochastic
  // input, so any subset of the identity is a valid probe.
  const std::size_t cols = std::min<std::size_t>(n, 256);
  Matrix x(n, cols);
  for (std::size_t c = 0; c < cols; ++c) x(c * n / cols, c) = 1.0;

  bool ok = true;
  std::ostringstream detail;
  detail << "full graph bound " << (full.bound_depth.is_infinite() ? "inf" : "finite")
         << "; largest component n=" << n;
  for (auto kind : {OperatorKind::normalized, OperatorKind::random_walk, OperatorKind::lazy}) {
    opt.kind = kind;
    opt.max_iter = 1'000'000;
    const auto r = analyze_limit(g, x, opt);
    const bool holds = !r.bound_depth.is_infinite() && r.empirical_depth.reached() &&
                       *r.empirical_depth.value <= *r.bound_depth.value;
    ok = ok && holds;
    detail << "; " << to_string(kind) << " measured "
           << (r.empirical_depth.reached() ? std::to_string(*r.empirical_depth.value) : "none")
           << " <= bound "
           << (r.bound_depth.is_infinite() ? "inf" : std::to_string(*r.bound_depth.value));
  }
  report.check("8b", text, ok, detail.str());
}

}  // namespace

int main() {
  std::optional<std::filesystem::path> dir;
  if (const char* env = std::getenv("GRESNET_DATA_DIR"); env && *env) dir = env;

  Report report;
  table_criterion(report, "1", "cora", dir, 2, ResidualKind::none, 0.815, 300.0);
  table_criterion(report, "2", "cora", dir, 5, ResidualKind::graph_raw, 0.843, std::nullopt);
  table_criterion(report, "3", "citeseer", dir, 4, ResidualKind::raw, 0.727, std::nullopt);
  table_criterion(report, "4", "pubmed", dir, 7, ResidualKind::graph_raw, 0.817, 2400.0);
  cora_depth_criteria(report, dir);
  cora_bound_criterion(report, dir);
  return report.exit_code();
}
