#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "gresnet/model.hpp"
#include "gresnet/spectral.hpp"

namespace gresnet::cli {

enum ExitCode : int { ok = 0, usage_error = 2, data_error = 3, numeric_error = 4 };

enum class Command { train, sweep, limit, bound, probe, distance };
enum class Format { csv, json };

/// Everything one invocation needs, after flag parsing.
struct ExperimentSpec {
  Command command = Command::train;
  // "cora" | "citeseer" | "pubmed" | "edgelist:<path>" | "synthetic:<seed>[:n[:classes[:features]]]"
  std::string dataset;
  std::string data_dir;
  std::uint64_t split_seed = 0;

  nn::ModelConfig model;
  std::vector<int> depths;
  std::vector<nn::ResidualKind> residuals;
  std::vector<std::uint64_t> seeds;

  std::string out = "-";
  Format format = Format::csv;
  std::string checkpoint;

  spectral::OperatorKind op = spectral::OperatorKind::normalized;
  bool self_loops = true;
  double epsilon = 1e-4;
  std::int64_t max_iter = 10000;
  bool largest_component = false;
  bool feature_input = false;  // limit: column-normalized features instead of one-hot columns

  bool identity_chain = false;  // probe debug model

  std::size_t pairs = 1000;
  bool all_pairs = false;
  std::optional<std::size_t> feature_width;
  std::string hist;
};

/// Parses argv (subcommand first) and executes. Diagnostics go to `err`;
/// results go to the `--out` file or `out` when it is "-".
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Executes an already-validated spec. Throws the library's error types.
void execute(const ExperimentSpec& spec, std::ostream& out, std::ostream& err);

/// Maps an in-flight exception to its exit code, writing a one-line message.
int report_exception(std::ostream& err);

}  // namespace gresnet::cli
