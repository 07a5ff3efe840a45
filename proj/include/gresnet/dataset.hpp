#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gresnet/graph.hpp"
#include "gresnet/matrix.hpp"

namespace gresnet::data {

struct Dataset {
  Graph graph{1, {}};
  Matrix features;  // n × d_x
  Matrix labels;    // n × C, one-hot rows
  std::vector<std::string> class_names;
  std::vector<std::string> ids;  // dense index -> external id
  // Sorted node indices; pairwise disjoint.
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
  // Citation lines skipped because an endpoint is not in the content file.
  std::size_t dropped_citations = 0;

  std::size_t node_count() const { return features.rows(); }
  std::size_t feature_count() const { return features.cols(); }
  std::size_t class_count() const { return labels.cols(); }
  std::size_t label_of(std::size_t node) const;
};

/// Boolean mask of length n from an index list.
std::vector<bool> to_mask(const std::vector<std::size_t>& indices, std::size_t n);

/// Planetoid `.content` (`<id> <features…> <label>`) and `.cites`
/// (`<cited> <citing>`), whitespace separated. Ids are numbered in content
/// order; classes are sorted by name unless a `.classes` file sits next to the
/// content file. Citation direction is dropped.
/// Throws DataError naming file and line on malformed input or a duplicate id.
Dataset load_content_cites(const std::filesystem::path& content,
                           const std::filesystem::path& cites);

/// Pubmed-Diabetes variant: `NODE.paper.tab` with `label=`/`w-…=` fields and
/// `DIRECTED.cites.tab` with `paper:` prefixed ids.
Dataset load_pubmed(const std::filesystem::path& nodes, const std::filesystem::path& cites);

/// Each nonzero row divided by its L1 norm; zero rows unchanged.
Matrix row_normalize(const Matrix& features);
/// Each nonzero column divided by its L1 norm; zero columns unchanged.
Matrix column_normalize(const Matrix& features);

/// The first `per_class_train` nodes of each class form train, the next
/// `val_count` unused nodes form validation and the next `test_count` test.
/// "First" is index order for seed 0, otherwise the order of a permutation
/// drawn from the seed. Throws PreconditionError when a class is too small
/// or the counts exceed n.
Dataset standard_split(Dataset data, std::size_t per_class_train, std::size_t val_count,
                       std::size_t test_count, std::uint64_t seed);

/// Reads `train.idx`, `val.idx`, `test.idx` (one index per line) from `dir`.
/// Throws DataError on a malformed line, out-of-range index or overlap.
Dataset load_index_split(Dataset data, const std::filesystem::path& dir);

bool has_index_split(const std::filesystem::path& dir);

/// Writes `<stem>.content`, `<stem>.cites`, `<stem>.classes` and the three
/// index files into `dir`, with features in shortest round-trip form.
void save_dataset(const Dataset& data, const std::filesystem::path& dir, const std::string& stem);
/// Inverse of save_dataset.
Dataset load_saved_dataset(const std::filesystem::path& dir, const std::string& stem);

/// Resolves "cora" / "citeseer" / "pubmed" inside `data_dir`, accepting both
/// `<dir>/<name>/<files>` and `<dir>/<files>`. Applies index files when
/// present, otherwise standard_split(20, 500, 1000, split_seed). Features are
/// row-normalized. Throws DataError when the files cannot be found.
Dataset load_named(const std::string& name, const std::filesystem::path& data_dir,
                   std::uint64_t split_seed = 0);

struct SyntheticOptions {
  std::size_t nodes = 300;
  std::size_t classes = 3;
  std::size_t features = 120;
  double intra_degree = 4.0;  // expected same-class neighbours per node
  double inter_degree = 0.6;  // expected other-class neighbours per node
  std::size_t words_per_node = 12;
  double topic_purity = 0.7;  // share of words drawn from the class vocabulary
  std::size_t per_class_train = 10;
  std::size_t val_count = 60;
  std::size_t test_count = 120;
  std::uint64_t seed = 1;
};

/// Citation-like stand-in: a stochastic block graph with binary bag-of-words
/// features whose vocabulary leans towards the node's class. Row-normalized
/// and split like the real datasets.
Dataset synthetic_citation(const SyntheticOptions& options);

}  // namespace gresnet::data
