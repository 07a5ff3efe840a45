#include "gresnet/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "gresnet/error.hpp"
#include "gresnet/rng.hpp"

namespace gresnet::data {

namespace fs = std::filesystem;

namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

std::ifstream open_or_throw(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw DataError("cannot open " + p.string());
  return in;
}

[[noreturn]] void fail(const fs::path& p, std::size_t line, const std::string& what) {
  throw DataError(p.string() + ":" + std::to_string(line) + ": " + what);
}

double parse_real(std::string_view token, const fs::path& p, std::size_t line) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
  if (ec != std::errc() || ptr != token.data() + token.size() || !std::isfinite(v))
    fail(p, line, "not a finite number: '" + std::string(token) + "'");
  return v;
}

std::string format_real(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

// Labels as class indices -> one-hot matrix, with class order `names`.
Matrix one_hot(const std::vector<std::string>& node_labels, const std::vector<std::string>& names) {
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t c = 0; c < names.size(); ++c) index[names[c]] = c;
  Matrix y(node_labels.size(), names.size());
  for (std::size_t i = 0; i < node_labels.size(); ++i) {
    const auto it = index.find(node_labels[i]);
    if (it == index.end()) throw DataError("label '" + node_labels[i] + "' missing from class list");
    y(i, it->second) = 1.0;
  }
  return y;
}

std::vector<std::string> sorted_unique(std::vector<std::string> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

std::vector<std::string> read_class_file(const fs::path& p) {
  auto in = open_or_throw(p);
  std::vector<std::string> names;
  std::string line;
  while (std::getline(in, line)) {
    const auto tok = split_ws(line);
    if (!tok.empty()) names.emplace_back(tok[0]);
  }
  return names;
}

Graph graph_from_citations(const fs::path& cites, std::size_t skip_lines,
                           const std::unordered_map<std::string, std::size_t>& index,
                           std::size_t n, std::size_t& dropped) {
  auto in = open_or_throw(cites);
  std::vector<Edge> edges;
  std::string line;
  std::size_t line_no = 0;
  dropped = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no <= skip_lines) continue;
    auto tok = split_ws(line);
    if (tok.empty()) continue;
    // Pubmed rows read `<row id> paper:<a> | paper:<b>`.
    if (tok.size() == 4 && tok[2] == "|") tok = {tok[1], tok[3]};
    if (tok.size() != 2) fail(cites, line_no, "expected two ids");
    for (auto& t : tok)
      if (t.substr(0, 6) == "paper:") t.remove_prefix(6);
    const auto a = index.find(std::string(tok[0]));
    const auto b = index.find(std::string(tok[1]));
    if (a == index.end() || b == index.end()) {
      ++dropped;
      continue;
    }
    edges.emplace_back(a->second, b->second);
  }
  return build_graph(n, edges);
}

}  // namespace

std::size_t Dataset::label_of(std::size_t node) const {
  for (std::size_t c = 0; c < labels.cols(); ++c)
    if (labels(node, c) == 1.0) return c;
  throw DataError("node " + std::to_string(node) + " has no label");
}

std::vector<bool> to_mask(const std::vector<std::size_t>& indices, std::size_t n) {
  std::vector<bool> mask(n, false);
  for (auto i : indices) {
    if (i >= n) throw ShapeError("to_mask: index out of range");
    mask[i] = true;
  }
  return mask;
}

Dataset load_content_cites(const fs::path& content, const fs::path& cites) {
  auto in = open_or_throw(content);
  std::vector<std::string> ids, node_labels;
  std::vector<double> values;
  std::unordered_map<std::string, std::size_t> index;
  std::size_t width = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto tok = split_ws(line);
    if (tok.empty()) continue;
    if (tok.size() < 2) fail(content, line_no, "expected '<id> <features...> <label>'");
    const std::size_t w = tok.size() - 2;
    if (ids.empty()) width = w;
    if (w != width)
      fail(content, line_no,
           "expected " + std::to_string(width) + " features, found " + std::to_string(w));
    std::string id(tok[0]);
    if (!index.emplace(id, ids.size()).second) fail(content, line_no, "duplicate id '" + id + "'");
    for (std::size_t k = 1; k + 1 < tok.size(); ++k)
      values.push_back(parse_real(tok[k], content, line_no));
    ids.push_back(std::move(id));
    node_labels.emplace_back(tok.back());
  }
  if (ids.empty()) throw DataError(content.string() + ": no nodes");

  Dataset d;
  const std::size_t n = ids.size();
  d.features = Matrix(n, width, std::move(values));
  fs::path class_file = content;
  class_file.replace_extension(".classes");
  d.class_names = fs::exists(class_file) ? read_class_file(class_file) : sorted_unique(node_labels);
  d.labels = one_hot(node_labels, d.class_names);
  d.graph = graph_from_citations(cites, 0, index, n, d.dropped_citations);
  d.ids = std::move(ids);
  return d;
}

Dataset load_pubmed(const fs::path& nodes, const fs::path& cites) {
  auto in = open_or_throw(nodes);
  std::string line;
  std::size_t line_no = 0;
  std::unordered_map<std::string, std::size_t> feature_index;
  std::vector<std::string> ids, node_labels;
  std::vector<std::vector<std::pair<std::size_t, double>>> rows;
  std::unordered_map<std::string, std::size_t> index;
  while (std::getline(in, line)) {
    ++line_no;
    const auto tok = split_ws(line);
    if (tok.empty() || line_no == 1) continue;
    if (line_no == 2) {
      // Declarations such as `numeric:w-rat:0.0`.
      for (auto t : tok) {
        const auto first = t.find(':');
        const auto last = t.rfind(':');
        if (first == std::string_view::npos || first == last) continue;
        const std::string name(t.substr(first + 1, last - first - 1));
        if (name.rfind("w-", 0) == 0) feature_index.emplace(name, feature_index.size());
      }
      if (feature_index.empty()) fail(nodes, line_no, "no feature declarations");
      continue;
    }
    std::string id(tok[0]);
    if (!index.emplace(id, ids.size()).second) fail(nodes, line_no, "duplicate id '" + id + "'");
    std::string label;
    std::vector<std::pair<std::size_t, double>> row;
    for (std::size_t k = 1; k < tok.size(); ++k) {
      const auto eq = tok[k].find('=');
      if (eq == std::string_view::npos) fail(nodes, line_no, "expected key=value");
      const auto key = tok[k].substr(0, eq);
      const auto value = tok[k].substr(eq + 1);
      if (key == "label") {
        label = std::string(value);
      } else if (key.substr(0, 2) == "w-") {
        const auto f = feature_index.find(std::string(key));
        if (f == feature_index.end()) fail(nodes, line_no, "undeclared feature " + std::string(key));
        row.emplace_back(f->second, parse_real(value, nodes, line_no));
      }
    }
    if (label.empty()) fail(nodes, line_no, "missing label");
    ids.push_back(std::move(id));
    node_labels.push_back(std::move(label));
    rows.push_back(std::move(row));
  }
  if (ids.empty()) throw DataError(nodes.string() + ": no nodes");

  Dataset d;
  const std::size_t n = ids.size();
  d.features = Matrix(n, feature_index.size());
  for (std::size_t i = 0; i < n; ++i)
    for (auto [c, v] : rows[i]) d.features(i, c) = v;
  d.class_names = sorted_unique(node_labels);
  d.labels = one_hot(node_labels, d.class_names);
  d.graph = graph_from_citations(cites, 2, index, n, d.dropped_citations);
  d.ids = std::move(ids);
  return d;
}

Matrix row_normalize(const Matrix& features) {
  Matrix out = features;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    double s = 0.0;
    for (double v : row) s += std::abs(v);
    if (s == 0.0) continue;
    for (double& v : row) v /= s;
  }
  return out;
}

Matrix column_normalize(const Matrix& features) {
  return row_normalize(features.transposed()).transposed();
}

Dataset standard_split(Dataset data, std::size_t per_class_train, std::size_t val_count,
                       std::size_t test_count, std::uint64_t seed) {
  const std::size_t n = data.node_count();
  const std::size_t c = data.class_count();
  if (per_class_train * c + val_count + test_count > n)
    throw PreconditionError("standard_split: " + std::to_string(per_class_train) +
                            " per class, " + std::to_string(val_count) + " validation and " +
                            std::to_string(test_count) + " test exceed " + std::to_string(n) +
                            " nodes");

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  if (seed != 0) {
    // Explicit Fisher-Yates so the permutation does not depend on the
    // standard library's shuffle implementation.
    Rng rng = make_rng(seed, "split");
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
  }

  std::vector<std::size_t> taken(c, 0);
  std::vector<bool> used(n, false);
  data.train.clear();
  data.val.clear();
  data.test.clear();
  for (std::size_t i : order) {
    const std::size_t cls = data.label_of(i);
    if (taken[cls] < per_class_train) {
      ++taken[cls];
      used[i] = true;
      data.train.push_back(i);
    }
  }
  for (std::size_t cls = 0; cls < c; ++cls)
    if (taken[cls] < per_class_train)
      throw PreconditionError("standard_split: class '" + data.class_names[cls] + "' has only " +
                              std::to_string(taken[cls]) + " nodes");
  for (std::size_t i : order) {
    if (used[i]) continue;
    if (data.val.size() < val_count) {
      data.val.push_back(i);
    } else if (data.test.size() < test_count) {
      data.test.push_back(i);
    } else {
      break;
    }
  }
  std::sort(data.train.begin(), data.train.end());
  std::sort(data.val.begin(), data.val.end());
  std::sort(data.test.begin(), data.test.end());
  return data;
}

bool has_index_split(const fs::path& dir) {
  return fs::exists(dir / "train.idx") && fs::exists(dir / "val.idx") &&
         fs::exists(dir / "test.idx");
}

Dataset load_index_split(Dataset data, const fs::path& dir) {
  const std::size_t n = data.node_count();
  std::vector<bool> seen(n, false);
  auto read = [&](const char* name) {
    const fs::path p = dir / name;
    auto in = open_or_throw(p);
    std::vector<std::size_t> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const auto tok = split_ws(line);
      if (tok.empty()) continue;
      std::size_t v = 0;
      const auto [ptr, ec] = std::from_chars(tok[0].data(), tok[0].data() + tok[0].size(), v);
      if (tok.size() != 1 || ec != std::errc() || ptr != tok[0].data() + tok[0].size())
        fail(p, line_no, "expected one non-negative integer");
      if (v >= n) fail(p, line_no, "index " + std::to_string(v) + " out of range");
      if (seen[v]) fail(p, line_no, "index " + std::to_string(v) + " already assigned");
      seen[v] = true;
      out.push_back(v);
    }
    std::sort(out.begin(), out.end());
    return out;
  };
  data.train = read("train.idx");
  data.val = read("val.idx");
  data.test = read("test.idx");
  return data;
}

void save_dataset(const Dataset& d, const fs::path& dir, const std::string& stem) {
  fs::create_directories(dir);
  {
    std::ofstream out(dir / (stem + ".content"));
    for (std::size_t i = 0; i < d.node_count(); ++i) {
      out << d.ids[i];
      for (double v : d.features.row(i)) out << '\t' << format_real(v);
      out << '\t' << d.class_names[d.label_of(i)] << '\n';
    }
  }
  {
    std::ofstream out(dir / (stem + ".cites"));
    for (auto [a, b] : d.graph.edges()) out << d.ids[a] << '\t' << d.ids[b] << '\n';
  }
  {
    std::ofstream out(dir / (stem + ".classes"));
    for (const auto& name : d.class_names) out << name << '\n';
  }
  auto write_idx = [&](const char* name, const std::vector<std::size_t>& idx) {
    std::ofstream out(dir / name);
    for (auto i : idx) out << i << '\n';
  };
  write_idx("train.idx", d.train);
  write_idx("val.idx", d.val);
  write_idx("test.idx", d.test);
  if (!fs::exists(dir / (stem + ".content"))) throw DataError("failed to write " + dir.string());
}

Dataset load_saved_dataset(const fs::path& dir, const std::string& stem) {
  Dataset d = load_content_cites(dir / (stem + ".content"), dir / (stem + ".cites"));
  return load_index_split(std::move(d), dir);
}

Dataset load_named(const std::string& name, const fs::path& data_dir, std::uint64_t split_seed) {
  if (data_dir.empty()) throw DataError("no data directory given for dataset '" + name + "'");
  Dataset d;
  fs::path found_in;
  if (name == "cora" || name == "citeseer") {
    for (const fs::path& dir : {data_dir / name, data_dir}) {
      if (fs::exists(dir / (name + ".content")) && fs::exists(dir / (name + ".cites"))) {
        d = load_content_cites(dir / (name + ".content"), dir / (name + ".cites"));
        found_in = dir;
        break;
      }
    }
  } else if (name == "pubmed") {
    const std::string nodes = "Pubmed-Diabetes.NODE.paper.tab";
    const std::string cites = "Pubmed-Diabetes.DIRECTED.cites.tab";
    for (const fs::path& dir :
         {data_dir / "pubmed", data_dir / "Pubmed-Diabetes" / "data", data_dir}) {
      if (fs::exists(dir / nodes) && fs::exists(dir / cites)) {
        d = load_pubmed(dir / nodes, dir / cites);
        found_in = dir;
        break;
      }
    }
  } else {
    throw DataError("unknown dataset '" + name + "'");
  }
  if (found_in.empty())
    throw DataError("dataset '" + name + "' not found under " + data_dir.string());
  d.features = row_normalize(d.features);
  if (has_index_split(found_in)) return load_index_split(std::move(d), found_in);
  return standard_split(std::move(d), 20, 500, 1000, split_seed);
}

Dataset synthetic_citation(const SyntheticOptions& o) {
  if (o.nodes == 0 || o.classes == 0 || o.features < o.classes)
    throw PreconditionError("synthetic_citation: need nodes > 0 and features >= classes");
  Rng rng = make_rng(o.seed, "synthetic");
  const std::size_t n = o.nodes;
  std::vector<std::size_t> cls(n);
  for (std::size_t i = 0; i < n; ++i) cls[i] = i % o.classes;
  for (std::size_t i = n; i > 1; --i) std::swap(cls[i - 1], cls[rng() % i]);

  const double block = static_cast<double>(n) / static_cast<double>(o.classes);
  const double p_in = std::min(1.0, o.intra_degree / std::max(1.0, block - 1.0));
  const double p_out = std::min(1.0, o.inter_degree / std::max(1.0, static_cast<double>(n) - block));
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (uniform01(rng) < (cls[i] == cls[j] ? p_in : p_out)) edges.emplace_back(i, j);

  Dataset d;
  d.graph = build_graph(n, edges);
  d.features = Matrix(n, o.features);
  const std::size_t topic = o.features / o.classes;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t w = 0; w < o.words_per_node; ++w) {
      const std::size_t word = uniform01(rng) < o.topic_purity
                                   ? cls[i] * topic + rng() % topic
                                   : rng() % o.features;
      d.features(i, word) = 1.0;
    }
  }
  d.features = row_normalize(d.features);
  d.labels = Matrix(n, o.classes);
  for (std::size_t i = 0; i < n; ++i) {
    d.labels(i, cls[i]) = 1.0;
    d.ids.push_back("s" + std::to_string(i));
  }
  for (std::size_t c = 0; c < o.classes; ++c) d.class_names.push_back("c" + std::to_string(c));
  return standard_split(std::move(d), o.per_class_train, o.val_count, o.test_count, 0);
}

}  // namespace gresnet::data
