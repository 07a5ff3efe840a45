#include "gresnet/sparse_matrix.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gresnet/error.hpp"

namespace gresnet {

SparseMatrix SparseMatrix::from_triplets(std::size_t rows, std::size_t cols,
                                         std::vector<Triplet> triplets) {
  for (const auto& [r, c, v] : triplets) {
    if (r >= rows || c >= cols) {
      throw ShapeError("SparseMatrix: entry (" + std::to_string(r) + ", " + std::to_string(c) +
                       ") outside " + std::to_string(rows) + "x" + std::to_string(cols));
    }
  }
  std::sort(triplets.begin(), triplets.end(), [](const Triplet& a, const Triplet& b) {
    return std::tie(std::get<0>(a), std::get<1>(a)) < std::tie(std::get<0>(b), std::get<1>(b));
  });

  SparseMatrix m;
  m.rows_ = rows;
  m.cols_ = cols;
  m.row_ptr_.assign(rows + 1, 0);
  std::size_t i = 0;
  while (i < triplets.size()) {
    const auto [r, c, v0] = triplets[i];
    double v = v0;
    std::size_t j = i + 1;
    while (j < triplets.size() && std::get<0>(triplets[j]) == r && std::get<1>(triplets[j]) == c)
      v += std::get<2>(triplets[j++]);
    if (v != 0.0) {
      m.col_index_.push_back(c);
      m.values_.push_back(v);
      ++m.row_ptr_[r + 1];
    }
    i = j;
  }
  for (std::size_t r = 0; r < rows; ++r) m.row_ptr_[r + 1] += m.row_ptr_[r];
  return m;
}

SparseMatrix SparseMatrix::identity(std::size_t n) {
  std::vector<Triplet> t;
  t.reserve(n);
  for (std::size_t i = 0; i < n; ++i) t.emplace_back(i, i, 1.0);
  return from_triplets(n, n, std::move(t));
}

SparseMatrix SparseMatrix::from_dense(const Matrix& d) {
  std::vector<Triplet> t;
  for (std::size_t r = 0; r < d.rows(); ++r)
    for (std::size_t c = 0; c < d.cols(); ++c)
      if (d(r, c) != 0.0) t.emplace_back(r, c, d(r, c));
  return from_triplets(d.rows(), d.cols(), std::move(t));
}

SparseMatrix SparseMatrix::from_csr(std::size_t rows, std::size_t cols,
                                    std::vector<std::size_t> row_ptr,
                                    std::vector<std::size_t> col_index, std::vector<double> values) {
  bool ok = row_ptr.size() == rows + 1 && row_ptr.front() == 0 &&
            row_ptr.back() == col_index.size() && col_index.size() == values.size();
  for (std::size_t r = 0; ok && r < rows; ++r) {
    ok = row_ptr[r] <= row_ptr[r + 1];
    for (std::size_t k = row_ptr[r]; ok && k < row_ptr[r + 1]; ++k)
      ok = col_index[k] < cols && values[k] != 0.0 && (k == row_ptr[r] || col_index[k - 1] < col_index[k]);
  }
  if (!ok) throw ShapeError("SparseMatrix::from_csr: malformed CSR arrays");
  SparseMatrix m;
  m.rows_ = rows;
  m.cols_ = cols;
  m.row_ptr_ = std::move(row_ptr);
  m.col_index_ = std::move(col_index);
  m.values_ = std::move(values);
  return m;
}

double SparseMatrix::at(std::size_t r, std::size_t c) const {
  const auto cols = row_columns(r);
  const auto it = std::lower_bound(cols.begin(), cols.end(), c);
  if (it == cols.end() || *it != c) return 0.0;
  return row_values(r)[static_cast<std::size_t>(it - cols.begin())];
}

SparseMatrix SparseMatrix::transposed() const {
  SparseMatrix t;
  t.rows_ = cols_;
  t.cols_ = rows_;
  t.row_ptr_.assign(cols_ + 1, 0);
  for (std::size_t c : col_index_) ++t.row_ptr_[c + 1];
  for (std::size_t c = 0; c < cols_; ++c) t.row_ptr_[c + 1] += t.row_ptr_[c];
  t.col_index_.resize(values_.size());
  t.values_.resize(values_.size());
  std::vector<std::size_t> next(t.row_ptr_.begin(), t.row_ptr_.end() - 1);
  // Rows are visited in increasing order, so columns of the transpose stay sorted.
  for (std::size_t r = 0; r < rows_; ++r) {
    for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) {
      const std::size_t pos = next[col_index_[k]]++;
      t.col_index_[pos] = r;
      t.values_[pos] = values_[k];
    }
  }
  return t;
}

Matrix SparseMatrix::to_dense() const {
  Matrix d(rows_, cols_);
  for (std::size_t r = 0; r < rows_; ++r) {
    const auto cols = row_columns(r);
    const auto vals = row_values(r);
    for (std::size_t k = 0; k < cols.size(); ++k) d(r, cols[k]) = vals[k];
  }
  return d;
}

double SparseMatrix::asymmetry() const {
  if (rows_ != cols_) throw ShapeError("asymmetry: matrix is not square");
  double worst = 0.0;
  for (std::size_t r = 0; r < rows_; ++r) {
    const auto cols = row_columns(r);
    const auto vals = row_values(r);
    for (std::size_t k = 0; k < cols.size(); ++k)
      worst = std::max(worst, std::abs(vals[k] - at(cols[k], r)));
  }
  return worst;
}

namespace {

SparseMatrix scaled_adjacency(const Graph& g, bool self_loops, bool symmetric) {
  const std::size_t n = g.node_count();
  std::vector<double> dt(n);
  for (std::size_t i = 0; i < n; ++i)
    dt[i] = static_cast<double>(g.degree(i)) + (self_loops ? 1.0 : 0.0);
  std::vector<SparseMatrix::Triplet> t;
  t.reserve(2 * g.edge_count() + n);
  auto weight = [&](std::size_t i, std::size_t j) {
    return symmetric ? 1.0 / std::sqrt(dt[i] * dt[j]) : 1.0 / dt[j];
  };
  for (auto [a, b] : g.edges()) {
    t.emplace_back(a, b, weight(a, b));
    t.emplace_back(b, a, weight(b, a));
  }
  if (self_loops)
    for (std::size_t i = 0; i < n; ++i) t.emplace_back(i, i, weight(i, i));
  return SparseMatrix::from_triplets(n, n, std::move(t));
}

void require_no_isolated(const Graph& g, const char* what) {
  for (std::size_t i = 0; i < g.node_count(); ++i) {
    if (g.degree(i) == 0) {
      throw GraphError(std::string(what) + ": node " + std::to_string(i) +
                       " is isolated, its column would be degenerate without self-loops");
    }
  }
}

}  // namespace

SparseMatrix normalized_adjacency(const Graph& g) {
  return scaled_adjacency(g, /*self_loops=*/true, /*symmetric=*/true);
}

SparseMatrix random_walk_matrix(const Graph& g, bool add_self_loops) {
  if (!add_self_loops) require_no_isolated(g, "random_walk_matrix");
  return scaled_adjacency(g, add_self_loops, /*symmetric=*/false);
}

SparseMatrix symmetric_walk_form(const Graph& g, bool add_self_loops) {
  if (!add_self_loops) require_no_isolated(g, "symmetric_walk_form");
  return scaled_adjacency(g, add_self_loops, /*symmetric=*/true);
}

SparseMatrix adjacency_matrix(const Graph& g) {
  std::vector<SparseMatrix::Triplet> t;
  for (auto [a, b] : g.edges()) {
    t.emplace_back(a, b, 1.0);
    t.emplace_back(b, a, 1.0);
  }
  return SparseMatrix::from_triplets(g.node_count(), g.node_count(), std::move(t));
}

SparseMatrix lazy_walk_matrix(const SparseMatrix& m) {
  if (m.rows() != m.cols()) {
    throw ShapeError("lazy_walk_matrix: expected a square matrix, got " +
                     std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
  }
  std::vector<SparseMatrix::Triplet> t;
  t.reserve(m.nonzeros() + m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto cols = m.row_columns(r);
    const auto vals = m.row_values(r);
    for (std::size_t k = 0; k < cols.size(); ++k) t.emplace_back(r, cols[k], 0.5 * vals[k]);
    t.emplace_back(r, r, 0.5);
  }
  return SparseMatrix::from_triplets(m.rows(), m.cols(), std::move(t));
}

Matrix spmm(const SparseMatrix& m, const Matrix& x) {
  if (m.cols() != x.rows()) {
    throw ShapeError("spmm: " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                     " * " + std::to_string(x.rows()) + "x" + std::to_string(x.cols()));
  }
  Matrix out(m.rows(), x.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto out_row = out.row(r);
    const auto cols = m.row_columns(r);
    const auto vals = m.row_values(r);
    for (std::size_t k = 0; k < cols.size(); ++k) {
      const auto x_row = x.row(cols[k]);
      const double v = vals[k];
      for (std::size_t j = 0; j < x_row.size(); ++j) out_row[j] += v * x_row[j];
    }
  }
  return out;
}

Matrix spmm_transposed(const SparseMatrix& m, const Matrix& x) {
  if (m.rows() != x.rows()) {
    throw ShapeError("spmm_transposed: (" + std::to_string(m.rows()) + "x" +
                     std::to_string(m.cols()) + ")ᵀ * " + std::to_string(x.rows()) + "x" +
                     std::to_string(x.cols()));
  }
  Matrix out(m.cols(), x.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto x_row = x.row(r);
    const auto cols = m.row_columns(r);
    const auto vals = m.row_values(r);
    for (std::size_t k = 0; k < cols.size(); ++k) {
      auto out_row = out.row(cols[k]);
      const double v = vals[k];
      for (std::size_t j = 0; j < x_row.size(); ++j) out_row[j] += v * x_row[j];
    }
  }
  return out;
}

}  // namespace gresnet
