#pragma once

#include <cstddef>
#include <span>
#include <tuple>
#include <vector>

#include "gresnet/graph.hpp"
#include "gresnet/matrix.hpp"

namespace gresnet {

/// Compressed sparse row matrix. Column indices are strictly increasing
/// within each row and no explicit zeros are stored.
class SparseMatrix {
 public:
  using Triplet = std::tuple<std::size_t, std::size_t, double>;

  SparseMatrix() = default;
  /// Duplicate coordinates are summed; entries that end up exactly zero are
  /// dropped. Throws ShapeError for out-of-range coordinates.
  static SparseMatrix from_triplets(std::size_t rows, std::size_t cols,
                                    std::vector<Triplet> triplets);
  static SparseMatrix identity(std::size_t n);
  static SparseMatrix from_dense(const Matrix& m);
  /// Adopts raw CSR arrays. Throws ShapeError unless they satisfy the class
  /// invariants (sorted columns, no explicit zeros).
  static SparseMatrix from_csr(std::size_t rows, std::size_t cols, std::vector<std::size_t> row_ptr,
                               std::vector<std::size_t> col_index, std::vector<double> values);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t nonzeros() const { return values_.size(); }

  std::span<const std::size_t> row_columns(std::size_t r) const {
    return {col_index_.data() + row_ptr_[r], row_ptr_[r + 1] - row_ptr_[r]};
  }
  std::span<const double> row_values(std::size_t r) const {
    return {values_.data() + row_ptr_[r], row_ptr_[r + 1] - row_ptr_[r]};
  }
  /// Stored value or 0.
  double at(std::size_t r, std::size_t c) const;

  const std::vector<std::size_t>& row_ptr() const { return row_ptr_; }
  const std::vector<std::size_t>& col_index() const { return col_index_; }
  const std::vector<double>& values() const { return values_; }

  SparseMatrix transposed() const;
  Matrix to_dense() const;

  /// Largest |m(i,j) - m(j,i)| over all coordinates (requires square).
  double asymmetry() const;

  bool operator==(const SparseMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::size_t> row_ptr_{0};
  std::vector<std::size_t> col_index_;
  std::vector<double> values_;
};

/// D̃^{-1/2} (A + I) D̃^{-1/2} with d̃(i) = degree(i) + 1.
SparseMatrix normalized_adjacency(const Graph& g);

/// Column-stochastic transition matrix Ã D̃^{-1}: entry (i, j) = Ã(i,j)/d̃(j),
/// with Ã = A + I when `add_self_loops` and A otherwise. Without self-loops
/// an isolated node leaves a zero column and raises GraphError.
SparseMatrix random_walk_matrix(const Graph& g, bool add_self_loops);

/// Symmetric matrix similar to random_walk_matrix(g, add_self_loops):
/// D̃^{-1/2} Ã D̃^{-1/2}. Equals normalized_adjacency(g) when self-loops are on.
SparseMatrix symmetric_walk_form(const Graph& g, bool add_self_loops);

/// 0.5 * m + 0.5 * I. Throws ShapeError for non-square input.
SparseMatrix lazy_walk_matrix(const SparseMatrix& m);

/// Plain 0/1 adjacency matrix.
SparseMatrix adjacency_matrix(const Graph& g);

/// Exact sparse-dense product m * x.
Matrix spmm(const SparseMatrix& m, const Matrix& x);
/// mᵀ * x without materializing the transpose.
Matrix spmm_transposed(const SparseMatrix& m, const Matrix& x);

}  // namespace gresnet
