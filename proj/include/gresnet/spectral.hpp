#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gresnet/graph.hpp"
#include "gresnet/matrix.hpp"
#include "gresnet/sparse_matrix.hpp"

namespace gresnet::spectral {

enum class OperatorKind { normalized, random_walk, lazy };

std::string to_string(OperatorKind kind);
/// Accepts "normalized", "random-walk"/"random_walk", "lazy".
OperatorKind parse_operator_kind(const std::string& text);

/// Extremal eigenvalues of a symmetric operator.
struct SpectrumSummary {
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  double lambda_n = 0.0;
  /// max{lambda2, |lambda_n|}; 0 for a 1x1 operator, which has no
  /// subdominant eigenvalue.
  double lambda_max = 0.0;
};

enum class EigenMethod { automatic, dense, lanczos };

/// Largest n for which EigenMethod::automatic uses the dense solver.
inline constexpr std::size_t kDenseEigenLimit = 2048;

/// λ1 ≥ λ2 ≥ λn of a symmetric matrix. Dense self-adjoint decomposition up to
/// kDenseEigenLimit, otherwise Lanczos with full reorthogonalization and
/// locking of the dominant eigenvector (so repeated top eigenvalues are
/// resolved), converged to residual 1e-8.
/// Throws ShapeError for non-square input and PreconditionError when the
/// matrix is asymmetric beyond 1e-9.
SpectrumSummary eigen_extremes(const SparseMatrix& m, EigenMethod method = EigenMethod::automatic);

/// Unit-norm eigenvector of the largest eigenvalue, sign fixed so the entry of
/// largest magnitude is positive.
std::vector<double> dominant_eigenvector(const SparseMatrix& m,
                                         EigenMethod method = EigenMethod::automatic);

/// Stationary distribution of a Markov chain on a graph.
struct StationaryDistribution {
  std::vector<double> pi;

  double min() const;
  double max() const;
  std::size_t size() const { return pi.size(); }
};

/// random_walk: π(i) = d̃(i) / Σ d̃ with d̃ = degree (+1 when self-loops are on).
/// normalized / lazy: the uniform distribution 1/n.
/// Throws GraphError when the chain has no unique stationary distribution:
/// the graph is disconnected, or (random walk without self-loops) bipartite.
StationaryDistribution stationary_distribution(const Graph& g, OperatorKind kind,
                                               bool self_loops = true);

/// The degree formula alone, without the uniqueness checks.
StationaryDistribution degree_distribution(const Graph& g, bool self_loops);

/// Depth bound: a positive integer, or infinite.
struct BoundDepth {
  std::optional<std::int64_t> value;

  static BoundDepth infinite() { return {}; }
  bool is_infinite() const { return !value.has_value(); }
  bool operator==(const BoundDepth&) const = default;
};

/// Empirically measured depth, or not reached within the iteration budget.
struct EmpiricalDepth {
  std::optional<std::int64_t> value;

  static EmpiricalDepth not_reached() { return {}; }
  bool reached() const { return value.has_value(); }
  bool operator==(const EmpiricalDepth&) const = default;
};

/// λ_max at or above this is treated as exactly 1.
inline constexpr double kUnitEigenvalueTolerance = 1e-12;
/// λ_max in [1 - this, 1) produces a near-reducible/near-bipartite warning.
inline constexpr double kNearUnitWarning = 1e-6;

/// Smallest t with λ_max^t ≤ ε/√n, i.e. ⌈log(ε/√n) / log λ_max⌉, n = |π|.
/// Only the size of π enters. For a strongly non-uniform walk distribution
/// this is not a worst-case L1 guarantee (that needs an extra
/// sqrt(max π / min π) factor), but measured depths stay below it.
/// Returns infinite when λ_max ≥ 1 - 1e-12 and 1 when λ_max = 0.
/// Throws PreconditionError unless ε ∈ (0, 1).
BoundDepth theoretical_limit_bound(const SpectrumSummary& s, const StationaryDistribution& pi,
                                   double epsilon);

/// Same closed form driven by λ2 alone; `s` is the spectrum of the lazy
/// operator, whose eigenvalues are nonnegative so λ_max = λ2.
BoundDepth lazy_limit_bound(const SpectrumSummary& s, const StationaryDistribution& pi,
                            double epsilon);

/// Smallest k in [1, max_iter] with ‖mᵏ x − Π*‖₁ ≤ ε, where Π* broadcasts π
/// across the columns of x and ‖·‖₁ is the induced matrix 1-norm (largest
/// column L1 distance). Throws PreconditionError when a column of x does
/// not sum to 1 within 1e-9, ShapeError on dimension mismatch.
EmpiricalDepth empirical_animation_limit(const SparseMatrix& m, const Matrix& x,
                                         const StationaryDistribution& pi, double epsilon,
                                         std::int64_t max_iter);

/// Symmetric-operator variant: the limit of column c is v (vᵀ x_c), with v the
/// unit dominant eigenvector. Same norm and preconditions as above.
EmpiricalDepth empirical_animation_limit_projected(const SparseMatrix& m, const Matrix& x,
                                                   std::span<const double> dominant,
                                                   double epsilon, std::int64_t max_iter);

/// Representation distance at convergence driven by degree alone:
/// d_x · |d(i) − d(j)| / (2|E|). Throws GraphError for an edgeless graph.
double degree_representation_distance(const Graph& g, std::size_t i, std::size_t j,
                                      std::size_t feature_width);

/// ‖(Â(i,:) − Â(j,:)) X‖₁.
double feature_representation_distance(const SparseMatrix& a_hat, const Matrix& x, std::size_t i,
                                       std::size_t j);

/// Standard p-norm; p = +infinity gives the max norm. Throws
/// PreconditionError for p < 1.
double p_norm(std::span<const double> v, double p);

struct SingularValueExtremes {
  double sigma_min = 0.0;
  double sigma_max = 0.0;
};

/// Extreme singular values of a dense matrix, from the eigenvalues of MᵀM.
SingularValueExtremes singular_value_extremes(const Matrix& m);

/// Full report for one operator on one graph.
struct LimitReport {
  std::size_t n = 0;
  std::size_t edge_count = 0;
  SpectrumSummary spectrum;
  double pi_min = 0.0;
  double epsilon = 0.0;
  BoundDepth bound_depth;
  EmpiricalDepth empirical_depth;
  OperatorKind operator_kind = OperatorKind::normalized;
  std::optional<std::string> warning;
};

struct LimitOptions {
  OperatorKind kind = OperatorKind::normalized;
  /// Only affects the random-walk operator; the other two always carry self-loops.
  bool self_loops = true;
  double epsilon = 1e-4;
  /// 0 skips the measured depth (x is then ignored).
  std::int64_t max_iter = 10000;
  EigenMethod method = EigenMethod::automatic;
};

/// Builds the chosen operator on g, extracts its spectrum, and computes both
/// the closed-form bound and the empirical depth from the column-normalized
/// input x. Graphs without a unique stationary distribution (disconnected,
/// or periodic walks) still produce a report: the degree/uniform formula is
/// used for π and the reason is recorded in `warning`.
LimitReport analyze_limit(const Graph& g, const Matrix& x, const LimitOptions& options);

}  // namespace gresnet::spectral
