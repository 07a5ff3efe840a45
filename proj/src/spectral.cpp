#include "gresnet/spectral.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "gresnet/error.hpp"
#include "gresnet/rng.hpp"

namespace gresnet::spectral {

std::string to_string(OperatorKind kind) {
  switch (kind) {
    case OperatorKind::normalized: return "normalized";
    case OperatorKind::random_walk: return "random_walk";
    case OperatorKind::lazy: return "lazy";
  }
  return "unknown";
}

OperatorKind parse_operator_kind(const std::string& text) {
  if (text == "normalized") return OperatorKind::normalized;
  if (text == "random-walk" || text == "random_walk") return OperatorKind::random_walk;
  if (text == "lazy") return OperatorKind::lazy;
  throw PreconditionError("unknown operator kind '" + text + "'");
}

namespace {

constexpr double kSymmetryTolerance = 1e-9;
constexpr double kLanczosResidual = 1e-8;

void require_symmetric(const SparseMatrix& m) {
  if (m.rows() != m.cols()) {
    throw ShapeError("eigen_extremes: expected a square matrix, got " + std::to_string(m.rows()) +
                     "x" + std::to_string(m.cols()));
  }
  const double asym = m.asymmetry();
  if (asym > kSymmetryTolerance) {
    throw PreconditionError("eigen_extremes: matrix is not symmetric (max |m - mᵀ| = " +
                            std::to_string(asym) + ")");
  }
}

Eigen::MatrixXd to_eigen(const SparseMatrix& m) {
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m.rows()),
                                            static_cast<Eigen::Index>(m.cols()));
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto cols = m.row_columns(r);
    const auto vals = m.row_values(r);
    for (std::size_t k = 0; k < cols.size(); ++k)
      d(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(cols[k])) = vals[k];
  }
  return d;
}

SpectrumSummary summarize(double l1, double l2, double ln, std::size_t n) {
  SpectrumSummary s{l1, l2, ln, 0.0};
  if (n > 1) s.lambda_max = std::max(l2, std::abs(ln));
  return s;
}

void fix_sign(std::vector<double>& v) {
  const auto it = std::max_element(v.begin(), v.end(),
                                   [](double a, double b) { return std::abs(a) < std::abs(b); });
  if (it != v.end() && *it < 0)
    for (double& x : v) x = -x;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

double normalize(std::vector<double>& v) {
  const double nrm = std::sqrt(dot(v, v));
  if (nrm > 0)
    for (double& x : v) x /= nrm;
  return nrm;
}

std::vector<double> multiply(const SparseMatrix& m, std::span<const double> x) {
  std::vector<double> y(m.rows(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto cols = m.row_columns(r);
    const auto vals = m.row_values(r);
    double s = 0.0;
    for (std::size_t k = 0; k < cols.size(); ++k) s += vals[k] * x[cols[k]];
    y[r] = s;
  }
  return y;
}

// Orthogonalizes v against every vector in `sets` (classical Gram-Schmidt,
// applied twice for numerical orthogonality).
void orthogonalize(std::vector<double>& v,
                   std::initializer_list<const std::vector<std::vector<double>>*> sets) {
  for (int pass = 0; pass < 2; ++pass)
    for (const auto* set : sets)
      for (const auto& q : *set) axpy(-dot(q, v), q, v);
}

struct LanczosOutcome {
  double largest = 0.0;
  double smallest = 0.0;
  std::vector<double> largest_vector;
};

// Lanczos with full reorthogonalization on the complement of `locked`.
// Stops once the requested extremal Ritz pairs have residual below
// kLanczosResidual, or when the Krylov space becomes invariant (for a random
// start that space already holds every distinct eigenvalue on the complement).
LanczosOutcome lanczos(const SparseMatrix& m, const std::vector<std::vector<double>>& locked,
                       bool need_smallest, bool need_vector, std::uint64_t seed) {
  const std::size_t n = m.rows();
  const std::size_t space = n - locked.size();
  if (space == 0) throw NumericError("lanczos: nothing left to explore after locking");
  const std::size_t max_steps = std::min<std::size_t>(space, 3000);

  Rng rng(seed);
  std::vector<std::vector<double>> basis;
  std::vector<double> alpha;
  std::vector<double> beta;  // beta[k] couples basis[k] and basis[k+1]

  std::vector<double> q(n);
  for (double& x : q) x = uniform01(rng) - 0.5;
  orthogonalize(q, {&locked});
  if (normalize(q) == 0.0) throw NumericError("lanczos: degenerate start vector");

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> tri;
  auto solve_tridiagonal = [&] {
    const auto k = static_cast<Eigen::Index>(alpha.size());
    Eigen::VectorXd d = Eigen::Map<const Eigen::VectorXd>(alpha.data(), k);
    Eigen::VectorXd e(std::max<Eigen::Index>(k - 1, 0));
    for (Eigen::Index i = 0; i + 1 < k; ++i) e(i) = beta[static_cast<std::size_t>(i)];
    tri.computeFromTridiagonal(d, e, Eigen::ComputeEigenvectors);
  };

  bool converged = false;
  while (true) {
    basis.push_back(q);
    std::vector<double> w = multiply(m, basis.back());
    const double a = dot(basis.back(), w);
    alpha.push_back(a);
    axpy(-a, basis.back(), w);
    if (basis.size() > 1) axpy(-beta.back(), basis[basis.size() - 2], w);
    orthogonalize(w, {&locked, &basis});
    const double b = std::sqrt(dot(w, w));
    const std::size_t k = basis.size();

    const bool exhausted = k >= max_steps || b < 1e-12;
    if (exhausted || k % 5 == 0) {
      solve_tridiagonal();
      const auto last = static_cast<Eigen::Index>(k - 1);
      const double r_top = std::abs(b * tri.eigenvectors()(last, static_cast<Eigen::Index>(k - 1)));
      const double r_bottom = std::abs(b * tri.eigenvectors()(last, 0));
      converged = exhausted || (r_top < kLanczosResidual &&
                                (!need_smallest || r_bottom < kLanczosResidual));
      if (exhausted && k >= max_steps && b >= 1e-12 &&
          (r_top >= kLanczosResidual || (need_smallest && r_bottom >= kLanczosResidual))) {
        throw NumericError("lanczos: extremal eigenvalues did not converge within " +
                           std::to_string(max_steps) + " steps");
      }
      if (converged) break;
    }
    beta.push_back(b);
    q = std::move(w);
    for (double& x : q) x /= b;
  }

  LanczosOutcome out;
  const auto k = static_cast<Eigen::Index>(alpha.size());
  out.largest = tri.eigenvalues()(k - 1);
  out.smallest = tri.eigenvalues()(0);
  if (need_vector) {
    out.largest_vector.assign(n, 0.0);
    for (Eigen::Index j = 0; j < k; ++j)
      axpy(tri.eigenvectors()(j, k - 1), basis[static_cast<std::size_t>(j)], out.largest_vector);
    normalize(out.largest_vector);
    fix_sign(out.largest_vector);
  }
  return out;
}

bool use_dense(std::size_t n, EigenMethod method) {
  if (method == EigenMethod::dense) return true;
  if (method == EigenMethod::lanczos) return false;
  return n <= kDenseEigenLimit;
}

constexpr std::uint64_t kLanczosSeed = 0x5eed1a2c05ULL;

}  // namespace

SpectrumSummary eigen_extremes(const SparseMatrix& m, EigenMethod method) {
  require_symmetric(m);
  const std::size_t n = m.rows();
  if (n == 1) {
    const double v = m.at(0, 0);
    return summarize(v, v, v, 1);
  }
  if (use_dense(n, method)) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(to_eigen(m), Eigen::EigenvaluesOnly);
    const auto& ev = solver.eigenvalues();  // ascending
    const auto last = static_cast<Eigen::Index>(n - 1);
    return summarize(ev(last), ev(last - 1), ev(0), n);
  }
  const auto first = lanczos(m, {}, /*need_smallest=*/true, /*need_vector=*/true, kLanczosSeed);
  const std::vector<std::vector<double>> locked{first.largest_vector};
  const auto second = lanczos(m, locked, /*need_smallest=*/false, /*need_vector=*/false,
                              derive_seed(kLanczosSeed, "deflated"));
  return summarize(first.largest, std::min(second.largest, first.largest), first.smallest, n);
}

std::vector<double> dominant_eigenvector(const SparseMatrix& m, EigenMethod method) {
  require_symmetric(m);
  const std::size_t n = m.rows();
  if (use_dense(n, method)) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(to_eigen(m));
    const Eigen::VectorXd top = solver.eigenvectors().col(static_cast<Eigen::Index>(n - 1));
    std::vector<double> v(top.data(), top.data() + n);
    fix_sign(v);
    return v;
  }
  return lanczos(m, {}, false, true, kLanczosSeed).largest_vector;
}

double StationaryDistribution::min() const { return *std::min_element(pi.begin(), pi.end()); }
double StationaryDistribution::max() const { return *std::max_element(pi.begin(), pi.end()); }

StationaryDistribution degree_distribution(const Graph& g, bool self_loops) {
  StationaryDistribution d;
  d.pi.resize(g.node_count());
  double total = 0.0;
  for (std::size_t i = 0; i < g.node_count(); ++i) {
    d.pi[i] = static_cast<double>(g.degree(i)) + (self_loops ? 1.0 : 0.0);
    total += d.pi[i];
  }
  if (total == 0.0) throw GraphError("degree_distribution: graph has no edges and no self-loops");
  for (double& p : d.pi) p /= total;
  return d;
}

StationaryDistribution stationary_distribution(const Graph& g, OperatorKind kind, bool self_loops) {
  if (!is_connected(g)) {
    throw GraphError(
        "stationary_distribution: graph is disconnected, the chain is reducible and has no "
        "unique stationary distribution");
  }
  if (kind == OperatorKind::random_walk) {
    if (!self_loops && is_bipartite(g)) {
      throw GraphError(
          "stationary_distribution: graph is bipartite and self-loops are off, the chain is "
          "periodic and does not converge");
    }
    return degree_distribution(g, self_loops);
  }
  const auto n = static_cast<double>(g.node_count());
  return {std::vector<double>(g.node_count(), 1.0 / n)};
}

namespace {

void require_epsilon(double epsilon) {
  if (!(epsilon > 0.0 && epsilon < 1.0))
    throw PreconditionError("epsilon must lie in (0, 1), got " + std::to_string(epsilon));
}

BoundDepth closed_form(double lambda, const StationaryDistribution& pi, double epsilon) {
  require_epsilon(epsilon);
  if (pi.size() == 0) throw PreconditionError("stationary distribution is empty");
  lambda = std::abs(lambda);
  if (lambda >= 1.0 - kUnitEigenvalueTolerance) return BoundDepth::infinite();
  if (lambda == 0.0) return {1};
  const double target = epsilon / std::sqrt(static_cast<double>(pi.size()));
  const double t = std::ceil(std::log(target) / std::log(lambda));
  return {std::max<std::int64_t>(1, static_cast<std::int64_t>(t))};
}

void require_column_normalized(const Matrix& x) {
  for (std::size_t c = 0; c < x.cols(); ++c) {
    double s = 0.0;
    for (std::size_t r = 0; r < x.rows(); ++r) s += x(r, c);
    if (std::abs(s - 1.0) > 1e-9) {
      throw PreconditionError("empirical_animation_limit: column " + std::to_string(c) +
                              " sums to " + std::to_string(s) + ", expected 1");
    }
  }
}

EmpiricalDepth iterate_until(const SparseMatrix& m, const Matrix& x, const Matrix& target,
                             double epsilon, std::int64_t max_iter) {
  require_epsilon(epsilon);
  if (m.rows() != m.cols() || m.cols() != x.rows())
    throw ShapeError("empirical_animation_limit: operator and feature shapes do not conform");
  require_column_normalized(x);
  Matrix t = x;
  std::vector<double> col_dist(x.cols());
  for (std::int64_t k = 1; k <= max_iter; ++k) {
    t = spmm(m, t);
    std::fill(col_dist.begin(), col_dist.end(), 0.0);
    for (std::size_t r = 0; r < t.rows(); ++r)
      for (std::size_t c = 0; c < t.cols(); ++c) col_dist[c] += std::abs(t(r, c) - target(r, c));
    const double dist = *std::max_element(col_dist.begin(), col_dist.end());
    if (!std::isfinite(dist)) throw NumericError("empirical_animation_limit: iterate diverged");
    if (dist <= epsilon) return {k};
  }
  return EmpiricalDepth::not_reached();
}

}  // namespace

BoundDepth theoretical_limit_bound(const SpectrumSummary& s, const StationaryDistribution& pi,
                                   double epsilon) {
  return closed_form(s.lambda_max, pi, epsilon);
}

BoundDepth lazy_limit_bound(const SpectrumSummary& s, const StationaryDistribution& pi,
                            double epsilon) {
  return closed_form(pi.size() > 1 ? s.lambda2 : 0.0, pi, epsilon);
}

EmpiricalDepth empirical_animation_limit(const SparseMatrix& m, const Matrix& x,
                                         const StationaryDistribution& pi, double epsilon,
                                         std::int64_t max_iter) {
  if (pi.size() != x.rows())
    throw ShapeError("empirical_animation_limit: stationary distribution length mismatch");
  Matrix target(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) target(r, c) = pi.pi[r];
  return iterate_until(m, x, target, epsilon, max_iter);
}

EmpiricalDepth empirical_animation_limit_projected(const SparseMatrix& m, const Matrix& x,
                                                   std::span<const double> dominant,
                                                   double epsilon, std::int64_t max_iter) {
  if (dominant.size() != x.rows())
    throw ShapeError("empirical_animation_limit_projected: eigenvector length mismatch");
  Matrix target(x.rows(), x.cols());
  for (std::size_t c = 0; c < x.cols(); ++c) {
    double coef = 0.0;
    for (std::size_t r = 0; r < x.rows(); ++r) coef += dominant[r] * x(r, c);
    for (std::size_t r = 0; r < x.rows(); ++r) target(r, c) = coef * dominant[r];
  }
  return iterate_until(m, x, target, epsilon, max_iter);
}

double degree_representation_distance(const Graph& g, std::size_t i, std::size_t j,
                                      std::size_t feature_width) {
  if (i >= g.node_count() || j >= g.node_count())
    throw GraphError("degree_representation_distance: node id out of range");
  if (g.edge_count() == 0) throw GraphError("degree_representation_distance: graph has no edges");
  const double diff = std::abs(static_cast<double>(g.degree(i)) - static_cast<double>(g.degree(j)));
  return static_cast<double>(feature_width) * diff / (2.0 * static_cast<double>(g.edge_count()));
}

double feature_representation_distance(const SparseMatrix& a_hat, const Matrix& x, std::size_t i,
                                       std::size_t j) {
  if (a_hat.cols() != x.rows())
    throw ShapeError("feature_representation_distance: operator and features do not conform");
  if (i >= a_hat.rows() || j >= a_hat.rows())
    throw ShapeError("feature_representation_distance: node id out of range");
  // Merge the two sorted rows first so identical rows cancel exactly.
  const auto ci = a_hat.row_columns(i), cj = a_hat.row_columns(j);
  const auto vi = a_hat.row_values(i), vj = a_hat.row_values(j);
  std::vector<double> diff(x.cols(), 0.0);
  std::size_t p = 0, q = 0;
  while (p < ci.size() || q < cj.size()) {
    if (q == cj.size() || (p < ci.size() && ci[p] < cj[q])) {
      axpy(vi[p], x.row(ci[p]), diff);
      ++p;
    } else if (p == ci.size() || cj[q] < ci[p]) {
      axpy(-vj[q], x.row(cj[q]), diff);
      ++q;
    } else {
      const double c = vi[p] - vj[q];
      if (c != 0.0) axpy(c, x.row(ci[p]), diff);
      ++p;
      ++q;
    }
  }
  double total = 0.0;
  for (double d : diff) total += std::abs(d);
  return total;
}

double p_norm(std::span<const double> v, double p) {
  if (!(p >= 1.0)) throw PreconditionError("p_norm: p must be at least 1");
  if (std::isinf(p)) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
  }
  // Scale by the largest magnitude so large p cannot overflow.
  double scale = 0.0;
  for (double x : v) scale = std::max(scale, std::abs(x));
  if (scale == 0.0) return 0.0;
  double s = 0.0;
  for (double x : v) s += std::pow(std::abs(x) / scale, p);
  return scale * std::pow(s, 1.0 / p);
}

SingularValueExtremes singular_value_extremes(const Matrix& m) {
  if (m.size() == 0) throw ShapeError("singular_value_extremes: empty matrix");
  const Matrix gram = matmul_tn(m, m);
  Eigen::MatrixXd g(static_cast<Eigen::Index>(gram.rows()), static_cast<Eigen::Index>(gram.cols()));
  for (std::size_t r = 0; r < gram.rows(); ++r)
    for (std::size_t c = 0; c < gram.cols(); ++c)
      g(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = gram(r, c);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(g, Eigen::EigenvaluesOnly);
  const auto& ev = solver.eigenvalues();
  SingularValueExtremes out;
  out.sigma_max = std::sqrt(std::max(0.0, ev(ev.size() - 1)));
  // A wide matrix has cols - rows structurally zero singular values.
  out.sigma_min = m.rows() < m.cols() ? 0.0 : std::sqrt(std::max(0.0, ev(0)));
  return out;
}

}  // namespace gresnet::spectral

namespace gresnet::spectral {

LimitReport analyze_limit(const Graph& g, const Matrix& x, const LimitOptions& options) {
  LimitReport report;
  report.n = g.node_count();
  report.edge_count = g.edge_count();
  report.epsilon = options.epsilon;
  report.operator_kind = options.kind;
  const bool measure = options.max_iter > 0;

  std::vector<std::string> warnings;
  StationaryDistribution pi;
  try {
    pi = stationary_distribution(g, options.kind, options.self_loops);
  } catch (const GraphError& e) {
    warnings.emplace_back(e.what());
    pi = options.kind == OperatorKind::random_walk
             ? degree_distribution(g, options.self_loops)
             : StationaryDistribution{std::vector<double>(
                   g.node_count(), 1.0 / static_cast<double>(g.node_count()))};
  }
  report.pi_min = pi.min();

  const SparseMatrix a_hat = normalized_adjacency(g);
  switch (options.kind) {
    case OperatorKind::normalized: {
      report.spectrum = eigen_extremes(a_hat, options.method);
      report.bound_depth = theoretical_limit_bound(report.spectrum, pi, options.epsilon);
      if (!measure) break;
      const auto v1 = dominant_eigenvector(a_hat, options.method);
      report.empirical_depth = empirical_animation_limit_projected(a_hat, x, v1, options.epsilon,
                                                                   options.max_iter);
      break;
    }
    case OperatorKind::random_walk: {
      const SparseMatrix walk = random_walk_matrix(g, options.self_loops);
      report.spectrum =
          eigen_extremes(symmetric_walk_form(g, options.self_loops), options.method);
      report.bound_depth = theoretical_limit_bound(report.spectrum, pi, options.epsilon);
      if (!measure) break;
      report.empirical_depth =
          empirical_animation_limit(walk, x, pi, options.epsilon, options.max_iter);
      break;
    }
    case OperatorKind::lazy: {
      const SparseMatrix lazy = lazy_walk_matrix(a_hat);
      report.spectrum = eigen_extremes(lazy, options.method);
      report.bound_depth = lazy_limit_bound(report.spectrum, pi, options.epsilon);
      if (!measure) break;
      const auto v1 = dominant_eigenvector(a_hat, options.method);
      report.empirical_depth = empirical_animation_limit_projected(lazy, x, v1, options.epsilon,
                                                                   options.max_iter);
      break;
    }
  }

  const double governing =
      options.kind == OperatorKind::lazy ? report.spectrum.lambda2 : report.spectrum.lambda_max;
  if (governing < 1.0 - kUnitEigenvalueTolerance && governing >= 1.0 - kNearUnitWarning) {
    warnings.emplace_back("spectral gap below 1e-6: graph is nearly disconnected or bipartite");
  }
  if (!warnings.empty()) {
    std::string joined = warnings.front();
    for (std::size_t i = 1; i < warnings.size(); ++i) joined += "; " + warnings[i];
    report.warning = joined;
  }
  return report;
}

}  // namespace gresnet::spectral
