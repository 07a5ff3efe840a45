#pragma once

// Shared fixtures and brute-force oracles for the test binaries. Nothing in
// here calls into the code paths the tests check.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "gresnet/graph.hpp"
#include "gresnet/matrix.hpp"
#include "gresnet/rng.hpp"

namespace gresnet::testing {

inline Graph triangle() { return build_graph(3, {{0, 1}, {1, 2}, {0, 2}}); }
inline Graph path(std::size_t n) {
  std::vector<Edge> e;
  for (std::size_t i = 0; i + 1 < n; ++i) e.emplace_back(i, i + 1);
  return build_graph(n, e);
}

/// Erdős–Rényi graph with edge probability p.
inline Graph random_graph(std::size_t n, double p, Rng& rng) {
  std::vector<Edge> e;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (uniform01(rng) < p) e.emplace_back(i, j);
  return build_graph(n, e);
}

/// Random spanning tree plus extra random edges: always connected.
inline Graph random_connected_graph(std::size_t n, std::size_t extra, Rng& rng) {
  std::vector<Edge> e;
  for (std::size_t i = 1; i < n; ++i) e.emplace_back(i, static_cast<std::size_t>(rng() % i));
  for (std::size_t k = 0; k < extra; ++k) e.emplace_back(rng() % n, rng() % n);
  return build_graph(n, e);
}

/// Dense 0/1 adjacency assembled straight from the edge list.
inline Matrix dense_adjacency(const Graph& g) {
  Matrix a(g.node_count(), g.node_count());
  for (auto [i, j] : g.edges()) a(i, j) = a(j, i) = 1.0;
  return a;
}

/// Triple-loop reference product.
inline Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      out(i, j) = s;
    }
  return out;
}

inline Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double lo = -1.0,
                            double hi = 1.0) {
  Matrix m(r, c);
  for (double& v : m.data()) v = lo + (hi - lo) * uniform01(rng);
  return m;
}

/// Random point on the probability simplex.
inline std::vector<double> random_simplex(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  double s = 0.0;
  for (double& x : v) {
    x = -std::log(1.0 - uniform01(rng));
    s += x;
  }
  for (double& x : v) x /= s;
  return v;
}

/// Cyclic Jacobi eigenvalue iteration for a dense symmetric matrix; returns
/// eigenvalues in ascending order.
inline std::vector<double> jacobi_eigenvalues(Matrix a) {
  const std::size_t n = a.rows();
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(a(p, q)) < 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
      }
    }
  }
  std::vector<double> ev(n);
  for (std::size_t i = 0; i < n; ++i) ev[i] = a(i, i);
  std::sort(ev.begin(), ev.end());
  return ev;
}

/// Central differences of a scalar function with respect to every entry of
/// `x`, which is perturbed in place and restored.
template <class F>
Matrix numeric_gradient(F&& f, Matrix& x, double h = 1e-5) {
  Matrix g(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x.data()[i];
    x.data()[i] = saved + h;
    const double up = f();
    x.data()[i] = saved - h;
    const double down = f();
    x.data()[i] = saved;
    g.data()[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// ‖a − b‖ / max(‖a‖, ‖b‖), and 0 when both vanish.
inline double relative_error(const Matrix& a, const Matrix& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a.data()[i] - b.data()[i]) * (a.data()[i] - b.data()[i]);
    na += a.data()[i] * a.data()[i];
    nb += b.data()[i] * b.data()[i];
  }
  const double denom = std::sqrt(std::max(na, nb));
  return denom == 0.0 ? 0.0 : std::sqrt(diff) / denom;
}

}  // namespace gresnet::testing
