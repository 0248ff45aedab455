#pragma once

// Brute-force active-set solver for the GEM projection, independent of the
// projected-gradient dual solver it checks. Enumerates every subset of
// constraints as a candidate active set and returns the unique KKT point.

#include <cmath>
#include <stdexcept>
#include <vector>

namespace merlab::testing {

// Solves A x = b in place by Gaussian elimination with partial pivoting.
inline std::vector<double> solve_dense(std::vector<double> a,
                                       std::vector<double> b) {
  const int n = static_cast<int>(b.size());
  for (int col = 0; col < n; ++col) {
    int piv = col;
    for (int r = col + 1; r < n; ++r)
      if (std::abs(a[r * n + col]) > std::abs(a[piv * n + col])) piv = r;
    if (std::abs(a[piv * n + col]) < 1e-14)
      throw std::runtime_error("singular active-set system");
    if (piv != col) {
      for (int c = 0; c < n; ++c) std::swap(a[col * n + c], a[piv * n + c]);
      std::swap(b[col], b[piv]);
    }
    for (int r = col + 1; r < n; ++r) {
      const double f = a[r * n + col] / a[col * n + col];
      for (int c = col; c < n; ++c) a[r * n + c] -= f * a[col * n + c];
      b[r] -= f * b[col];
    }
  }
  std::vector<double> x(n);
  for (int r = n - 1; r >= 0; --r) {
    double s = b[r];
    for (int c = r + 1; c < n; ++c) s -= a[r * n + c] * x[c];
    x[r] = s / a[r * n + r];
  }
  return x;
}

// min 1/2 ||x - g||^2 s.t. x . m_t >= 0 for all t (margin 0).
inline std::vector<double> gem_projection_oracle(
    const std::vector<double>& g, const std::vector<std::vector<double>>& mem) {
  const int t = static_cast<int>(mem.size());
  const std::size_t dim = g.size();
  auto dot = [&](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < dim; ++i) s += a[i] * b[i];
    return s;
  };

  for (int mask = 0; mask < (1 << t); ++mask) {
    std::vector<int> active;
    for (int i = 0; i < t; ++i)
      if (mask & (1 << i)) active.push_back(i);

    std::vector<double> x = g;
    std::vector<double> v;
    if (!active.empty()) {
      const int a = static_cast<int>(active.size());
      std::vector<double> gram(a * a), rhs(a);
      for (int i = 0; i < a; ++i) {
        rhs[i] = -dot(mem[active[i]], g);
        for (int j = 0; j < a; ++j)
          gram[i * a + j] = dot(mem[active[i]], mem[active[j]]);
      }
      try {
        v = solve_dense(gram, rhs);
      } catch (const std::runtime_error&) {
        continue;  // degenerate subset
      }
      for (int i = 0; i < a; ++i)
        for (std::size_t d = 0; d < dim; ++d) x[d] += v[i] * mem[active[i]][d];
    }

    bool ok = true;
    for (double vi : v) ok &= vi >= -1e-10;
    for (int i = 0; i < t && ok; ++i) ok &= dot(mem[i], x) >= -1e-9;
    if (ok) return x;
  }
  throw std::runtime_error("gem oracle: no feasible active set found");
}

}  // namespace merlab::testing
