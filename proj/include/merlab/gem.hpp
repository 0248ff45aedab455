#pragma once

// Gradient projection for GEM: keep the incoming gradient as close as
// possible to its raw direction while removing negative dot products with
// per-task memory gradients.

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "merlab/nn.hpp"

namespace merlab {

struct GemSolveStats {
  bool projected = false;   // constraints were violated and a solve ran
  bool converged = true;    // final direction satisfies all constraints
  bool polished = false;    // active-set refinement was applied
  int iterations = 0;
};

namespace detail {

// Solves A x = b by Gaussian elimination with partial pivoting.
// Returns false when the system is numerically singular.
inline bool solve_spd(std::vector<double> a, std::vector<double> b,
                      std::vector<double>& x) {
  const int n = static_cast<int>(b.size());
  for (int col = 0; col < n; ++col) {
    int piv = col;
    for (int r = col + 1; r < n; ++r)
      if (std::abs(a[r * n + col]) > std::abs(a[piv * n + col])) piv = r;
    if (std::abs(a[piv * n + col]) < 1e-12) return false;
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
  x.assign(n, 0.0);
  for (int r = n - 1; r >= 0; --r) {
    double s = b[r];
    for (int c = r + 1; c < n; ++c) s -= a[r * n + c] * x[c];
    x[r] = s / a[r * n + r];
  }
  return true;
}

}  // namespace detail

// Solves  min 1/2 ||g' - g||^2  s.t.  g' . m_t >= 0  for all t
// through the dual quadratic program in v (one multiplier per task):
//   min_{v >= margin}  1/2 v^T (M M^T) v + (M g)^T v,    g' = g + M^T v
// by projected gradient descent with step 1/L, L = largest Gram diagonal,
// then an active-set polish of the fixed point (plain PGD stalls around
// 1e-7 feasibility once objective decrements drop below double precision).
// The margin is GEM's memory-strength knob (a lower bound on the duals).
// Modifies g in place; on non-convergence the caller should fall back to
// the raw gradient.
inline GemSolveStats gem_project(std::span<double> g,
                                 const std::vector<const double*>& mem,
                                 double margin, int max_iter = 500,
                                 double feas_tol = 1e-8) {
  GemSolveStats stats;
  const std::size_t dim = g.size();
  const int t = static_cast<int>(mem.size());
  if (t == 0) return stats;

  std::vector<double> q(t);
  bool violated = false;
  for (int i = 0; i < t; ++i) {
    q[i] = dot(mem[i], g.data(), dim);
    violated |= q[i] < 0.0;
  }
  if (!violated) return stats;
  stats.projected = true;

  std::vector<double> gram(static_cast<std::size_t>(t) * t);
  double max_diag = 0.0;
  for (int i = 0; i < t; ++i) {
    for (int j = i; j < t; ++j) {
      const double v = dot(mem[i], mem[j], dim);
      gram[i * t + j] = v;
      gram[j * t + i] = v;
    }
    max_diag = std::max(max_diag, gram[i * t + i]);
  }
  if (max_diag <= 0.0) return stats;  // degenerate memories: nothing to do

  const double lo = margin > 0.0 ? margin : 0.0;
  std::vector<double> v(t, lo), grad_v(t);
  const double step = 1.0 / max_diag;
  double vscale = 1.0;
  for (int it = 0; it < max_iter; ++it) {
    stats.iterations = it + 1;
    double move = 0.0;
    for (int i = 0; i < t; ++i) {
      double pv = 0.0;
      for (int j = 0; j < t; ++j) pv += gram[i * t + j] * v[j];
      grad_v[i] = pv + q[i];
    }
    double norm = 0.0;
    for (int i = 0; i < t; ++i) {
      const double next = std::max(v[i] - step * grad_v[i], lo);
      move += std::abs(next - v[i]);
      v[i] = next;
      norm = std::max(norm, std::abs(v[i]));
    }
    vscale = std::max(vscale, norm);
    if (!std::isfinite(norm) || norm > 1e12) {  // diverged: step too long
      stats.converged = false;
      return stats;
    }
    if (move < 1e-13 * vscale) break;
  }

  // Active-set polish: variables strictly above the bound satisfy
  // grad_v = 0 at the optimum; solve that equality system exactly.
  {
    std::vector<int> active;
    for (int i = 0; i < t; ++i)
      if (v[i] > lo + 1e-10 * vscale) active.push_back(i);
    if (!active.empty()) {
      const int a = static_cast<int>(active.size());
      std::vector<double> paa(a * a), rhs(a), va;
      for (int i = 0; i < a; ++i) {
        double off = q[active[i]];
        for (int j = 0; j < t; ++j)
          if (v[j] <= lo + 1e-10 * vscale) off += gram[active[i] * t + j] * lo;
        rhs[i] = -off;
        for (int j = 0; j < a; ++j)
          paa[i * a + j] = gram[active[i] * t + active[j]];
      }
      if (detail::solve_spd(paa, rhs, va)) {
        bool valid = true;
        for (double x : va) valid &= x >= lo - 1e-10 * vscale;
        if (valid) {
          std::vector<double> polished(t, lo);
          for (int i = 0; i < a; ++i) polished[active[i]] = va[i];
          // off-set variables must not want to increase
          for (int i = 0; i < t && valid; ++i) {
            if (polished[i] > lo) continue;
            double pv = 0.0;
            for (int j = 0; j < t; ++j) pv += gram[i * t + j] * polished[j];
            valid &= pv + q[i] >= -1e-9 * vscale;
          }
          if (valid) {
            v = polished;
            stats.polished = true;
          }
        }
      }
    }
  }

  for (int i = 0; i < t; ++i)
    if (v[i] != 0.0) axpy(g.data(), v[i], mem[i], dim);

  stats.converged = true;
  for (int i = 0; i < t; ++i)
    if (dot(mem[i], g.data(), dim) < -feas_tol) stats.converged = false;
  return stats;
}

}  // namespace merlab
