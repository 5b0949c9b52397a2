#pragma once

#include <cstddef>
#include <span>

#include "aotpot/tensor.hpp"

namespace aotpot {

/// Default sweep count for the residual-mixing projection.
inline constexpr std::size_t kSinkhornIterations = 20;

/// Approximately doubly stochastic matrix plus its convergence record.
///
/// Each sweep normalizes rows, then columns. Column sums are therefore exact
/// to round-off and the reported residual is carried by the row sums.
struct DoublyStochastic {
  Tensor matrix;  // [n, n], entrywise nonnegative
  std::size_t iters_used = 0;
  double residual = 0.0;  // max |row or column sum - 1|

  std::size_t size() const { return matrix.dim(0); }
  bool converged(double tolerance) const { return residual <= tolerance; }
};

/// max over rows and columns of |sum - 1|.
double stochastic_residual(const Tensor& m);

/// Projects exp(raw) towards the Birkhoff polytope with `iters` full
/// row/column sweeps. With `differentiable` set (and a tape active) the
/// whole normalization chain is recorded so gradients reach `raw`.
DoublyStochastic sinkhorn_project(const Tensor& raw, std::size_t iters = kSinkhornIterations,
                                  bool differentiable = false);

/// Ordered product chain[0] * chain[1] * ... ; residual is measured on the
/// product.
DoublyStochastic ds_compose(std::span<const DoublyStochastic> chain);

/// Largest singular value by power iteration on M^T M.
double spectral_norm(const Tensor& m, std::size_t max_steps = 100, double tol = 1e-10);

inline double spectral_norm_bound_check(const DoublyStochastic& m) {
  return spectral_norm(m.matrix);
}

}  // namespace aotpot
