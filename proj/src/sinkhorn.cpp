#include "aotpot/sinkhorn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace aotpot {

double stochastic_residual(const Tensor& m) {
  const std::size_t n = m.dim(0);
  const auto v = m.values();
  double r = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < n; ++j) row += v[i * n + j];
    r = std::max(r, std::abs(row - 1.0));
  }
  for (std::size_t j = 0; j < n; ++j) {
    double col = 0.0;
    for (std::size_t i = 0; i < n; ++i) col += v[i * n + j];
    r = std::max(r, std::abs(col - 1.0));
  }
  return r;
}

DoublyStochastic sinkhorn_project(const Tensor& raw, std::size_t iters, bool differentiable) {
  if (raw.rank() != 2 || raw.dim(0) != raw.dim(1)) {
    throw DimensionError("sinkhorn: square matrix required, got " + shape_str(raw.shape()));
  }
  if (iters == 0) throw std::invalid_argument("sinkhorn: iters must be >= 1");
  if (!all_finite(raw)) throw std::domain_error("sinkhorn: non-finite entries in raw matrix");

  const std::size_t n = raw.dim(0);
  DoublyStochastic out;
  out.iters_used = iters;
  if (n == 1) {
    out.matrix = Tensor({1, 1}, 1.0);
    return out;
  }

  if (differentiable && active_tape() != nullptr && raw.requires_grad()) {
    Tensor m = exp(raw);
    for (std::size_t k = 0; k < iters; ++k) {
      m = div(m, sum(m, 1, true));
      m = div(m, sum(m, 0, true));
    }
    out.matrix = m;
  } else {
    std::vector<double> m(raw.values().begin(), raw.values().end());
    for (auto& v : m) v = std::exp(v);
    std::vector<double> acc(n);
    for (std::size_t k = 0; k < iters; ++k) {
      for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += m[i * n + j];
        for (std::size_t j = 0; j < n; ++j) m[i * n + j] /= s;
      }
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) acc[j] += m[i * n + j];
      }
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) m[i * n + j] /= acc[j];
      }
    }
    out.matrix = Tensor({n, n}, std::move(m));
  }
  out.residual = stochastic_residual(out.matrix);
  return out;
}

DoublyStochastic ds_compose(std::span<const DoublyStochastic> chain) {
  if (chain.empty()) throw std::invalid_argument("ds_compose: empty chain");
  const std::size_t n = chain.front().size();
  Tensor product = chain.front().matrix.detach();
  std::size_t iters = chain.front().iters_used;
  for (std::size_t i = 1; i < chain.size(); ++i) {
    if (chain[i].size() != n) {
      throw DimensionError("ds_compose: matrix " + std::to_string(i) + " has size " +
                           std::to_string(chain[i].size()) + ", expected " + std::to_string(n));
    }
    product = matmul(product, chain[i].matrix.detach());
    iters = std::max(iters, chain[i].iters_used);
  }
  DoublyStochastic out;
  out.residual = stochastic_residual(product);
  out.matrix = std::move(product);
  out.iters_used = iters;
  return out;
}

double spectral_norm(const Tensor& m, std::size_t max_steps, double tol) {
  const std::size_t rows = m.dim(0), cols = m.dim(1);
  const auto a = m.values();
  std::vector<double> v(cols, 1.0 / std::sqrt(static_cast<double>(cols)));
  std::vector<double> mv(rows), w(cols);
  double sigma = 0.0;
  for (std::size_t step = 0; step < max_steps; ++step) {
    for (std::size_t i = 0; i < rows; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < cols; ++j) s += a[i * cols + j] * v[j];
      mv[i] = s;
    }
    std::fill(w.begin(), w.end(), 0.0);
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < cols; ++j) w[j] += a[i * cols + j] * mv[i];
    }
    double norm = 0.0;
    for (double x : w) norm += x * x;
    norm = std::sqrt(norm);
    if (norm == 0.0) return 0.0;
    const double next = std::sqrt(norm);  // ||M^T M v|| -> sigma^2 for unit v
    for (std::size_t j = 0; j < cols; ++j) v[j] = w[j] / norm;
    const bool done = step > 0 && std::abs(next - sigma) <= tol * std::max(1.0, next);
    sigma = next;
    if (done) break;
  }
  return sigma;
}

}  // namespace aotpot
