#pragma once

// Finite-difference oracle for reverse-mode gradients. Test-only.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "aotpot/tensor.hpp"

namespace aotpot::testing {

/// |analytic - numeric| / max(|analytic|, |numeric|, floor). The floor keeps
/// coordinates whose true derivative is ~0 from dividing round-off by zero.
inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6e", v);
  return buf;
}

inline double relative_error(double analytic, double numeric, double floor = 1e-7) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::string worst;
  std::size_t checked = 0;
};

/// Central differences of `loss` w.r.t. `coords` entries of `param`.
/// `loss` must rebuild the computation from scratch on each call.
/// order 2: (f(x+h) - f(x-h)) / 2h. order 4: five-point stencil, which allows
/// a larger h and so a lower round-off floor on deep compositions.
inline GradCheck check_gradient(const std::function<Tensor()>& loss, Tensor param,
                                const std::vector<std::size_t>& coords, const std::string& label,
                                double h = 1e-6, int order = 2, double floor = 1e-7) {
  param.zero_grad();
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor l = loss();
    tape.backward(l);
  }
  std::vector<double> analytic(param.numel(), 0.0);
  if (param.has_grad()) {
    auto g = param.grad();
    std::copy(g.begin(), g.end(), analytic.begin());
  }
  param.zero_grad();

  GradCheck result;
  auto values = param.values();
  for (std::size_t idx : coords) {
    const double saved = values[idx];
    auto at = [&](double offset) {
      values[idx] = saved + offset;
      return loss().item();
    };
    double numeric = 0.0;
    if (order == 4) {
      numeric = (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12.0 * h);
    } else {
      numeric = (at(h) - at(-h)) / (2.0 * h);
    }
    values[idx] = saved;
    const double err = relative_error(analytic[idx], numeric, floor);
    ++result.checked;
    if (err > result.max_rel_error) {
      result.max_rel_error = err;
      result.worst = label + "[" + std::to_string(idx) + "] analytic=" +
                     fmt(analytic[idx]) + " numeric=" + fmt(numeric);
    }
  }
  return result;
}

inline std::vector<std::size_t> spread_coords(std::size_t numel, std::size_t count) {
  std::vector<std::size_t> out;
  if (numel == 0) return out;
  count = std::min(count, numel);
  for (std::size_t i = 0; i < count; ++i) out.push_back(i * numel / count + (i * 7919) % std::max<std::size_t>(1, numel / count));
  for (auto& v : out) v = std::min(v, numel - 1);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace aotpot::testing
