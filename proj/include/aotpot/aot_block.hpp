#pragma once

#include <cstddef>
#include <functional>
#include <string>

#include "aotpot/layers.hpp"
#include "aotpot/sinkhorn.hpp"
#include "aotpot/tensor.hpp"

namespace aotpot {

/// n parallel copies of the hidden field: streams is [n, C, H', W'].
struct StreamState {
  Tensor streams;
  std::size_t count() const { return streams.dim(0); }
};

/// Input-dependent aggregation a, redistribution d and transformation
/// kernel T for one sub-layer, plus the raw values they were built from.
struct AotMaps {
  Tensor a;  // [1, n], on the simplex
  Tensor d;  // [1, n], entries in (0, 2)
  DoublyStochastic t;
  Tensor raw_a, raw_d, raw_t;  // raw_t is [n, n]
};

/// Per-sub-layer parameters of the input-dependent parameterization.
struct AotParams {
  std::size_t streams = 0;
  std::size_t channels = 0;
  Tensor phi_a;   // [nC, n]
  Tensor phi_d;   // [nC, n]
  Tensor phi_t;   // [nC, n*n]
  Tensor gate_a;  // [1]
  Tensor gate_d;
  Tensor gate_t;
  Tensor bias_a;  // [1, n]
  Tensor bias_d;  // [1, n]
  Tensor bias_t;  // [1, n*n], identity at init
  RmsNorm norm;   // over the pooled [1, nC] vector

  AotParams() = default;
  AotParams(std::size_t streams, std::size_t channels, double gate_init, Rng& rng);

  void collect(ParamList& out, const std::string& prefix) const;
};

struct AotOptions {
  std::size_t sinkhorn_iters = kSinkhornIterations;
  /// Replace the projected kernel with the exact identity (bypasses Sinkhorn).
  bool identity_kernel = false;
};

/// n identical copies of z.
StreamState lift(const Tensor& z, std::size_t n);

AotMaps compute_maps(const StreamState& state, const AotParams& params,
                     const AotOptions& options = {});

using Sublayer = std::function<Tensor(const Tensor&)>;

/// x' = T x + d^T F(a x). F receives and returns one [C, H', W'] field.
StreamState aot_update(const StreamState& state, const AotMaps& maps, const Sublayer& sublayer);

/// softmax(w)-weighted sum of streams. w: [n].
Tensor readout(const StreamState& state, const Tensor& w);

/// A sub-layer wrapped with Sandwich-Norm and its own AOT parameters.
struct AotSublayer {
  AotParams params;
  GroupNorm pre_norm;
  GroupNorm post_norm;

  AotSublayer() = default;
  AotSublayer(std::size_t streams, std::size_t channels, std::size_t groups, double gate_init,
              Rng& rng);

  /// post_norm(inner(pre_norm(x)))
  Tensor normalized(const Sublayer& inner, const Tensor& x) const;

  StreamState forward(const StreamState& state, const Sublayer& inner,
                      const AotOptions& options, AotMaps* maps_out = nullptr) const;

  void collect(ParamList& out, const std::string& prefix) const;
};

}  // namespace aotpot
