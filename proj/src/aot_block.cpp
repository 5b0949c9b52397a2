#include "aotpot/aot_block.hpp"

#include <cmath>
#include <stdexcept>

namespace aotpot {

AotParams::AotParams(std::size_t n, std::size_t c, double gate_init, Rng& rng)
    : streams(n), channels(c), norm(n * c) {
  const double stddev = 1.0 / std::sqrt(static_cast<double>(n * c));
  phi_a = parameter(randn({n * c, n}, rng, stddev));
  phi_d = parameter(randn({n * c, n}, rng, stddev));
  phi_t = parameter(randn({n * c, n * n}, rng, stddev));
  gate_a = parameter(Tensor::scalar(gate_init));
  gate_d = parameter(Tensor::scalar(gate_init));
  gate_t = parameter(Tensor::scalar(gate_init));
  bias_a = parameter(Tensor::zeros({1, n}));
  bias_d = parameter(Tensor::zeros({1, n}));
  bias_t = parameter(reshape(Tensor::eye(n), {1, n * n}));
}

void AotParams::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".phi_a", phi_a});
  out.push_back({prefix + ".phi_d", phi_d});
  out.push_back({prefix + ".phi_t", phi_t});
  out.push_back({prefix + ".gate_a", gate_a});
  out.push_back({prefix + ".gate_d", gate_d});
  out.push_back({prefix + ".gate_t", gate_t});
  out.push_back({prefix + ".bias_a", bias_a});
  out.push_back({prefix + ".bias_d", bias_d});
  out.push_back({prefix + ".bias_t", bias_t});
  norm.collect(out, prefix + ".rms");
}

StreamState lift(const Tensor& z, std::size_t n) {
  if (n == 0) throw std::invalid_argument("lift: stream count must be >= 1");
  Shape shape = z.shape();
  shape.insert(shape.begin(), 1);
  Shape base(shape.size(), 1);
  base[0] = n;
  return {add(Tensor::zeros(base), reshape(z, shape))};
}

AotMaps compute_maps(const StreamState& state, const AotParams& params,
                     const AotOptions& options) {
  const Tensor& x = state.streams;
  if (x.rank() != 4) throw DimensionError("aot: state must be [n,C,H,W], got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1);
  if (n != params.streams || c != params.channels) {
    throw DimensionError("aot: state " + shape_str(x.shape()) + " does not match parameters (n=" +
                         std::to_string(params.streams) + ", C=" + std::to_string(params.channels) +
                         ")");
  }
  Tensor pooled = mean(reshape(x, {n * c, x.numel() / (n * c)}), 1);  // [nC]
  Tensor v = params.norm(reshape(pooled, {1, n * c}));

  AotMaps maps;
  maps.raw_a = add(mul(params.gate_a, matmul(v, params.phi_a)), params.bias_a);
  maps.raw_d = add(mul(params.gate_d, matmul(v, params.phi_d)), params.bias_d);
  Tensor raw_t_flat = add(mul(params.gate_t, matmul(v, params.phi_t)), params.bias_t);
  maps.raw_t = reshape(raw_t_flat, {n, n});

  Tensor sa = sigmoid(maps.raw_a);
  maps.a = div(sa, sum(sa));
  maps.d = scale(sigmoid(maps.raw_d), 2.0);
  if (options.identity_kernel) {
    maps.t.matrix = Tensor::eye(n);
    maps.t.iters_used = 0;
    maps.t.residual = 0.0;
  } else {
    maps.t = sinkhorn_project(maps.raw_t, options.sinkhorn_iters, true);
  }
  return maps;
}

StreamState aot_update(const StreamState& state, const AotMaps& maps, const Sublayer& sublayer) {
  const Tensor& x = state.streams;
  const Shape shape = x.shape();
  const std::size_t n = shape[0];
  const std::size_t field = x.numel() / n;
  Shape field_shape(shape.begin() + 1, shape.end());

  Tensor flat = reshape(x, {n, field});
  Tensor aggregated = reshape(matmul(maps.a, flat), field_shape);
  Tensor update = sublayer(aggregated);
  if (update.shape() != field_shape) {
    throw DimensionError("aot: sub-layer changed shape " + shape_str(field_shape) + " -> " +
                         shape_str(update.shape()));
  }
  Tensor mixed = matmul(maps.t.matrix, flat);
  Tensor scattered = matmul(reshape(maps.d, {n, 1}), reshape(update, {1, field}));
  return {reshape(add(mixed, scattered), shape)};
}

Tensor readout(const StreamState& state, const Tensor& w) {
  const Tensor& x = state.streams;
  const std::size_t n = x.dim(0);
  if (w.numel() != n) throw DimensionError("readout: logits size does not match stream count");
  Shape field_shape(x.shape().begin() + 1, x.shape().end());
  Tensor g = softmax(reshape(w, {1, n}));
  return reshape(matmul(g, reshape(x, {n, x.numel() / n})), field_shape);
}

AotSublayer::AotSublayer(std::size_t streams, std::size_t channels, std::size_t groups,
                         double gate_init, Rng& rng)
    : params(streams, channels, gate_init, rng),
      pre_norm(channels, groups),
      post_norm(channels, groups) {}

Tensor AotSublayer::normalized(const Sublayer& inner, const Tensor& x) const {
  return post_norm(inner(pre_norm(x)));
}

StreamState AotSublayer::forward(const StreamState& state, const Sublayer& inner,
                                 const AotOptions& options, AotMaps* maps_out) const {
  AotMaps maps = compute_maps(state, params, options);
  StreamState next =
      aot_update(state, maps, [&](const Tensor& x) { return normalized(inner, x); });
  if (maps_out != nullptr) *maps_out = std::move(maps);
  return next;
}

void AotSublayer::collect(ParamList& out, const std::string& prefix) const {
  params.collect(out, prefix + ".aot");
  pre_norm.collect(out, prefix + ".pre_norm");
  post_norm.collect(out, prefix + ".post_norm");
}

}  // namespace aotpot
