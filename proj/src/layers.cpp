#include "aotpot/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace aotpot {

std::size_t count_params(const ParamList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

Tensor parameter(Tensor init) {
  init.set_requires_grad(true);
  return init;
}

Tensor activate(const Tensor& x, Activation act) {
  switch (act) {
    case Activation::gelu:
      return gelu(x);
    case Activation::relu:
      return relu(x);
    case Activation::identity:
      return x;
  }
  return x;
}

Activation parse_activation(const std::string& name) {
  if (name == "gelu") return Activation::gelu;
  if (name == "relu") return Activation::relu;
  if (name == "identity") return Activation::identity;
  throw std::invalid_argument("unknown activation '" + name + "'");
}

std::string to_string(Activation act) {
  switch (act) {
    case Activation::gelu: return "gelu";
    case Activation::relu: return "relu";
    case Activation::identity: return "identity";
  }
  return "gelu";
}

Linear::Linear(std::size_t in, std::size_t out, Rng& rng, double gain)
    : weight(parameter(randn({in, out}, rng, gain / std::sqrt(static_cast<double>(in))))),
      bias(parameter(Tensor::zeros({out}))) {}

Tensor Linear::rows(const Tensor& x) const { return add(matmul(x, weight), bias); }

Tensor Linear::channels(const Tensor& x) const {
  return add(matmul(transpose(weight), x), reshape(bias, {out_features(), 1}));
}

void Linear::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

std::size_t default_groups(std::size_t channels) { return channels % 8 == 0 ? 8 : 1; }

GroupNorm::GroupNorm(std::size_t channels, std::size_t groups_)
    : groups(groups_),
      weight(parameter(Tensor::ones({channels, 1, 1}))),
      bias(parameter(Tensor::zeros({channels, 1, 1}))) {
  if (groups == 0 || channels % groups != 0) {
    throw std::invalid_argument("groupnorm: " + std::to_string(groups) +
                                " groups do not divide " + std::to_string(channels) + " channels");
  }
}

Tensor GroupNorm::operator()(const Tensor& x) const {
  const Shape shape = x.shape();
  const std::size_t per_group = x.numel() / groups;
  Tensor g = reshape(x, {groups, per_group});
  Tensor centered = sub(g, mean(g, 1, true));
  Tensor inv_std = rsqrt(add_scalar(mean(square(centered), 1, true), eps));
  Tensor normed = reshape(mul(centered, inv_std), shape);
  return add(mul(normed, weight), bias);
}

void GroupNorm::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

RmsNorm::RmsNorm(std::size_t dim) : scale(parameter(Tensor::ones({1, dim}))) {}

Tensor RmsNorm::operator()(const Tensor& x) const {
  Tensor inv = rsqrt(add_scalar(mean(square(x), x.rank() - 1, true), eps));
  return mul(mul(x, inv), scale);
}

void RmsNorm::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".scale", scale});
}

PointwiseMlp::PointwiseMlp(std::size_t dim, std::size_t hidden, Rng& rng)
    : fc1(dim, hidden, rng), fc2(hidden, dim, rng) {}

Tensor PointwiseMlp::channels(const Tensor& x) const {
  const Shape shape = x.shape();
  Tensor flat = reshape(x, {shape[0], x.numel() / shape[0]});
  return reshape(fc2.channels(gelu(fc1.channels(flat))), shape);
}

void PointwiseMlp::collect(ParamList& out, const std::string& prefix) const {
  fc1.collect(out, prefix + ".fc1");
  fc2.collect(out, prefix + ".fc2");
}

}  // namespace aotpot
