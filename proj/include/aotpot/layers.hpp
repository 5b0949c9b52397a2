#pragma once

#include <string>
#include <vector>

#include "aotpot/rng.hpp"
#include "aotpot/tensor.hpp"

namespace aotpot {

struct NamedParam {
  std::string name;
  Tensor tensor;
};
using ParamList = std::vector<NamedParam>;

std::size_t count_params(const ParamList& params);

/// Leaf tensor with gradient tracking on.
Tensor parameter(Tensor init);

enum class Activation { gelu, relu, identity };

Tensor activate(const Tensor& x, Activation act);
Activation parse_activation(const std::string& name);
std::string to_string(Activation act);

/// Affine map. Weight stored as [in, out].
struct Linear {
  Tensor weight;
  Tensor bias;  // [out]

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, double gain = 1.0);

  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }

  /// x: [rows, in] -> [rows, out]
  Tensor rows(const Tensor& x) const;
  /// x: [in, cols] -> [out, cols] (channel-first tokens)
  Tensor channels(const Tensor& x) const;

  void collect(ParamList& out, const std::string& prefix) const;
};

/// GroupNorm over a single [C, H, W] sample with per-channel affine.
struct GroupNorm {
  std::size_t groups = 1;
  double eps = 1e-5;
  Tensor weight;  // [C, 1, 1]
  Tensor bias;    // [C, 1, 1]

  GroupNorm() = default;
  GroupNorm(std::size_t channels, std::size_t groups);

  Tensor operator()(const Tensor& x) const;
  void collect(ParamList& out, const std::string& prefix) const;
};

/// Group count rule used throughout: 8 when it divides C, else 1.
std::size_t default_groups(std::size_t channels);

/// RMSNorm over a [1, D] row with learnable scale.
struct RmsNorm {
  double eps = 1e-6;
  Tensor scale;  // [1, D]

  RmsNorm() = default;
  explicit RmsNorm(std::size_t dim);

  Tensor operator()(const Tensor& x) const;
  void collect(ParamList& out, const std::string& prefix) const;
};

/// Two pointwise linear layers with GELU between them.
struct PointwiseMlp {
  Linear fc1;
  Linear fc2;

  PointwiseMlp() = default;
  PointwiseMlp(std::size_t dim, std::size_t hidden, Rng& rng);

  Tensor rows(const Tensor& x) const { return fc2.rows(gelu(fc1.rows(x))); }
  /// x: [C, H, W]
  Tensor channels(const Tensor& x) const;
  void collect(ParamList& out, const std::string& prefix) const;
};

}  // namespace aotpot
