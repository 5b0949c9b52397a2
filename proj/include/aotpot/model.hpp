#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "aotpot/aot_block.hpp"
#include "aotpot/fourier_mixer.hpp"
#include "aotpot/layers.hpp"
#include "aotpot/rng.hpp"
#include "aotpot/tensor.hpp"

namespace aotpot {

enum class TransformMode { vanilla, learned, frozen };

std::string to_string(TransformMode mode);
TransformMode parse_transform_mode(const std::string& text);

/// Architecture hyperparameters. Defaults are the desk-scale configuration.
struct ModelConfig {
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 2;
  std::size_t t_in = 10;
  std::size_t patch = 8;
  std::size_t embed_dim = 64;
  std::size_t heads = 4;
  std::size_t modes = 2;
  std::size_t blocks = 4;
  std::size_t streams = 4;
  std::size_t sinkhorn_iters = 20;
  double gate_init = 0.01;
  std::size_t groups = 0;  // 0: 8 if it divides embed_dim, else 1
  std::size_t mlp_hidden = 64;
  std::size_t temporal_hidden = 64;
  Activation mixer_activation = Activation::gelu;
  TransformMode transform = TransformMode::vanilla;

  std::size_t token_height() const { return height / patch; }
  std::size_t token_width() const { return width / patch; }
  std::size_t group_count() const;
  std::size_t sublayers() const { return 2 * blocks; }

  /// Throws std::invalid_argument on inconsistent settings.
  void validate() const;

  /// Canonical text of the fields that determine parameter shapes.
  std::string architecture_text() const;
  std::uint64_t hash() const;
};

/// Pointwise channel transforms wrapped around the whole network.
struct LinearTransformPair {
  Tensor w_in, b_in, w_out, b_out;  // [C, C] identity, [C] zero
  TransformMode mode = TransformMode::learned;

  LinearTransformPair() = default;
  LinearTransformPair(std::size_t channels, TransformMode mode);

  std::size_t parameter_count() const;
  void set_mode(TransformMode mode);
  void collect(ParamList& out, const std::string& prefix) const;
};

enum class TransformSide { in, out };

/// u: [..., C] -> pointwise affine map over the last axis.
Tensor apply_linear_transform(const Tensor& u, const LinearTransformPair& pair, TransformSide side);

/// Temporal aggregation: Re(sum_t frame_map(z_t) * exp(-i gamma t)).
/// tokens: [T, d, H', W'], frame_map acts on [rows, d], gamma: [d].
Tensor temporal_aggregate(const Tensor& tokens, const std::function<Tensor(const Tensor&)>& frame_map,
                          const Tensor& gamma);

struct ForwardTrace {
  std::vector<AotMaps> maps;  // one per sub-layer, in execution order
};

struct ParamAccounting {
  std::size_t total = 0;
  std::size_t aot = 0;
  std::size_t transform = 0;
  double aot_fraction() const { return total ? static_cast<double>(aot) / static_cast<double>(total) : 0.0; }
};

struct AotPotBlock {
  AotSublayer mixer_wrap;
  FourierMixer mixer;
  AotSublayer mlp_wrap;
  PointwiseMlp mlp;
};

/// The full operator network: positional encoding, patch embedding,
/// temporal aggregation, multi-stream AOT blocks, gated readout and the
/// de-patching head. Consumes T_in frames [T_in, H, W, C], emits one frame
/// [H, W, C].
class AotPot {
 public:
  AotPot(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }

  Tensor embed(const Tensor& window) const;
  Tensor aggregate(const Tensor& tokens) const;
  Tensor head(const Tensor& field) const;
  Tensor forward(const Tensor& window, ForwardTrace* trace = nullptr) const;

  /// Forces every transformation kernel to the exact identity.
  void set_identity_kernel(bool on) { options_.identity_kernel = on; }
  const AotOptions& options() const { return options_; }

  ParamList parameters() const;
  ParamAccounting accounting() const;

  std::vector<AotPotBlock>& blocks() { return blocks_; }
  const std::vector<AotPotBlock>& blocks() const { return blocks_; }
  std::optional<LinearTransformPair>& transform() { return transform_; }
  const std::optional<LinearTransformPair>& transform() const { return transform_; }

  Tensor pos_weight;  // [C, 3]
  Linear patch;       // [P*P*C] -> d
  PointwiseMlp temporal;
  Tensor gamma;       // [d]
  Tensor readout_logits;  // [n]
  Linear head_proj;   // d -> [P*P*C]

 private:
  ModelConfig cfg_;
  AotOptions options_;
  std::vector<AotPotBlock> blocks_;
  std::optional<LinearTransformPair> transform_;
};

}  // namespace aotpot
