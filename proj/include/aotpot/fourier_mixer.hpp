#pragma once

#include <cstddef>
#include <vector>

#include "aotpot/layers.hpp"
#include "aotpot/rng.hpp"
#include "aotpot/tensor.hpp"

namespace aotpot {

struct FourierMixerConfig {
  std::size_t dim = 64;    // d_z
  std::size_t heads = 4;
  std::size_t modes = 2;   // keep |k| < modes on both axes
  Activation activation = Activation::gelu;
};

/// Multi-head Fourier-domain token mixer.
///
/// Each head runs a two-layer complex MLP over the retained low-frequency
/// modes of its channel slice; every other mode is zeroed. Complex weights
/// are stored as separate real/imaginary tensors, and the activation acts on
/// real and imaginary parts independently. The real part of the inverse
/// transform is returned.
class FourierMixer {
 public:
  FourierMixer() = default;
  FourierMixer(FourierMixerConfig cfg, Rng& rng);

  /// z: [dim, H', W'] -> [dim, H', W']
  Tensor operator()(const Tensor& z) const;

  const FourierMixerConfig& config() const { return cfg_; }
  std::size_t head_dim() const { return cfg_.dim / cfg_.heads; }

  /// Flat (row-major H' x W') indices of the retained modes.
  std::vector<std::size_t> retained_modes(std::size_t height, std::size_t width) const;

  void collect(ParamList& out, const std::string& prefix) const;

  // [heads, head_dim, head_dim]; applied as x * W (row-vector convention).
  Tensor w1_re, w1_im, w2_re, w2_im;
  // [heads, 1, head_dim], shared by every retained mode.
  Tensor b1_re, b1_im, b2_re, b2_im;

 private:
  FourierMixerConfig cfg_;
};

}  // namespace aotpot
