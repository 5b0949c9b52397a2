#include "aotpot/fourier_mixer.hpp"

#include <cmath>
#include <cstdlib>
#include <stdexcept>

#include "aotpot/fft.hpp"

namespace aotpot {

namespace {

// (xr + i xi)(wr + i wi) + (br + i bi), batched over heads.
ComplexTensor complex_affine(const ComplexTensor& x, const Tensor& wr, const Tensor& wi,
                             const Tensor& br, const Tensor& bi) {
  Tensor re = sub(bmm(x.re, wr), bmm(x.im, wi));
  Tensor im = add(bmm(x.re, wi), bmm(x.im, wr));
  return {add(re, br), add(im, bi)};
}

}  // namespace

FourierMixer::FourierMixer(FourierMixerConfig cfg, Rng& rng) : cfg_(cfg) {
  if (cfg_.heads == 0 || cfg_.dim % cfg_.heads != 0) {
    throw std::invalid_argument("fourier mixer: dim " + std::to_string(cfg_.dim) +
                                " not divisible by " + std::to_string(cfg_.heads) + " heads");
  }
  if (cfg_.modes == 0) throw std::invalid_argument("fourier mixer: modes must be >= 1");
  const std::size_t h = cfg_.heads, dh = head_dim();
  const double stddev = 0.02 / std::sqrt(static_cast<double>(dh));
  w1_re = parameter(randn({h, dh, dh}, rng, stddev));
  w1_im = parameter(randn({h, dh, dh}, rng, stddev));
  w2_re = parameter(randn({h, dh, dh}, rng, stddev));
  w2_im = parameter(randn({h, dh, dh}, rng, stddev));
  b1_re = parameter(Tensor::zeros({h, 1, dh}));
  b1_im = parameter(Tensor::zeros({h, 1, dh}));
  b2_re = parameter(Tensor::zeros({h, 1, dh}));
  b2_im = parameter(Tensor::zeros({h, 1, dh}));
}

std::vector<std::size_t> FourierMixer::retained_modes(std::size_t height,
                                                      std::size_t width) const {
  if (cfg_.modes > height || cfg_.modes > width) {
    throw DimensionError("fourier mixer: modes " + std::to_string(cfg_.modes) +
                         " exceed token grid " + std::to_string(height) + "x" +
                         std::to_string(width));
  }
  const long limit = static_cast<long>(cfg_.modes);
  std::vector<std::size_t> keep;
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      if (std::labs(signed_frequency(r, height)) < limit &&
          std::labs(signed_frequency(c, width)) < limit) {
        keep.push_back(r * width + c);
      }
    }
  }
  return keep;
}

Tensor FourierMixer::operator()(const Tensor& z) const {
  if (z.rank() != 3 || z.dim(0) != cfg_.dim) {
    throw DimensionError("fourier mixer: expected [" + std::to_string(cfg_.dim) +
                         ",H,W], got " + shape_str(z.shape()));
  }
  const std::size_t c = z.dim(0), height = z.dim(1), width = z.dim(2);
  const std::size_t tokens = height * width;
  const std::size_t h = cfg_.heads, dh = head_dim();
  const auto keep = retained_modes(height, width);
  const std::size_t m = keep.size();

  ComplexTensor spec = fft2(z, Tensor(), false);

  // [C, H, W] -> [heads, modes, head_dim]
  auto gather = [&](const Tensor& t) {
    Tensor rows = take(transpose(reshape(t, {c, tokens})), 0, keep);
    return permute(reshape(rows, {m, h, dh}), {1, 0, 2});
  };
  ComplexTensor x{gather(spec.re), gather(spec.im)};

  ComplexTensor hidden = complex_affine(x, w1_re, w1_im, b1_re, b1_im);
  hidden.re = activate(hidden.re, cfg_.activation);
  hidden.im = activate(hidden.im, cfg_.activation);
  ComplexTensor y = complex_affine(hidden, w2_re, w2_im, b2_re, b2_im);

  auto scatter = [&](const Tensor& t) {
    Tensor rows = reshape(permute(t, {1, 0, 2}), {m, c});
    return reshape(transpose(put(rows, 0, keep, tokens)), {c, height, width});
  };
  ComplexTensor mixed{scatter(y.re), scatter(y.im)};
  return fft2(mixed.re, mixed.im, true).re;
}

void FourierMixer::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".w1_re", w1_re});
  out.push_back({prefix + ".w1_im", w1_im});
  out.push_back({prefix + ".b1_re", b1_re});
  out.push_back({prefix + ".b1_im", b1_im});
  out.push_back({prefix + ".w2_re", w2_re});
  out.push_back({prefix + ".w2_im", w2_im});
  out.push_back({prefix + ".b2_re", b2_re});
  out.push_back({prefix + ".b2_im", b2_im});
}

}  // namespace aotpot
