#include "aotpot/fft.hpp"

#include <cmath>
#include <map>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

namespace aotpot {
namespace {

// exp(-2 pi i k / n) for k < n/2, cached per thread and size.
const std::vector<cplx>& twiddles(std::size_t n) {
  thread_local std::map<std::size_t, std::vector<cplx>> cache;
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  std::vector<cplx> table(n / 2);
  for (std::size_t k = 0; k < n / 2; ++k) {
    table[k] = std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k) /
                                   static_cast<double>(n));
  }
  return cache.emplace(n, std::move(table)).first->second;
}

}  // namespace

void fft1d(std::span<cplx> data, bool inverse) {
  const std::size_t n = data.size();
  if (!is_power_of_two(n)) {
    throw UnsupportedSizeError("fft: extent " + std::to_string(n) + " is not a power of two");
  }
  if (n == 1) return;

  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(data[i], data[j]);
  }

  const auto& table = twiddles(n);
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    const std::size_t stride = n / len;
    for (std::size_t start = 0; start < n; start += len) {
      for (std::size_t k = 0; k < half; ++k) {
        const cplx w = inverse ? std::conj(table[k * stride]) : table[k * stride];
        const cplx u = data[start + k];
        const cplx v = data[start + k + half] * w;
        data[start + k] = u + v;
        data[start + k + half] = u - v;
      }
    }
  }

  if (inverse) {
    const double s = 1.0 / static_cast<double>(n);
    for (auto& v : data) v *= s;
  }
}

void fft2d(std::span<cplx> data, std::size_t batch, std::size_t height, std::size_t width,
           bool inverse) {
  if (!is_power_of_two(height) || !is_power_of_two(width)) {
    throw UnsupportedSizeError("fft2: grid " + std::to_string(height) + "x" +
                               std::to_string(width) + " is not a power of two");
  }
  const std::size_t plane = height * width;
  if (data.size() != batch * plane) {
    throw std::invalid_argument("fft2: buffer length does not match batch*H*W");
  }
  std::vector<cplx> column(height);
  for (std::size_t b = 0; b < batch; ++b) {
    cplx* p = data.data() + b * plane;
    for (std::size_t r = 0; r < height; ++r) fft1d({p + r * width, width}, inverse);
    for (std::size_t c = 0; c < width; ++c) {
      for (std::size_t r = 0; r < height; ++r) column[r] = p[r * width + c];
      fft1d(column, inverse);
      for (std::size_t r = 0; r < height; ++r) p[r * width + c] = column[r];
    }
  }
}

}  // namespace aotpot
