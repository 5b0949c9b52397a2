#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <stdexcept>

namespace aotpot {

using cplx = std::complex<double>;

class UnsupportedSizeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

constexpr bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

/// In-place radix-2 transform of a contiguous sequence. The inverse is
/// scaled by 1/n.
void fft1d(std::span<cplx> data, bool inverse);

/// In-place 2-D transform of `batch` row-major H x W planes laid out back
/// to back. Inverse scaled by 1/(H*W).
void fft2d(std::span<cplx> data, std::size_t batch, std::size_t height, std::size_t width,
           bool inverse);

/// Signed integer wavenumber of DFT bin `index` on an axis of extent n
/// (the Nyquist bin maps to +n/2).
inline long signed_frequency(std::size_t index, std::size_t n) {
  return index <= n / 2 ? static_cast<long>(index)
                        : static_cast<long>(index) - static_cast<long>(n);
}

}  // namespace aotpot
