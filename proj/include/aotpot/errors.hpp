#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace aotpot {

/// Non-finite values or divergence. `index` is the layer, step or sample
/// where it was detected.
class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& what, std::size_t index)
      : std::runtime_error(what), index_(index) {}
  std::size_t index() const { return index_; }

 private:
  std::size_t index_;
};

/// A PDE solver exceeded its magnitude bound.
class BlowUpError : public NumericError {
 public:
  using NumericError::NumericError;
};

/// Malformed file contents (bad magic, CRC mismatch, truncated payload).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace aotpot
