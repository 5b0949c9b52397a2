#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace aotpot {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Raised when operand shapes are incompatible.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty means "no gradient"
  bool requires_grad = false;
};
}  // namespace detail

/// Dense row-major f64 tensor with optional gradient tracking.
///
/// Copies share storage (handle semantics). Operations record onto the
/// thread's active Tape only when one is installed and an input requires
/// grad; without a tape every operation is a plain value computation.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }
  static Tensor eye(std::size_t n);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> values() const;
  std::span<double> values();
  double item() const;
  double at(std::size_t flat) const { return values()[flat]; }

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  /// Deep copy without graph history or gradient.
  Tensor detach() const;

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  detail::TensorImpl& impl() const;
  const std::shared_ptr<detail::TensorImpl>& handle() const { return impl_; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Ordered record of differentiable operations for one forward pass.
///
/// Single owner, single thread. Entries are appended in execution order,
/// so replaying them backwards visits nodes in reverse topological order.
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  void record(std::vector<std::shared_ptr<detail::TensorImpl>> outputs, BackwardFn fn);

  /// Seeds d(root)/d(root) = 1 and propagates to every reachable leaf.
  /// Leaf gradients accumulate across calls; intermediates are reset.
  void backward(const Tensor& root);

  void clear();
  std::size_t size() const { return entries_.size(); }

 private:
  struct Entry {
    std::vector<std::shared_ptr<detail::TensorImpl>> outputs;
    BackwardFn fn;
  };
  std::vector<Entry> entries_;
};

/// Installs a tape as the active recording target for the current thread.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

/// Convenience: backward through the active tape.
void backward(const Tensor& root);

// ---------------------------------------------------------------------------
// Operations. All accept and return values; none mutate their inputs.

Shape broadcast_shape(const Shape& a, const Shape& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor neg(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor rsqrt(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor square(const Tensor& x);
Tensor cos(const Tensor& x);
Tensor sin(const Tensor& x);

Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& x) { return neg(x); }
inline Tensor operator*(const Tensor& x, double s) { return scale(x, s); }
inline Tensor operator*(double s, const Tensor& x) { return scale(x, s); }

Tensor sum(const Tensor& x);
Tensor sum(const Tensor& x, std::size_t axis, bool keepdim = false);
Tensor mean(const Tensor& x, std::size_t axis, bool keepdim = false);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
Tensor transpose(const Tensor& x);  // rank-2 only

/// Selects `indices` along `axis`.
Tensor take(const Tensor& x, std::size_t axis, const std::vector<std::size_t>& indices);
/// Inverse of take: places slices of x at `indices` of a zero tensor whose
/// `axis` has extent `size`.
Tensor put(const Tensor& x, std::size_t axis, const std::vector<std::size_t>& indices,
           std::size_t size);

Tensor matmul(const Tensor& a, const Tensor& b);
/// Batched product: [B,m,k] x [B,k,p] -> [B,m,p].
Tensor bmm(const Tensor& a, const Tensor& b);

Tensor softmax(const Tensor& x);  // over the last axis

struct ComplexTensor {
  Tensor re;
  Tensor im;
};

/// DFT over the last two axes. Forward is unnormalized; inverse carries
/// 1/(H*W). `im` may be undefined for real input. H and W must be powers
/// of two.
ComplexTensor fft2(const Tensor& re, const Tensor& im, bool inverse);

bool all_finite(const Tensor& x);
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace aotpot
