#include "aotpot/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <numeric>
#include <sstream>

#include "aotpot/fft.hpp"

namespace aotpot {

using detail::TensorImpl;
using ImplPtr = std::shared_ptr<TensorImpl>;

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(Shape shape, double fill) : impl_(std::make_shared<TensorImpl>()) {
  impl_->data.assign(shape_numel(shape), fill);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : impl_(std::make_shared<TensorImpl>()) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor: shape " + shape_str(shape) + " needs " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{1}, std::vector<double>{value}); }

Tensor Tensor::eye(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.impl_->data[i * n + i] = 1.0;
  return t;
}

TensorImpl& Tensor::impl() const {
  if (!impl_) throw std::logic_error("tensor: use of undefined tensor");
  return *impl_;
}

const Shape& Tensor::shape() const { return impl().shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("tensor: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return impl().data.size(); }
std::span<const double> Tensor::values() const { return impl().data; }
std::span<double> Tensor::values() { return impl().data; }

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("tensor: item() on shape " + shape_str(shape()));
  return impl().data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  impl().requires_grad = on;
  if (!on) impl_->grad.clear();
  return *this;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }
std::span<const double> Tensor::grad() const { return impl().grad; }
void Tensor::zero_grad() { impl().grad.clear(); }

Tensor Tensor::detach() const { return Tensor(shape(), impl().data); }

// ---------------------------------------------------------------------------
// Tape

namespace {
thread_local Tape* g_active_tape = nullptr;

std::vector<double>& grad_of(TensorImpl& t) {
  if (t.grad.empty()) t.grad.assign(t.data.size(), 0.0);
  return t.grad;
}

bool tracking(std::initializer_list<const Tensor*> inputs) {
  if (g_active_tape == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

void record(std::vector<ImplPtr> outputs, Tape::BackwardFn fn) {
  for (auto& o : outputs) o->requires_grad = true;
  g_active_tape->record(std::move(outputs), std::move(fn));
}

}  // namespace

void Tape::record(std::vector<ImplPtr> outputs, BackwardFn fn) {
  entries_.push_back({std::move(outputs), std::move(fn)});
}

void Tape::backward(const Tensor& root) {
  if (root.numel() != 1) {
    throw DimensionError("backward: root must be a scalar, got " + shape_str(root.shape()));
  }
  if (!root.requires_grad()) {
    throw std::logic_error("backward: root does not depend on any tracked tensor");
  }
  for (auto& e : entries_) {
    for (auto& o : e.outputs) o->grad.clear();
  }
  grad_of(root.impl())[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    bool live = false;
    for (auto& o : it->outputs) live = live || !o->grad.empty();
    if (!live) continue;
    for (auto& o : it->outputs) grad_of(*o);
    it->fn();
  }
}

void Tape::clear() { entries_.clear(); }

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

Tape* active_tape() { return g_active_tape; }

void backward(const Tensor& root) {
  if (g_active_tape == nullptr) throw std::logic_error("backward: no active tape");
  g_active_tape->backward(root);
}

// ---------------------------------------------------------------------------
// Broadcasting

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw DimensionError("broadcast: incompatible shapes " + shape_str(a) + " and " +
                           shape_str(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

namespace {

// Maps every flat output index to the flat index of each operand.
struct BroadcastIndex {
  std::vector<std::size_t> ia, ib;
  bool trivial = false;  // same shape, identity mapping
};

std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  const std::size_t offset = out.size() - in.size();
  std::size_t stride = 1;
  for (std::size_t i = in.size(); i-- > 0;) {
    strides[i + offset] = in[i] == 1 ? 0 : stride;
    stride *= in[i];
  }
  return strides;
}

BroadcastIndex make_index(const Shape& a, const Shape& b, const Shape& out) {
  BroadcastIndex idx;
  if (a == b) {
    idx.trivial = true;
    return idx;
  }
  const std::size_t n = shape_numel(out);
  idx.ia.resize(n);
  idx.ib.resize(n);
  const auto sa = broadcast_strides(a, out);
  const auto sb = broadcast_strides(b, out);
  std::vector<std::size_t> counter(out.size(), 0);
  std::size_t pa = 0, pb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    idx.ia[i] = pa;
    idx.ib[i] = pb;
    for (std::size_t d = out.size(); d-- > 0;) {
      ++counter[d];
      pa += sa[d];
      pb += sb[d];
      if (counter[d] < out[d]) break;
      pa -= sa[d] * out[d];
      pb -= sb[d] * out[d];
      counter[d] = 0;
    }
  }
  return idx;
}

enum class BinOp { add, sub, mul, div };

Tensor binary(const Tensor& a, const Tensor& b, BinOp op) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  auto index = std::make_shared<BroadcastIndex>(make_index(a.shape(), b.shape(), out_shape));
  Tensor out(out_shape);
  const auto& x = a.impl().data;
  const auto& y = b.impl().data;
  auto& z = out.impl().data;
  const std::size_t n = z.size();
  auto ia = [&](std::size_t i) { return index->trivial ? i : index->ia[i]; };
  auto ib = [&](std::size_t i) { return index->trivial ? i : index->ib[i]; };
  switch (op) {
    case BinOp::add:
      for (std::size_t i = 0; i < n; ++i) z[i] = x[ia(i)] + y[ib(i)];
      break;
    case BinOp::sub:
      for (std::size_t i = 0; i < n; ++i) z[i] = x[ia(i)] - y[ib(i)];
      break;
    case BinOp::mul:
      for (std::size_t i = 0; i < n; ++i) z[i] = x[ia(i)] * y[ib(i)];
      break;
    case BinOp::div:
      for (std::size_t i = 0; i < n; ++i) z[i] = x[ia(i)] / y[ib(i)];
      break;
  }
  if (tracking({&a, &b})) {
    record({out.handle()}, [ah = a.handle(), bh = b.handle(), oh = out.handle(), index, op] {
      const auto& g = oh->grad;
      const std::size_t n = g.size();
      auto ia = [&](std::size_t i) { return index->trivial ? i : index->ia[i]; };
      auto ib = [&](std::size_t i) { return index->trivial ? i : index->ib[i]; };
      if (ah->requires_grad) {
        auto& ga = grad_of(*ah);
        switch (op) {
          case BinOp::add:
          case BinOp::sub:
            for (std::size_t i = 0; i < n; ++i) ga[ia(i)] += g[i];
            break;
          case BinOp::mul:
            for (std::size_t i = 0; i < n; ++i) ga[ia(i)] += g[i] * bh->data[ib(i)];
            break;
          case BinOp::div:
            for (std::size_t i = 0; i < n; ++i) ga[ia(i)] += g[i] / bh->data[ib(i)];
            break;
        }
      }
      if (bh->requires_grad) {
        auto& gb = grad_of(*bh);
        switch (op) {
          case BinOp::add:
            for (std::size_t i = 0; i < n; ++i) gb[ib(i)] += g[i];
            break;
          case BinOp::sub:
            for (std::size_t i = 0; i < n; ++i) gb[ib(i)] -= g[i];
            break;
          case BinOp::mul:
            for (std::size_t i = 0; i < n; ++i) gb[ib(i)] += g[i] * ah->data[ia(i)];
            break;
          case BinOp::div:
            for (std::size_t i = 0; i < n; ++i) {
              const double y = bh->data[ib(i)];
              gb[ib(i)] -= g[i] * ah->data[ia(i)] / (y * y);
            }
            break;
        }
      }
    });
  }
  return out;
}

// Unary op with derivative expressed through input x and output y.
template <typename F, typename D>
Tensor unary(const Tensor& x, F f, D df) {
  Tensor out(x.shape());
  const auto& in = x.impl().data;
  auto& o = out.impl().data;
  for (std::size_t i = 0; i < in.size(); ++i) o[i] = f(in[i]);
  if (tracking({&x})) {
    record({out.handle()}, [xh = x.handle(), oh = out.handle(), df] {
      auto& gx = grad_of(*xh);
      const auto& g = oh->grad;
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(xh->data[i], oh->data[i]);
    });
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::add); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::sub); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::mul); }
Tensor div(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::div); }

Tensor neg(const Tensor& x) {
  return unary(x, [](double v) { return -v; }, [](double, double) { return -1.0; });
}

Tensor exp(const Tensor& x) {
  return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x,
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, [](double v) { return v > 0 ? v : 0.0; }, [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor rsqrt(const Tensor& x) {
  return unary(
      x, [](double v) { return 1.0 / std::sqrt(v); },
      [](double v, double y) { return -0.5 * y / v; });
}

Tensor gelu(const Tensor& x) {
  // Exact erf form.
  return unary(
      x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0)); },
      [](double v, double) {
        const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
        const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * std::numbers::pi);
        return cdf + v * pdf;
      });
}

Tensor square(const Tensor& x) {
  return unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor cos(const Tensor& x) {
  return unary(
      x, [](double v) { return std::cos(v); }, [](double v, double) { return -std::sin(v); });
}

Tensor sin(const Tensor& x) {
  return unary(
      x, [](double v) { return std::sin(v); }, [](double v, double) { return std::cos(v); });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(
      x, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary(
      x, [value](double v) { return v + value; }, [](double, double) { return 1.0; });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  Tensor out = Tensor::scalar(s);
  if (tracking({&x})) {
    record({out.handle()}, [xh = x.handle(), oh = out.handle()] {
      auto& gx = grad_of(*xh);
      const double g = oh->grad[0];
      for (auto& v : gx) v += g;
    });
  }
  return out;
}

namespace {
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

Tensor reduce_axis(const Tensor& x, std::size_t axis, bool keepdim, double factor) {
  const auto sp = split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  if (keepdim) {
    out_shape[axis] = 1;
  } else {
    out_shape.erase(out_shape.begin() + static_cast<long>(axis));
    if (out_shape.empty()) out_shape.push_back(1);
  }
  Tensor out(out_shape);
  const auto& in = x.impl().data;
  auto& o = out.impl().data;
  for (std::size_t a = 0; a < sp.outer; ++a) {
    for (std::size_t k = 0; k < sp.extent; ++k) {
      const double* src = in.data() + (a * sp.extent + k) * sp.inner;
      double* dst = o.data() + a * sp.inner;
      for (std::size_t c = 0; c < sp.inner; ++c) dst[c] += src[c];
    }
  }
  if (factor != 1.0) {
    for (auto& v : o) v *= factor;
  }
  if (tracking({&x})) {
    record({out.handle()}, [xh = x.handle(), oh = out.handle(), sp, factor] {
      auto& gx = grad_of(*xh);
      const auto& g = oh->grad;
      for (std::size_t a = 0; a < sp.outer; ++a) {
        for (std::size_t k = 0; k < sp.extent; ++k) {
          double* dst = gx.data() + (a * sp.extent + k) * sp.inner;
          const double* src = g.data() + a * sp.inner;
          for (std::size_t c = 0; c < sp.inner; ++c) dst[c] += factor * src[c];
        }
      }
    });
  }
  return out;
}
}  // namespace

Tensor sum(const Tensor& x, std::size_t axis, bool keepdim) {
  return reduce_axis(x, axis, keepdim, 1.0);
}

Tensor mean(const Tensor& x, std::size_t axis, bool keepdim) {
  return reduce_axis(x, axis, keepdim, 1.0 / static_cast<double>(x.dim(axis)));
}

// ---------------------------------------------------------------------------
// Shape manipulation

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
  }
  Tensor out(std::move(shape), x.impl().data);
  if (tracking({&x})) {
    record({out.handle()}, [xh = x.handle(), oh = out.handle()] {
      auto& gx = grad_of(*xh);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += oh->grad[i];
    });
  }
  return out;
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  const Shape& in = x.shape();
  const std::size_t rank = in.size();
  if (axes.size() != rank) {
    throw DimensionError("permute: " + std::to_string(axes.size()) + " axes for rank " +
                         std::to_string(rank));
  }
  std::vector<bool> seen(rank, false);
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    if (axes[i] >= rank || seen[axes[i]]) throw DimensionError("permute: invalid axis list");
    seen[axes[i]] = true;
    out_shape[i] = in[axes[i]];
  }
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * in[i];

  // Source offset for every destination element.
  const std::size_t n = x.numel();
  auto source = std::make_shared<std::vector<std::size_t>>(n);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < n; ++i) {
    (*source)[i] = offset;
    for (std::size_t d = rank; d-- > 0;) {
      ++counter[d];
      offset += in_strides[axes[d]];
      if (counter[d] < out_shape[d]) break;
      offset -= in_strides[axes[d]] * out_shape[d];
      counter[d] = 0;
    }
  }
  Tensor out(out_shape);
  auto& o = out.impl().data;
  const auto& src = x.impl().data;
  for (std::size_t i = 0; i < n; ++i) o[i] = src[(*source)[i]];
  if (tracking({&x})) {
    record({out.handle()}, [xh = x.handle(), oh = out.handle(), source] {
      auto& gx = grad_of(*xh);
      const auto& g = oh->grad;
      for (std::size_t i = 0; i < g.size(); ++i) gx[(*source)[i]] += g[i];
    });
  }
  return out;
}

Tensor transpose(const Tensor& x) {
  if (x.rank() != 2) throw DimensionError("transpose: rank-2 tensor required");
  return permute(x, {1, 0});
}

Tensor take(const Tensor& x, std::size_t axis, const std::vector<std::size_t>& indices) {
  const auto sp = split_at(x.shape(), axis);
  for (auto i : indices) {
    if (i >= sp.extent) throw DimensionError("take: index out of range");
  }
  Shape out_shape = x.shape();
  out_shape[axis] = indices.size();
  Tensor out(out_shape);
  const auto& in = x.impl().data;
  auto& o = out.impl().data;
  const std::size_t m = indices.size();
  for (std::size_t a = 0; a < sp.outer; ++a) {
    for (std::size_t k = 0; k < m; ++k) {
      std::copy_n(in.data() + (a * sp.extent + indices[k]) * sp.inner, sp.inner,
                  o.data() + (a * m + k) * sp.inner);
    }
  }
  if (tracking({&x})) {
    record({out.handle()}, [xh = x.handle(), oh = out.handle(), sp, indices] {
      auto& gx = grad_of(*xh);
      const auto& g = oh->grad;
      const std::size_t m = indices.size();
      for (std::size_t a = 0; a < sp.outer; ++a) {
        for (std::size_t k = 0; k < m; ++k) {
          double* dst = gx.data() + (a * sp.extent + indices[k]) * sp.inner;
          const double* src = g.data() + (a * m + k) * sp.inner;
          for (std::size_t c = 0; c < sp.inner; ++c) dst[c] += src[c];
        }
      }
    });
  }
  return out;
}

Tensor put(const Tensor& x, std::size_t axis, const std::vector<std::size_t>& indices,
           std::size_t size) {
  const auto sp = split_at(x.shape(), axis);
  if (sp.extent != indices.size()) throw DimensionError("put: index count mismatch");
  for (auto i : indices) {
    if (i >= size) throw DimensionError("put: index out of range");
  }
  Shape out_shape = x.shape();
  out_shape[axis] = size;
  Tensor out(out_shape);
  const auto& in = x.impl().data;
  auto& o = out.impl().data;
  const std::size_t m = indices.size();
  for (std::size_t a = 0; a < sp.outer; ++a) {
    for (std::size_t k = 0; k < m; ++k) {
      const double* src = in.data() + (a * m + k) * sp.inner;
      double* dst = o.data() + (a * size + indices[k]) * sp.inner;
      for (std::size_t c = 0; c < sp.inner; ++c) dst[c] += src[c];
    }
  }
  if (tracking({&x})) {
    record({out.handle()}, [xh = x.handle(), oh = out.handle(), sp, indices, size] {
      auto& gx = grad_of(*xh);
      const auto& g = oh->grad;
      const std::size_t m = indices.size();
      for (std::size_t a = 0; a < sp.outer; ++a) {
        for (std::size_t k = 0; k < m; ++k) {
          double* dst = gx.data() + (a * m + k) * sp.inner;
          const double* src = g.data() + (a * size + indices[k]) * sp.inner;
          for (std::size_t c = 0; c < sp.inner; ++c) dst[c] += src[c];
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Products

namespace {

// c[m,p] += a[m,k] * b[k,p]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * p;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = a[i * k + kk];
      if (av == 0.0) continue;
      const double* bk = b + kk * p;
      for (std::size_t j = 0; j < p; ++j) ci[j] += av * bk[j];
    }
  }
}

// c[m,k] += g[m,p] * b[k,p]^T
void gemm_nt(const double* g, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* gi = g + i * p;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double* bk = b + kk * p;
      double acc = 0.0;
      for (std::size_t j = 0; j < p; ++j) acc += gi[j] * bk[j];
      c[i * k + kk] += acc;
    }
  }
}

// c[k,p] += a[m,k]^T * g[m,p]
void gemm_tn(const double* a, const double* g, double* c, std::size_t m, std::size_t k,
             std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* gi = g + i * p;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = a[i * k + kk];
      if (av == 0.0) continue;
      double* ck = c + kk * p;
      for (std::size_t j = 0; j < p; ++j) ck[j] += av * gi[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw DimensionError("matmul: rank-2 operands required, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), p = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions differ: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  Tensor out({m, p});
  gemm_nn(a.impl().data.data(), b.impl().data.data(), out.impl().data.data(), m, k, p);
  if (tracking({&a, &b})) {
    record({out.handle()}, [ah = a.handle(), bh = b.handle(), oh = out.handle(), m, k, p] {
      if (ah->requires_grad) gemm_nt(oh->grad.data(), bh->data.data(), grad_of(*ah).data(), m, k, p);
      if (bh->requires_grad) gemm_tn(ah->data.data(), oh->grad.data(), grad_of(*bh).data(), m, k, p);
    });
  }
  return out;
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
    throw DimensionError("bmm: incompatible shapes " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2), p = b.dim(2);
  Tensor out({batch, m, p});
  for (std::size_t i = 0; i < batch; ++i) {
    gemm_nn(a.impl().data.data() + i * m * k, b.impl().data.data() + i * k * p,
            out.impl().data.data() + i * m * p, m, k, p);
  }
  if (tracking({&a, &b})) {
    record({out.handle()},
           [ah = a.handle(), bh = b.handle(), oh = out.handle(), batch, m, k, p] {
             for (std::size_t i = 0; i < batch; ++i) {
               const double* g = oh->grad.data() + i * m * p;
               if (ah->requires_grad) {
                 gemm_nt(g, bh->data.data() + i * k * p, grad_of(*ah).data() + i * m * k, m, k, p);
               }
               if (bh->requires_grad) {
                 gemm_tn(ah->data.data() + i * m * k, g, grad_of(*bh).data() + i * k * p, m, k, p);
               }
             }
           });
  }
  return out;
}

Tensor softmax(const Tensor& x) {
  const std::size_t last = x.rank() - 1;
  const auto sp = split_at(x.shape(), last);
  // Shift by the row max (a constant, so it needs no gradient).
  Tensor shift(x.shape());
  {
    const auto& in = x.impl().data;
    auto& s = shift.impl().data;
    for (std::size_t r = 0; r < sp.outer; ++r) {
      const double m = *std::max_element(in.begin() + static_cast<long>(r * sp.extent),
                                         in.begin() + static_cast<long>((r + 1) * sp.extent));
      std::fill_n(s.begin() + static_cast<long>(r * sp.extent), sp.extent, m);
    }
  }
  Tensor e = exp(sub(x, shift));
  return div(e, sum(e, last, true));
}

// ---------------------------------------------------------------------------
// Fourier transform

ComplexTensor fft2(const Tensor& re, const Tensor& im, bool inverse) {
  if (re.rank() < 2) throw DimensionError("fft2: rank >= 2 required");
  if (im.defined() && im.shape() != re.shape()) {
    throw DimensionError("fft2: real/imag shapes differ: " + shape_str(re.shape()) + " vs " +
                         shape_str(im.shape()));
  }
  const Shape& s = re.shape();
  const std::size_t h = s[s.size() - 2], w = s[s.size() - 1];
  const std::size_t plane = h * w;
  const std::size_t batch = re.numel() / plane;

  std::vector<cplx> buf(re.numel());
  const auto& r = re.impl().data;
  for (std::size_t i = 0; i < buf.size(); ++i) {
    buf[i] = cplx(r[i], im.defined() ? im.impl().data[i] : 0.0);
  }
  fft2d(buf, batch, h, w, inverse);
  ComplexTensor out{Tensor(s), Tensor(s)};
  for (std::size_t i = 0; i < buf.size(); ++i) {
    out.re.impl().data[i] = buf[i].real();
    out.im.impl().data[i] = buf[i].imag();
  }
  if (tracking({&re, &im})) {
    // Adjoint of the unnormalized DFT is N times the inverse; adjoint of the
    // inverse is the forward transform over N.
    record({out.re.handle(), out.im.handle()},
           [rh = re.handle(), ih = im.handle(), orh = out.re.handle(), oih = out.im.handle(),
            batch, h, w, inverse] {
             const std::size_t n = orh->grad.size();
             std::vector<cplx> g(n);
             for (std::size_t i = 0; i < n; ++i) g[i] = cplx(orh->grad[i], oih->grad[i]);
             fft2d(g, batch, h, w, !inverse);
             const double factor = inverse ? 1.0 / static_cast<double>(h * w)
                                           : static_cast<double>(h * w);
             if (rh->requires_grad) {
               auto& gr = grad_of(*rh);
               for (std::size_t i = 0; i < n; ++i) gr[i] += factor * g[i].real();
             }
             if (ih && ih->requires_grad) {
               auto& gi = grad_of(*ih);
               for (std::size_t i = 0; i < n; ++i) gi[i] += factor * g[i].imag();
             }
           });
  }
  return out;
}

bool all_finite(const Tensor& x) {
  for (double v : x.values()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel()) throw DimensionError("max_abs_diff: size mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.at(i) - b.at(i)));
  return m;
}

}  // namespace aotpot
