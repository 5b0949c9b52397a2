#include <cmath>
#include <complex>
#include <numbers>
#include <random>

#include "doctest.h"
#include "gradcheck.hpp"

#include "aotpot/fft.hpp"
#include "aotpot/rng.hpp"
#include "aotpot/tensor.hpp"

using namespace aotpot;
using aotpot::testing::check_gradient;
using aotpot::testing::relative_error;

namespace {

// O(N^2) two-dimensional DFT over the last two axes of one plane.
std::vector<cplx> naive_dft2(const std::vector<cplx>& x, std::size_t h, std::size_t w,
                             bool inverse) {
  std::vector<cplx> out(h * w);
  const double sign = inverse ? 1.0 : -1.0;
  for (std::size_t kr = 0; kr < h; ++kr) {
    for (std::size_t kc = 0; kc < w; ++kc) {
      cplx acc = 0.0;
      for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
          const double angle = sign * 2.0 * std::numbers::pi *
                               (static_cast<double>(kr * r) / static_cast<double>(h) +
                                static_cast<double>(kc * c) / static_cast<double>(w));
          acc += x[r * w + c] * std::polar(1.0, angle);
        }
      }
      out[kr * w + kc] = inverse ? acc / static_cast<double>(h * w) : acc;
    }
  }
  return out;
}

}  // namespace

TEST_CASE("elementwise examples") {
  Tensor a({2}, {1, 2});
  Tensor b({2}, {3, 4});
  Tensor c = add(a, b);
  CHECK(c.at(0) == 4);
  CHECK(c.at(1) == 6);
  CHECK(sigmoid(Tensor::scalar(0.0)).item() == 0.5);
  CHECK(relu(Tensor({2}, {-1.0, 2.0})).at(0) == 0.0);
  CHECK(rsqrt(Tensor::scalar(4.0)).item() == doctest::Approx(0.5));
}

TEST_CASE("exp derivative at 1 matches finite difference") {
  Tensor x = Tensor::scalar(1.0).set_requires_grad(true);
  auto f = [&] { return sum(exp(x)); };
  Tape tape;
  {
    TapeScope scope(tape);
    tape.backward(f());
  }
  const double analytic = x.grad()[0];
  CHECK(std::abs(analytic - std::numbers::e) < 1e-12);
  const double h = 1e-6;
  const double numeric = (std::exp(1.0 + h) - std::exp(1.0 - h)) / (2 * h);
  CHECK(std::abs(analytic - numeric) < 1e-8);
}

TEST_CASE("broadcast shape mismatch names both shapes") {
  Tensor a({2, 3});
  Tensor b({4});
  try {
    (void)add(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[4]") != std::string::npos);
  }
}

TEST_CASE("broadcasting follows the trailing-dimension rule") {
  Rng rng(7);
  std::uniform_int_distribution<int> extent(1, 3);
  std::bernoulli_distribution squash(0.35);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t rank = 1 + static_cast<std::size_t>(extent(rng));
    Shape out(rank);
    for (auto& e : out) e = static_cast<std::size_t>(extent(rng));
    Shape sa = out, sb(out.begin() + static_cast<long>(rank / 2), out.end());
    for (auto& e : sa) if (squash(rng)) e = 1;
    for (auto& e : sb) if (squash(rng)) e = 1;
    Tensor a = randn(sa, rng), b = randn(sb, rng);
    Tensor c = mul(a, b);
    const Shape expect = broadcast_shape(sa, sb);
    REQUIRE(c.shape() == expect);

    // Explicit index expansion.
    std::vector<std::size_t> idx(expect.size(), 0);
    for (std::size_t flat = 0; flat < c.numel(); ++flat) {
      std::size_t rem = flat;
      for (std::size_t d = expect.size(); d-- > 0;) {
        idx[d] = rem % expect[d];
        rem /= expect[d];
      }
      auto lookup = [&](const Tensor& t) {
        const Shape& s = t.shape();
        const std::size_t off = expect.size() - s.size();
        std::size_t p = 0;
        for (std::size_t d = 0; d < s.size(); ++d) p = p * s[d] + (s[d] == 1 ? 0 : idx[d + off]);
        return t.at(p);
      };
      CHECK(c.at(flat) == lookup(a) * lookup(b));
    }
  }
}

TEST_CASE("matmul examples and loop oracle") {
  Tensor m({2, 2}, {1, 2, 3, 4});
  CHECK(max_abs_diff(matmul(Tensor::eye(2), m), m) == 0.0);
  Tensor p = matmul(Tensor({2, 2}, {1, 0, 0, 0}), Tensor({2, 2}, {0, 1, 1, 0}));
  CHECK(max_abs_diff(p, Tensor({2, 2}, {0, 1, 0, 0})) == 0.0);

  Rng rng(11);
  Tensor a = randn({3, 4}, rng), b = randn({4, 2}, rng);
  Tensor c = matmul(a, b);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      double acc = 0;
      for (std::size_t k = 0; k < 4; ++k) acc += a.at(i * 4 + k) * b.at(k * 2 + j);
      CHECK(std::abs(c.at(i * 2 + j) - acc) < 1e-12);
    }
  }
  CHECK_THROWS_AS(matmul(a, a), DimensionError);
}

TEST_CASE("fft2 impulse and constant fields") {
  Tensor constant({4, 4}, 2.5);
  auto spec = fft2(constant, Tensor(), false);
  for (std::size_t i = 0; i < 16; ++i) {
    const double expect = i == 0 ? 16 * 2.5 : 0.0;
    CHECK(std::abs(spec.re.at(i) - expect) < 1e-12);
    CHECK(std::abs(spec.im.at(i)) < 1e-12);
  }
  Tensor delta({4, 4});
  delta.values()[0] = 1.0;
  auto flat = fft2(delta, Tensor(), false);
  for (std::size_t i = 0; i < 16; ++i) {
    CHECK(std::abs(flat.re.at(i) - 1.0) < 1e-12);
    CHECK(std::abs(flat.im.at(i)) < 1e-12);
  }
  CHECK_THROWS_AS(fft2(Tensor({3, 4}), Tensor(), false), UnsupportedSizeError);
}

TEST_CASE("fft2 matches the direct DFT and satisfies Parseval") {
  Rng rng(3);
  for (std::size_t n : {2u, 4u, 8u, 16u}) {
    Tensor re = randn({n, n}, rng), im = randn({n, n}, rng);
    std::vector<cplx> x(n * n);
    for (std::size_t i = 0; i < n * n; ++i) x[i] = {re.at(i), im.at(i)};
    for (bool inverse : {false, true}) {
      auto fast = fft2(re, im, inverse);
      auto slow = naive_dft2(x, n, n, inverse);
      double err = 0;
      for (std::size_t i = 0; i < n * n; ++i) {
        err = std::max(err, std::abs(cplx(fast.re.at(i), fast.im.at(i)) - slow[i]));
      }
      CHECK(err < 1e-10);
    }
    auto spec = fft2(re, im, false);
    double energy = 0, spectral = 0;
    for (std::size_t i = 0; i < n * n; ++i) {
      energy += re.at(i) * re.at(i) + im.at(i) * im.at(i);
      spectral += spec.re.at(i) * spec.re.at(i) + spec.im.at(i) * spec.im.at(i);
    }
    CHECK(std::abs(energy - spectral / static_cast<double>(n * n)) < 1e-10 * std::max(1.0, energy));
  }
}

TEST_CASE("fft2 round trip for all power-of-two sizes up to 64") {
  Rng rng(5);
  for (std::size_t h = 1; h <= 64; h *= 2) {
    for (std::size_t w = 1; w <= 64; w *= 2) {
      Tensor x = randn({2, h, w}, rng);
      auto spec = fft2(x, Tensor(), false);
      auto back = fft2(spec.re, spec.im, true);
      CHECK(max_abs_diff(back.re, x) < 1e-10);
      double imag = 0;
      for (double v : back.im.values()) imag = std::max(imag, std::abs(v));
      CHECK(imag < 1e-10);
    }
  }
}

TEST_CASE("backward examples") {
  Tensor x = Tensor::scalar(2.0).set_requires_grad(true);
  Tape tape;
  {
    TapeScope scope(tape);
    tape.backward(scale(x, 3.0));
  }
  CHECK(x.grad()[0] == 3.0);

  Tensor v = Tensor({2}, {1, 2}).set_requires_grad(true);
  Tape t2;
  {
    TapeScope scope(t2);
    Tensor y = sum(mul(v, v));
    t2.backward(y);
    CHECK(v.grad()[0] == 2.0);
    CHECK(v.grad()[1] == 4.0);
    // Repeated calls accumulate into leaves.
    t2.backward(y);
    CHECK(v.grad()[0] == 4.0);
    CHECK(v.grad()[1] == 8.0);
  }
  Tensor big = Tensor({2}, {1, 2}).set_requires_grad(true);
  Tape t3;
  TapeScope scope(t3);
  CHECK_THROWS_AS(t3.backward(mul(big, big)), DimensionError);
}

TEST_CASE("leaves without requires_grad never receive a gradient") {
  Tensor w = Tensor({2}, {1, 2}).set_requires_grad(true);
  Tensor c({2}, {3, 4});
  Tape tape;
  {
    TapeScope scope(tape);
    tape.backward(sum(mul(w, c)));
  }
  CHECK(w.has_grad());
  CHECK_FALSE(c.has_grad());
  CHECK(tape.size() > 0);
  tape.clear();
  CHECK(tape.size() == 0);
}

TEST_CASE("operations without an active tape record nothing") {
  Tensor w = Tensor({2}, {1, 2}).set_requires_grad(true);
  Tensor y = mul(w, w);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("every primitive passes a randomized finite-difference check") {
  Rng rng(2024);
  std::uniform_real_distribution<double> pos(0.5, 2.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double tol = 1e-4;

  struct Case {
    const char* name;
    std::function<Tensor(const Tensor&, const Tensor&)> fn;
    bool positive;
  };
  const std::vector<Case> cases = {
      {"add", [](const Tensor& a, const Tensor& b) { return add(a, b); }, false},
      {"sub", [](const Tensor& a, const Tensor& b) { return sub(a, b); }, false},
      {"mul", [](const Tensor& a, const Tensor& b) { return mul(a, b); }, false},
      {"div", [](const Tensor& a, const Tensor& b) { return div(a, b); }, true},
      {"neg", [](const Tensor& a, const Tensor&) { return neg(a); }, false},
      {"exp", [](const Tensor& a, const Tensor&) { return exp(a); }, false},
      {"sigmoid", [](const Tensor& a, const Tensor&) { return sigmoid(a); }, false},
      {"relu", [](const Tensor& a, const Tensor&) { return relu(a); }, true},
      {"rsqrt", [](const Tensor& a, const Tensor&) { return rsqrt(a); }, true},
      {"gelu", [](const Tensor& a, const Tensor&) { return gelu(a); }, false},
      {"cos", [](const Tensor& a, const Tensor&) { return cos(a); }, false},
      {"sin", [](const Tensor& a, const Tensor&) { return sin(a); }, false},
      {"softmax", [](const Tensor& a, const Tensor&) { return softmax(a); }, false},
  };
  for (const auto& c : cases) {
    double worst = 0;
    for (int point = 0; point < 100; ++point) {
      Tensor a({3}), b({3}), weights({3});
      for (std::size_t i = 0; i < 3; ++i) {
        a.values()[i] = c.positive ? pos(rng) : gauss(rng);
        b.values()[i] = c.positive ? pos(rng) : gauss(rng);
        weights.values()[i] = gauss(rng);
      }
      a.set_requires_grad(true);
      b.set_requires_grad(true);
      auto loss = [&] { return sum(mul(c.fn(a, b), weights)); };
      worst = std::max(worst, check_gradient(loss, a, {0, 1, 2}, c.name).max_rel_error);
      worst = std::max(worst, check_gradient(loss, b, {0, 1, 2}, c.name).max_rel_error);
    }
    INFO(c.name);
    CHECK(worst < tol);
  }
}

TEST_CASE("shape ops, products and fft pass finite-difference checks") {
  Rng rng(99);
  Tensor a = randn({2, 3, 4}, rng).set_requires_grad(true);
  Tensor b = randn({2, 4, 2}, rng).set_requires_grad(true);
  Tensor w = randn({2, 3, 2}, rng);
  auto bmm_loss = [&] { return sum(mul(bmm(a, b), w)); };
  CHECK(check_gradient(bmm_loss, a, aotpot::testing::spread_coords(24, 24), "bmm.a").max_rel_error < 1e-4);
  CHECK(check_gradient(bmm_loss, b, aotpot::testing::spread_coords(16, 16), "bmm.b").max_rel_error < 1e-4);

  Tensor x = randn({2, 4, 4}, rng).set_requires_grad(true);
  Tensor y = randn({2, 4, 4}, rng).set_requires_grad(true);
  Tensor wr = randn({2, 4, 4}, rng), wi = randn({2, 4, 4}, rng);
  for (bool inverse : {false, true}) {
    auto loss = [&] {
      auto s = fft2(x, y, inverse);
      return add(sum(mul(s.re, wr)), sum(mul(s.im, wi)));
    };
    CHECK(check_gradient(loss, x, aotpot::testing::spread_coords(32, 32), "fft.re").max_rel_error < 1e-4);
    CHECK(check_gradient(loss, y, aotpot::testing::spread_coords(32, 32), "fft.im").max_rel_error < 1e-4);
  }

  Tensor p = randn({2, 3, 4}, rng).set_requires_grad(true);
  Tensor wp = randn({4, 2, 3}, rng);
  auto perm_loss = [&] { return sum(mul(permute(p, {2, 0, 1}), wp)); };
  CHECK(check_gradient(perm_loss, p, aotpot::testing::spread_coords(24, 24), "permute").max_rel_error < 1e-4);

  Tensor q = randn({3, 5}, rng).set_requires_grad(true);
  Tensor wq = randn({3, 7}, rng);
  auto take_put = [&] { return sum(mul(put(take(q, 1, {4, 0, 2}), 1, {6, 1, 3}, 7), wq)); };
  CHECK(check_gradient(take_put, q, aotpot::testing::spread_coords(15, 15), "take/put").max_rel_error < 1e-4);

  Tensor r = randn({3, 4}, rng).set_requires_grad(true);
  Tensor wr2 = randn({3}, rng);
  auto red = [&] { return add(sum(mul(mean(r, 1), wr2)), sum(square(sum(r, 0, true)))); };
  CHECK(check_gradient(red, r, aotpot::testing::spread_coords(12, 12), "reduce").max_rel_error < 1e-4);
}
