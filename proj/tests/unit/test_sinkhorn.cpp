#include <cmath>
#include <vector>

#include "doctest.h"
#include "gradcheck.hpp"
#include "oracles.hpp"

#include "aotpot/rng.hpp"
#include "aotpot/sinkhorn.hpp"

using namespace aotpot;

TEST_CASE("large diagonal projects to the identity") {
  Tensor raw({4, 4});
  for (std::size_t i = 0; i < 4; ++i) raw.values()[i * 5] = 20.0;
  auto ds = sinkhorn_project(raw);
  CHECK(max_abs_diff(ds.matrix, Tensor::eye(4)) < 1e-6);
}

TEST_CASE("zero raw matrix projects to the exact uniform matrix") {
  auto ds = sinkhorn_project(Tensor({4, 4}));
  for (double v : ds.matrix.values()) CHECK(v == 0.25);
  CHECK(ds.residual == 0.0);
}

TEST_CASE("n = 1 always yields [[1]]") {
  auto ds = sinkhorn_project(Tensor({1, 1}, {-3.7}));
  CHECK(ds.matrix.item() == 1.0);
}

TEST_CASE("invalid inputs are rejected") {
  CHECK_THROWS_AS(sinkhorn_project(Tensor({2, 3})), DimensionError);
  Tensor bad({2, 2});
  bad.values()[1] = std::nan("");
  CHECK_THROWS(sinkhorn_project(bad));
  CHECK_THROWS(sinkhorn_project(Tensor({2, 2}), 0));
}

TEST_CASE("identity bias converges to the closed-form symmetric kernel") {
  // exp(I4) is symmetric with constant row sums e + 3, so one normalization
  // is already doubly stochastic: diag e/(e+3), off-diagonal 1/(e+3).
  auto ds = sinkhorn_project(Tensor::eye(4));
  const double e = std::exp(1.0);
  auto oracle = aotpot::testing::sinkhorn_to_convergence(Tensor::eye(4));
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      const double expect = i == j ? e / (e + 3.0) : 1.0 / (e + 3.0);
      CHECK(std::abs(ds.matrix.at(i * 4 + j) - expect) < 1e-12);
      CHECK(std::abs(oracle.at(i * 4 + j) - expect) < 1e-12);
    }
  }
}

TEST_CASE("random inputs match the run-to-convergence oracle") {
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor raw = randn({4, 4}, rng);
    auto ds = sinkhorn_project(raw);
    CHECK(ds.iters_used == kSinkhornIterations);
    CHECK(max_abs_diff(ds.matrix, aotpot::testing::sinkhorn_to_convergence(raw)) < 1e-5);
    for (double v : ds.matrix.values()) CHECK(v >= 0.0);
    // Column sums close last, so they are exact to round-off.
    for (std::size_t j = 0; j < 4; ++j) {
      double col = 0;
      for (std::size_t i = 0; i < 4; ++i) col += ds.matrix.at(i * 4 + j);
      CHECK(std::abs(col - 1.0) < 1e-14);
    }
  }
}

TEST_CASE("residual is non-increasing in the sweep count") {
  Rng rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor raw = randn({4, 4}, rng);
    double previous = sinkhorn_project(raw, 1).residual;
    for (std::size_t k = 2; k <= 20; ++k) {
      const double r = sinkhorn_project(raw, k).residual;
      CHECK(r <= previous + aotpot::testing::kResidualFloor);
      previous = r;
    }
  }
}

TEST_CASE("differentiable and plain paths agree") {
  Rng rng(29);
  Tensor raw = randn({5, 5}, rng).set_requires_grad(true);
  Tape tape;
  TapeScope scope(tape);
  auto taped = sinkhorn_project(raw, 20, true);
  auto plain = sinkhorn_project(raw.detach(), 20, false);
  CHECK(max_abs_diff(taped.matrix, plain.matrix) < 1e-14);
  CHECK(taped.matrix.requires_grad());
}

TEST_CASE("gradients through the projection match finite differences") {
  Rng rng(31);
  Tensor raw = randn({4, 4}, rng).set_requires_grad(true);
  Tensor weights = randn({4, 4}, rng);
  auto loss = [&] { return sum(mul(sinkhorn_project(raw, 20, true).matrix, weights)); };
  auto result = aotpot::testing::check_gradient(loss, raw, aotpot::testing::spread_coords(16, 16),
                                                "raw");
  INFO(result.worst);
  CHECK(result.max_rel_error < 1e-4);
}

TEST_CASE("composition") {
  DoublyStochastic swap{Tensor({2, 2}, {0, 1, 1, 0}), 0, 0.0};
  DoublyStochastic ident{Tensor::eye(2), 0, 0.0};
  std::vector<DoublyStochastic> twice{swap, swap};
  CHECK(max_abs_diff(ds_compose(twice).matrix, Tensor::eye(2)) == 0.0);

  DoublyStochastic p{Tensor({3, 3}, {0, 1, 0, 0, 0, 1, 1, 0, 0}), 0, 0.0};
  DoublyStochastic q{Tensor({3, 3}, {0, 0, 1, 1, 0, 0, 0, 1, 0}), 0, 0.0};
  std::vector<DoublyStochastic> pq{p, q};
  CHECK(max_abs_diff(ds_compose(pq).matrix, matmul(p.matrix, q.matrix)) == 0.0);

  Rng rng(37);
  auto m = sinkhorn_project(randn({2, 2}, rng));
  std::vector<DoublyStochastic> im{ident, m};
  CHECK(max_abs_diff(ds_compose(im).matrix, m.matrix) == 0.0);

  std::vector<DoublyStochastic> chain;
  double budget = 0;
  for (int i = 0; i < 24; ++i) {
    chain.push_back(sinkhorn_project(randn({4, 4}, rng)));
    budget += chain.back().residual;
  }
  auto product = ds_compose(chain);
  CHECK(product.residual < 1e-4);
  CHECK(product.residual <= budget + 1e-12);

  std::vector<DoublyStochastic> empty;
  CHECK_THROWS(ds_compose(empty));
  std::vector<DoublyStochastic> mixed{ident, chain[0]};
  CHECK_THROWS_AS(ds_compose(mixed), DimensionError);
}

TEST_CASE("spectral norm of doubly stochastic matrices") {
  CHECK(spectral_norm(Tensor::eye(4)) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(spectral_norm(Tensor({4, 4}, 0.25)) == doctest::Approx(1.0).epsilon(1e-12));
  Rng rng(41);
  for (int trial = 0; trial < 20; ++trial) {
    auto ds = sinkhorn_project(randn({4, 4}, rng));
    const double sigma = spectral_norm_bound_check(ds);
    CHECK(sigma <= 1.0 + 1e-5);
    CHECK(sigma >= 1.0 - 1e-5);
  }
}
