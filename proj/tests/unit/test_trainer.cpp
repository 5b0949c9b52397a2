#include <cmath>
#include <fstream>

#include "doctest.h"
#include "model_oracles.hpp"
#include "temp_dir.hpp"

#include "aotpot/errors.hpp"
#include "aotpot/trainer.hpp"

using namespace aotpot;
namespace fs = std::filesystem;

namespace {

std::pair<TrajectoryDataset, TrajectoryDataset> tiny_data(std::uint64_t seed = 3) {
  std::vector<PdeFamilySpec> specs;
  for (Family f : {Family::heat, Family::diffusion_reaction}) {
    auto s = PdeFamilySpec::defaults(f);
    s.height = s.width = 8;
    s.frames = 6;
    s.train_count = 3;
    s.test_count = 1;
    specs.push_back(s);
  }
  return build_dataset(specs, seed);
}

TrainConfig tiny_train(std::size_t epochs, std::size_t steps) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.steps_per_epoch = steps;
  cfg.batch = 2;
  cfg.lr = 3e-3;
  cfg.noise = 1e-3;
  cfg.seed = 21;
  return cfg;
}

std::vector<Tensor> snapshot(const ParamList& params, bool transform) {
  std::vector<Tensor> out;
  for (const auto& p : params) {
    if ((p.name.rfind("transform.", 0) == 0) == transform) out.push_back(p.tensor.detach());
  }
  return out;
}

bool identical(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (max_abs_diff(a[i], b[i]) != 0.0) return false;
  }
  return true;
}

void set_grad(Tensor p, double g) {
  Tape tape;
  TapeScope scope(tape);
  tape.backward(sum(scale(p, g)));
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), {});
}

}  // namespace

TEST_CASE("noise injection") {
  Rng rng(1);
  Tensor w = randn({4, 4}, rng);
  CHECK(max_abs_diff(inject_noise(w, 0.0, rng), w) == 0.0);
  CHECK(max_abs_diff(inject_noise(Tensor({4, 4}), 0.3, rng), Tensor({4, 4})) == 0.0);
  CHECK_THROWS(inject_noise(w, -1.0, rng));

  const std::size_t n = 1000000;
  Tensor ones({n}, 1.0);
  Tensor noisy = inject_noise(ones, 0.1, rng);
  double s = 0, ss = 0;
  for (double v : noisy.values()) {
    s += v - 1.0;
    ss += (v - 1.0) * (v - 1.0);
  }
  const double mean = s / n, std = std::sqrt(ss / n - mean * mean);
  CHECK(std >= 0.095);
  CHECK(std <= 0.105);
  CHECK(max_abs_diff(ones, Tensor({n}, 1.0)) == 0.0);
}

TEST_CASE("denoising loss examples") {
  Rng rng(2);
  Tensor t = randn({3, 3, 2}, rng);
  CHECK(denoising_loss(t, t).item() == 0.0);
  CHECK(denoising_loss(add_scalar(t, 0.5), t).item() == doctest::Approx(0.25 * 18));
  Tensor p = randn({3, 3, 2}, rng);
  double oracle = 0;
  for (std::size_t i = 0; i < 18; ++i) oracle += (p.at(i) - t.at(i)) * (p.at(i) - t.at(i));
  CHECK(std::abs(denoising_loss(p, t).item() - oracle) < 1e-12);
  double first = 0;
  for (std::size_t i = 0; i < 18; i += 2) first += (p.at(i) - t.at(i)) * (p.at(i) - t.at(i));
  CHECK(std::abs(denoising_loss(p, t, 1).item() - first) < 1e-12);
  CHECK(denoising_loss({p, t}, {t, t}).item() == doctest::Approx(oracle / 2));
  CHECK_THROWS_AS(denoising_loss(p, Tensor({3, 3, 1})), DimensionError);
}

TEST_CASE("AdamW examples") {
  SUBCASE("zero gradient without decay leaves parameters unchanged") {
    Tensor p = parameter(Tensor({3}, {1.0, -2.0, 0.5}));
    AdamW opt({{"p", p}}, {0.0, 0.9, 0.9, 1e-8});
    for (int i = 0; i < 3; ++i) {
      p.zero_grad();
      set_grad(p, 0.0);
      opt.step(0.1);
    }
    CHECK(max_abs_diff(p, Tensor({3}, {1.0, -2.0, 0.5})) == 0.0);
  }
  SUBCASE("one bias-corrected step moves by lr") {
    Tensor p = parameter(Tensor({1}, {1.0}));
    AdamW opt({{"p", p}}, {0.0, 0.9, 0.9, 1e-8});
    set_grad(p, 1.0);
    opt.step(0.1);
    CHECK(p.at(0) == doctest::Approx(0.9).epsilon(1e-7));
    CHECK(opt.steps() == 1);
  }
  SUBCASE("decoupled decay alone") {
    Tensor p = parameter(Tensor({1}, {1.0}));
    AdamW opt({{"p", p}}, {0.1, 0.9, 0.9, 1e-8});
    set_grad(p, 0.0);
    opt.step(0.1);
    CHECK(p.at(0) == 0.99);
  }
  SUBCASE("non-finite gradient aborts with the parameter name") {
    Tensor p = parameter(Tensor({2}, {1.0, 2.0}));
    Tensor q = parameter(Tensor({1}, {3.0}));
    AdamW opt({{"good", q}, {"bad.weight", p}}, {});
    set_grad(q, 1.0);
    set_grad(p, std::nan(""));
    try {
      opt.step(0.1);
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("bad.weight") != std::string::npos);
    }
    CHECK(q.at(0) == 3.0);
    CHECK(opt.steps() == 0);
  }
  SUBCASE("parameters without gradients are skipped") {
    Tensor p = parameter(Tensor({1}, {1.0}));
    AdamW opt({{"p", p}}, {0.5, 0.9, 0.9, 1e-8});
    opt.step(0.1);
    CHECK(p.at(0) == 1.0);
  }
}

TEST_CASE("one-cycle schedule") {
  const std::size_t total = 1000;
  CHECK(one_cycle_lr(0, total, 0.2, 1e-3) == 0.0);
  CHECK(one_cycle_lr(200, total, 0.2, 1e-3) == 1e-3);
  CHECK(std::abs(one_cycle_lr(total, total, 0.2, 1e-3)) < 1e-18);
  CHECK(one_cycle_lr(100, total, 0.2, 1e-3) == doctest::Approx(5e-4));
  CHECK(one_cycle_lr(600, total, 0.2, 1e-3) == doctest::Approx(5e-4));
  double best = 0, previous = 0, max_jump = 0;
  for (std::size_t s = 0; s <= total; ++s) {
    const double lr = one_cycle_lr(s, total, 0.2, 1e-3);
    best = std::max(best, lr);
    if (s > 0) max_jump = std::max(max_jump, std::abs(lr - previous));
    previous = lr;
  }
  CHECK(best == 1e-3);
  CHECK(max_jump <= 1e-3 / 200 + 1e-15);
  CHECK(one_cycle_lr(0, 10, 0.0, 1.0) == 1.0);
}

TEST_CASE("train config validation") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.warmup_fraction = 1.0;
  CHECK_THROWS(cfg.validate());
  cfg = TrainConfig{};
  cfg.noise = -1;
  CHECK_THROWS(cfg.validate());
  cfg = TrainConfig{};
  cfg.batch = 0;
  CHECK_THROWS(cfg.validate());
}

TEST_CASE("zero learning rate keeps parameters bit-identical") {
  auto [train, test] = tiny_data();
  AotPot model(testing::tiny_config(), 5);
  auto before = snapshot(model.parameters(), false);
  auto cfg = tiny_train(2, 3);
  cfg.lr = 0.0;
  cfg.noise = 0.0;
  Trainer trainer(model, train, cfg, &test);
  auto result = trainer.run();
  CHECK(!result.blew_up);
  CHECK(result.step_losses.size() == 6);
  CHECK(identical(before, snapshot(model.parameters(), false)));
  CHECK(result.epochs.size() == 2);
  CHECK(result.epochs[0].validation.size() == 3);
  CHECK(result.epochs[0].validation[0].second == result.epochs[1].validation[0].second);
}

TEST_CASE("frozen transform stays bit-identical while the backbone trains") {
  auto [train, test] = tiny_data();
  testing::TempDir dir;
  auto cfg_model = testing::tiny_config();
  cfg_model.transform = TransformMode::learned;
  AotPot source(cfg_model, 6);
  {
    Trainer t(source, train, tiny_train(1, 3));
    t.run(dir / "source");
  }

  cfg_model.transform = TransformMode::frozen;
  AotPot model(cfg_model, 7);
  load_frozen_transform(model, dir / "source" / "checkpoint.aotc");
  ParamList src_pair;
  source.transform()->collect(src_pair, "transform");
  auto loaded = snapshot(model.parameters(), true);
  CHECK(identical(loaded, snapshot(src_pair, true)));
  CHECK(max_abs_diff(loaded[0], Tensor::eye(2)) > 0.0);

  auto backbone = snapshot(model.parameters(), false);
  Trainer trainer(model, train, tiny_train(1, 4));
  CHECK(!trainer.run().blew_up);
  CHECK(identical(loaded, snapshot(model.parameters(), true)));
  CHECK(!identical(backbone, snapshot(model.parameters(), false)));

  // The reverse: a frozen backbone with a trainable transform.
  cfg_model.transform = TransformMode::learned;
  AotPot other(cfg_model, 8);
  auto other_backbone = snapshot(other.parameters(), false);
  auto cfg = tiny_train(1, 3);
  cfg.freeze_backbone = true;
  Trainer t2(other, train, cfg);
  t2.run();
  CHECK(identical(other_backbone, snapshot(other.parameters(), false)));
  CHECK(!identical(loaded, snapshot(other.parameters(), true)));
}

TEST_CASE("resuming from a mid-run checkpoint reproduces the unbroken run") {
  auto [train, test] = tiny_data();
  testing::TempDir dir;
  auto cfg = tiny_train(2, 5);

  AotPot a(testing::tiny_config(), 9);
  Trainer ta(a, train, cfg);
  auto unbroken = ta.run();

  AotPot b(testing::tiny_config(), 9);
  Trainer tb(b, train, cfg);
  std::vector<double> losses;
  for (int i = 0; i < 5; ++i) losses.push_back(tb.train_step());
  tb.save(dir / "mid.aotc");

  AotPot c(testing::tiny_config(), 1234);
  Trainer tc(c, train, cfg);
  tc.resume(dir / "mid.aotc");
  CHECK(tc.step() == 5);
  auto rest = tc.run(dir / "resumed");
  losses.insert(losses.end(), rest.step_losses.begin(), rest.step_losses.end());

  REQUIRE(losses.size() == unbroken.step_losses.size());
  for (std::size_t i = 0; i < losses.size(); ++i) CHECK(losses[i] == unbroken.step_losses[i]);
  CHECK(identical(snapshot(a.parameters(), false), snapshot(c.parameters(), false)));
}

TEST_CASE("same seed gives identical loss traces") {
  auto [train, test] = tiny_data();
  auto cfg = tiny_train(1, 10);
  AotPot a(testing::tiny_config(), 10), b(testing::tiny_config(), 10);
  auto ra = Trainer(a, train, cfg).run();
  auto rb = Trainer(b, train, cfg).run();
  CHECK(ra.step_losses == rb.step_losses);
  cfg.seed = 22;
  AotPot c(testing::tiny_config(), 10);
  CHECK(Trainer(c, train, cfg).run().step_losses != ra.step_losses);
}

TEST_CASE("checkpoint files round-trip and reject corruption") {
  auto [train, test] = tiny_data();
  testing::TempDir dir;
  AotPot model(testing::tiny_config(), 11);
  Trainer trainer(model, train, tiny_train(1, 2));
  trainer.train_step();
  trainer.save(dir / "c.aotc");
  Checkpoint ck = read_checkpoint(dir / "c.aotc");
  CHECK(ck.step == 1);
  CHECK(ck.config_hash == model.config().hash());
  CHECK(ck.tensors.size() == model.parameters().size());
  CHECK(ck.optimizer.size() == 2 * model.parameters().size());
  write_checkpoint(dir / "d.aotc", ck);
  CHECK(read_bytes(dir / "c.aotc") == read_bytes(dir / "d.aotc"));

  AotPot copy(testing::tiny_config(), 99);
  load_model(copy, dir / "c.aotc");
  CHECK(identical(snapshot(copy.parameters(), false), snapshot(model.parameters(), false)));

  auto wider = testing::tiny_config();
  wider.embed_dim = 16;
  AotPot mismatch(wider, 1);
  try {
    load_model(mismatch, dir / "c.aotc");
    FAIL("expected a hash mismatch");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("hash") != std::string::npos);
  }

  std::string bytes = read_bytes(dir / "c.aotc");
  bytes[bytes.size() / 2] ^= 0x10;
  std::ofstream(dir / "e.aotc", std::ios::binary) << bytes;
  CHECK_THROWS_AS(read_checkpoint(dir / "e.aotc"), FormatError);
  std::ofstream(dir / "f.aotc", std::ios::binary) << "AOTD";
  CHECK_THROWS_AS(read_checkpoint(dir / "f.aotc"), FormatError);
}

TEST_CASE("metrics CSV and blow-up keep the last good checkpoint") {
  auto [train, test] = tiny_data();
  testing::TempDir dir;
  AotPot model(testing::tiny_config(), 12);
  auto cfg = tiny_train(2, 2);
  auto first = Trainer(model, train, tiny_train(1, 2), &test).run(dir / "run");
  CHECK(first.epochs.size() == 1);
  std::ifstream in(dir / "run" / "metrics.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "epoch,step,lr,train_loss,heat_l2re,diffusion_reaction_l2re,heat@nu=0.001_l2re");
  const std::string good = read_bytes(dir / "run" / "checkpoint.aotc");

  TrajectoryDataset poisoned = train;
  for (auto& t : poisoned.trajectories) {
    t.data = t.data.detach();
    for (double& v : t.data.values()) v = std::nan("");
  }
  Trainer bad(model, poisoned, cfg, &test);
  auto result = bad.run(dir / "run");
  CHECK(result.blew_up);
  CHECK(result.blowup_step == 1);
  CHECK(!result.error.empty());
  CHECK(read_bytes(dir / "run" / "checkpoint.aotc") == good);
}

TEST_CASE("desk-scale heat training lowers the loss") {
  auto spec = PdeFamilySpec::defaults(Family::heat);
  spec.train_count = 16;
  spec.test_count = 4;
  spec.frames = 20;
  auto [train, test] = build_dataset({spec}, 31);
  ModelConfig mc;
  mc.channels = 1;
  AotPot model(mc, 32);

  auto fixed_loss = [&] {
    double total = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
      Sample s = make_sample(test, i, 4, mc.t_in);
      total += denoising_loss(model.forward(s.window), s.target).item();
    }
    return total;
  };
  const double before = fixed_loss();
  auto cfg = TrainConfig{};
  cfg.epochs = 2;
  cfg.steps_per_epoch = 100;
  cfg.batch = 4;
  cfg.seed = 33;
  Trainer trainer(model, train, cfg);
  auto result = trainer.run();
  REQUIRE(!result.blew_up);
  double tail = 0;
  for (std::size_t i = 180; i < 200; ++i) tail += result.step_losses[i];
  tail /= 20;
  MESSAGE("heat loss: step 0 " << result.step_losses[0] << ", final 20-step mean " << tail
                               << "; held-out " << before << " -> " << fixed_loss());
  CHECK(tail < result.step_losses[0]);
  CHECK(fixed_loss() < before);
}
