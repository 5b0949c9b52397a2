#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "aotpot/dataset.hpp"
#include "aotpot/eval.hpp"
#include "aotpot/model.hpp"
#include "aotpot/rng.hpp"
#include "aotpot/tensor.hpp"

namespace aotpot {

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t steps_per_epoch = 100;
  std::size_t batch = 8;
  double warmup_fraction = 0.2;
  double lr = 1e-3;
  double weight_decay = 1e-6;
  double beta1 = 0.9;
  double beta2 = 0.9;
  double eps = 1e-8;
  double noise = 5e-4;  // std = noise * RMS(window)
  double clip = 1.0;    // global gradient norm; 0 disables
  std::uint64_t seed = 0;
  bool freeze_transform = false;
  bool freeze_backbone = false;
  std::size_t val_windows = 2;  // evaluation windows per validation trajectory
  std::size_t threads = 1;      // validation only
  std::size_t checkpoint_every = 1;  // epochs; 0 keeps only the final checkpoint

  std::size_t total_steps() const { return epochs * steps_per_epoch; }
  /// Throws std::invalid_argument on inconsistent settings.
  void validate() const;
};

/// Adds i.i.d. N(0, (noise * RMS(window))^2) to every element.
Tensor inject_noise(const Tensor& window, double noise, Rng& rng);

/// Squared L2 norm of pred - target over the first `channels` channels of
/// the last axis (0 = all). Differentiable, returns a scalar.
Tensor denoising_loss(const Tensor& pred, const Tensor& target, std::size_t channels = 0);
/// Mean over the batch of the per-sample losses.
Tensor denoising_loss(const std::vector<Tensor>& preds, const std::vector<Tensor>& targets);

/// Linear ramp 0 -> peak over the first warmup_fraction of `total`, cosine
/// decay to 0 afterwards.
double one_cycle_lr(std::size_t step, std::size_t total, double warmup_fraction, double peak);

/// Euclidean norm over the gradients of all parameters that have one.
double global_grad_norm(const ParamList& params);

struct AdamWConfig {
  double weight_decay = 1e-6;
  double beta1 = 0.9;
  double beta2 = 0.9;
  double eps = 1e-8;
};

/// Adam with decoupled weight decay. Parameters without a gradient
/// (frozen or unused) are left untouched.
class AdamW {
 public:
  AdamW() = default;
  AdamW(ParamList params, AdamWConfig cfg);

  /// Decay, then the bias-corrected Adam update. Gradients are multiplied
  /// by grad_scale first. A non-finite gradient throws NumericError naming
  /// the parameter before anything is modified.
  void step(double lr, double grad_scale = 1.0);

  std::size_t steps() const { return t_; }
  void set_steps(std::size_t t) { t_ = t; }
  const ParamList& params() const { return params_; }
  std::vector<Tensor>& first_moments() { return m_; }
  std::vector<Tensor>& second_moments() { return v_; }
  const std::vector<Tensor>& first_moments() const { return m_; }
  const std::vector<Tensor>& second_moments() const { return v_; }

 private:
  ParamList params_;
  AdamWConfig cfg_;
  std::vector<Tensor> m_, v_;
  std::size_t t_ = 0;
};

// ---------------------------------------------------------------------------

/// Checkpoint file "AOTC" v1, little-endian: magic | version u32 | config
/// hash u64 | step u64 | tensor count u32 + blocks | optimizer block count
/// u32 + blocks | rng text length u32 + text | CRC32 of everything before.
/// A block: name length u16 + UTF-8 | rank u8 | extents u32[] | dtype u8 |
/// payload.
struct Checkpoint {
  std::uint64_t config_hash = 0;
  std::uint64_t step = 0;
  std::vector<std::pair<std::string, Tensor>> tensors;
  std::vector<std::pair<std::string, Tensor>> optimizer;
  std::string rng_state;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Copies checkpoint tensors into the model. Throws std::runtime_error on
/// a config hash mismatch or a missing or misshapen tensor.
void load_model(AotPot& model, const Checkpoint& ckpt);
void load_model(AotPot& model, const std::filesystem::path& path);

/// Copies only the transform pair (names "transform.*") and freezes it.
/// The rest of the model keeps its fresh initialization.
void load_frozen_transform(AotPot& model, const std::filesystem::path& path);

// ---------------------------------------------------------------------------

struct EpochMetrics {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double lr = 0.0;
  double train_loss = 0.0;  // mean over the epoch's steps
  std::vector<std::pair<std::string, double>> validation;  // column, L2RE
};

struct TrainResult {
  std::vector<EpochMetrics> epochs;
  std::vector<double> step_losses;
  bool blew_up = false;
  std::size_t blowup_step = 0;
  std::string error;
};

class Trainer {
 public:
  Trainer(AotPot& model, const TrajectoryDataset& train, TrainConfig cfg,
          const TrajectoryDataset* validation = nullptr, std::optional<SamplingPlan> plan = {});

  /// One optimizer step on a freshly drawn batch; returns the mean loss.
  double train_step();

  /// Runs until total_steps(). Writes metrics CSV and checkpoints into
  /// `out_dir` when non-empty. A numeric blow-up stops training, keeps the
  /// last checkpoint on disk and is reported in the result.
  TrainResult run(const std::filesystem::path& out_dir = {});

  EvalReport validate() const;

  Checkpoint checkpoint() const;
  void save(const std::filesystem::path& path) const;
  /// Restores parameters, optimizer moments, step and rng streams.
  void resume(const std::filesystem::path& path);

  std::size_t step() const { return step_; }
  const TrainConfig& config() const { return cfg_; }
  AotPot& model() { return model_; }

 private:
  AotPot& model_;
  const TrajectoryDataset& train_;
  const TrajectoryDataset* validation_;
  TrainConfig cfg_;
  SamplingPlan plan_;
  ParamList params_;
  AdamW optimizer_;
  Rng sample_rng_, noise_rng_;
  std::size_t step_ = 0;
};

/// Columns of the metrics CSV for a validation report.
std::vector<std::pair<std::string, double>> validation_columns(const EvalReport& report);

}  // namespace aotpot
