#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "aotpot/dataset.hpp"
#include "aotpot/model.hpp"
#include "aotpot/trainer.hpp"

namespace aotpot {

/// One training run of the pointwise-transform protocol.
struct ModeRun {
  std::string family;     // training and evaluation family
  std::string mode;       // vanilla, learned or frozen
  std::string source;     // family the frozen transform was trained on
  double final_train_loss = 0.0;  // mean loss over the last epoch
  double l2re = 0.0;              // one-step test L2RE on `family`
  bool transform_unchanged = true;  // frozen runs: transform bit-identical
  bool blew_up = false;
};

struct TransformExperiment {
  std::vector<std::string> families;
  std::vector<ModeRun> runs;
  /// transfer[k][j]: test L2RE on family j of a backbone trained on j with
  /// the transform learned on family k frozen. The diagonal is the matched
  /// frozen run.
  std::vector<std::vector<double>> transfer;

  const ModeRun& run(const std::string& family, const std::string& mode,
                     const std::string& source = {}) const;
};

/// Copies the transform pair of `src` into `dst` and freezes it there.
void freeze_transform_from(AotPot& dst, const AotPot& src);

/// For each family: Vanilla and Learned runs from the same initialization
/// and sampling seed, then for every source family k a Frozen run with k's
/// learned transform and a freshly initialized backbone.
TransformExperiment run_transform_experiment(ModelConfig base, const TrainConfig& train_cfg,
                                             const TrajectoryDataset& train,
                                             const TrajectoryDataset& test,
                                             const std::vector<std::string>& families,
                                             std::uint64_t init_seed, std::size_t eval_windows = 4);

/// family,mode,transform_source,final_train_loss,l2re
void write_mode_table(const std::filesystem::path& path, const TransformExperiment& exp);
/// First column the source family, one column per target family.
void write_transfer_matrix(const std::filesystem::path& path, const TransformExperiment& exp);

}  // namespace aotpot
