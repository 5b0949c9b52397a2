#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "aotpot/dataset.hpp"
#include "aotpot/model.hpp"
#include "aotpot/pde.hpp"
#include "aotpot/trainer.hpp"

namespace aotpot {

struct EvalOptions {
  std::size_t windows = 4;        // evaluation windows per test trajectory
  std::size_t horizon = 20;       // rollout steps (capped by trajectory length)
  std::size_t rollouts = 4;       // test trajectories rolled out
  std::size_t gain_probes = 8;    // probe windows for the gain analysis
  std::vector<std::string> transfer_families{"heat", "ns_vorticity"};
};

/// Everything a command needs. Every field has a default; a config file
/// overrides defaults and command-line settings override the file.
struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path out = "aotpot_out";
  std::size_t threads = 1;
  std::filesystem::path data;            // gen-data output directory
  std::filesystem::path checkpoint;      // model to evaluate
  std::filesystem::path transform_from;  // frozen mode source checkpoint
  ModelConfig model;                     // channels 0: taken from the dataset
  TrainConfig train;
  std::vector<PdeFamilySpec> families;
  DType dtype = DType::f64;
  EvalOptions eval;

  RunConfig();

  /// Applies one "section.key" = value setting. Throws
  /// std::invalid_argument naming the key on unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  /// Reads an INI file ([section] then key = value lines).
  void load(const std::filesystem::path& path);
  void load_text(const std::string& text);
  /// The resolved configuration as INI text; loading it reproduces this
  /// configuration exactly.
  std::string to_ini() const;

  PdeFamilySpec& family(const std::string& label);
  std::vector<std::string> family_labels() const;

  /// Seeds derived from `seed` for model initialization and training.
  std::uint64_t init_seed() const;
  std::uint64_t train_seed() const;
};

}  // namespace aotpot
