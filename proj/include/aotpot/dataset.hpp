#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "aotpot/pde.hpp"
#include "aotpot/rng.hpp"
#include "aotpot/tensor.hpp"

namespace aotpot {

/// Trajectories sharing one grid and a common padded channel count.
struct TrajectoryDataset {
  std::vector<Trajectory> trajectories;
  Tensor mask;  // [H, W], all ones on the periodic grids used here
  std::size_t channels = 0;  // C_max

  std::size_t size() const { return trajectories.size(); }
  bool empty() const { return trajectories.empty(); }
  std::size_t height() const { return empty() ? 0 : trajectories.front().data.dim(1); }
  std::size_t width() const { return empty() ? 0 : trajectories.front().data.dim(2); }

  /// Distinct labels in order of first appearance.
  std::vector<std::string> labels() const;
  /// Indices of trajectories carrying `label`.
  std::vector<std::size_t> indices_of(const std::string& label) const;
};

inline constexpr double kChannelPadValue = 1.0;

/// Appends constant channels so every trajectory has `channels` channels.
/// Original channels are copied unchanged.
Tensor pad_channels(const Tensor& data, std::size_t channels, double value = kChannelPadValue);

/// Pads every trajectory to the widest channel count and fills the mask.
TrajectoryDataset assemble(std::vector<Trajectory> trajectories, std::size_t min_channels = 0);

/// The trajectories of one family, keeping the padded channel count.
TrajectoryDataset select_family(const TrajectoryDataset& ds, const std::string& label);

/// Generates every family and splits each into train/test by a seeded
/// shuffle. Trajectory i of a family depends only on (seed, family, i).
std::pair<TrajectoryDataset, TrajectoryDataset> build_dataset(const std::vector<PdeFamilySpec>& specs,
                                                              std::uint64_t seed,
                                                              std::size_t threads = 1);

/// Dataset-level importance weights for balanced sampling.
class SamplingPlan {
 public:
  SamplingPlan() = default;
  /// Groups `ds` by label; weights default to each trajectory's weight.
  explicit SamplingPlan(const TrajectoryDataset& ds);
  SamplingPlan(const TrajectoryDataset& ds, const std::vector<std::pair<std::string, double>>& weights);

  std::size_t datasets() const { return labels_.size(); }
  const std::vector<std::string>& labels() const { return labels_; }
  double weight(std::size_t k) const { return weights_[k]; }
  const std::vector<std::size_t>& members(std::size_t k) const { return members_[k]; }

  /// Probability of drawing dataset k: w_k / sum(w).
  double dataset_probability(std::size_t k) const;
  /// Probability of one particular datapoint of dataset k:
  /// w_k / (|D_k| sum(w)).
  double datapoint_probability(std::size_t k) const;

  /// Dataset index for a uniform variate u in [0, 1).
  std::size_t pick(double u) const;

 private:
  std::vector<std::string> labels_;
  std::vector<double> weights_;
  std::vector<std::vector<std::size_t>> members_;
};

struct Sample {
  Tensor window;  // [T_in, H, W, C]
  Tensor target;  // [H, W, C]
  std::size_t dataset = 0;  // index into SamplingPlan::labels()
  std::size_t trajectory = 0;
  std::size_t start = 0;
};

/// Draws `batch` windows: dataset by weight, then trajectory and window
/// start uniformly. Throws std::invalid_argument when a trajectory is
/// shorter than t_in + 1 frames.
std::vector<Sample> sample_batch(const TrajectoryDataset& ds, const SamplingPlan& plan,
                                 std::size_t batch, std::size_t t_in, Rng& rng);

/// Slices frames [start, start + t_in) and the following target frame.
Sample make_sample(const TrajectoryDataset& ds, std::size_t trajectory, std::size_t start,
                   std::size_t t_in);

// ---------------------------------------------------------------------------
// "AOTD" v1 trajectory files and plain-text manifests.

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

struct AotdHeader {
  std::uint32_t version = 1;
  std::string label;
  std::uint32_t height = 0, width = 0, frames = 0, channels = 0;
  DType dtype = DType::f64;
  std::uint32_t crc = 0;
};

/// Writes data [T, H, W, C] with the label. Returns the payload CRC32.
std::uint32_t write_aotd(const std::filesystem::path& path, const Tensor& data,
                         const std::string& label, DType dtype = DType::f64);
/// Throws FormatError on bad magic, version, truncation or CRC mismatch.
Tensor read_aotd(const std::filesystem::path& path, AotdHeader* header = nullptr);

struct ManifestEntry {
  std::string path;  // relative to the manifest's directory
  std::string label;
  double weight = 1.0;
  double param = 0.0;  // optional fourth column
};

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

/// Loads every trajectory listed in a manifest (channel count taken from the
/// family label when it names a known family, else from the file).
TrajectoryDataset load_manifest(const std::filesystem::path& path);

struct WrittenDataset {
  std::filesystem::path train_manifest;
  std::filesystem::path test_manifest;
  std::vector<std::pair<std::string, std::uint32_t>> crcs;  // relative path, CRC32
};

/// Writes <root>/<label>/<split>_NNNN.aotd files (unpadded channels) plus
/// train.manifest and test.manifest.
WrittenDataset write_dataset(const std::filesystem::path& root, const TrajectoryDataset& train,
                             const TrajectoryDataset& test, DType dtype = DType::f64);

}  // namespace aotpot
