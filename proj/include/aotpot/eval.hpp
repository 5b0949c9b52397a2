#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "aotpot/dataset.hpp"
#include "aotpot/model.hpp"
#include "aotpot/tensor.hpp"

namespace aotpot {

/// Raised when a metric is undefined for its input (e.g. zero-norm truth).
class UndefinedMetricError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// ||pred - truth|| / ||truth|| for one sample.
double l2re(const Tensor& pred, const Tensor& truth);
/// Per-sample ratios averaged over the batch.
double l2re(const std::vector<Tensor>& preds, const std::vector<Tensor>& truths);

/// Keeps the first `channels` entries of the last axis.
Tensor leading_channels(const Tensor& x, std::size_t channels);

// ---------------------------------------------------------------------------

using Predictor = std::function<Tensor(const Tensor& window)>;

struct RolloutResult {
  Tensor trajectory;  // [steps_done, H, W, C]
  std::vector<double> l2re;  // per step, when a reference was given
  std::vector<std::uint64_t> window_hashes;  // FNV-1a of each input window
  std::optional<std::size_t> blowup_step;  // first non-finite step (1-based)
  std::string error;
};

/// Feeds each prediction back into a sliding window of the last T_in
/// frames. reference: [>= horizon, H, W, C] frames following the window;
/// the L2RE is taken over the first `channels` channels (0 = all).
RolloutResult rollout(const Predictor& predict, const Tensor& initial_window, std::size_t horizon,
                      const Tensor* reference = nullptr, std::size_t channels = 0);

std::uint64_t hash_tensor(const Tensor& t);

// ---------------------------------------------------------------------------

/// Validation windows: `per_trajectory` evenly spaced starts in every
/// trajectory.
struct EvalScore {
  std::string group;  // label, or label@nu=<param> for parameterized families
  double l2re = 0.0;
  std::size_t samples = 0;
};

struct EvalReport {
  std::vector<EvalScore> by_label;
  std::vector<EvalScore> by_group;
  double mean = 0.0;

  /// Throws std::out_of_range when absent.
  double label(const std::string& name) const;
  double group(const std::string& name) const;
};

std::string group_name(const Trajectory& t);

std::vector<std::size_t> evaluation_starts(std::size_t frames, std::size_t t_in,
                                           std::size_t per_trajectory);

/// One-step L2RE of `predict` on the evaluation windows of `ds`, over each
/// trajectory's own channels. `threads` > 1 evaluates trajectories in
/// parallel (the predictor must then be safe for concurrent calls).
EvalReport evaluate(const Predictor& predict, const TrajectoryDataset& ds, std::size_t t_in,
                    std::size_t per_trajectory = 4, std::size_t threads = 1);

// ---------------------------------------------------------------------------

/// Amax gain magnitudes. Forward gain: max absolute row sum. Backward gain:
/// max absolute column sum. Composite entry l uses the product
/// T_{L-1} ... T_{l+1} T_l (the latest sub-layer leftmost).
struct GainReport {
  std::vector<double> forward;
  std::vector<double> backward;
  std::vector<double> composite_forward;
  std::vector<double> composite_backward;
  std::size_t probes = 0;
};

double max_row_sum(const Tensor& m);
double max_col_sum(const Tensor& m);

/// kernels[p][l] is the transformation kernel of sub-layer l for probe p.
GainReport gain_report(const std::vector<std::vector<Tensor>>& kernels);
GainReport gain_analysis(const AotPot& model, const std::vector<Tensor>& windows);
void write_gain_csv(const std::filesystem::path& path, const GainReport& report);

// ---------------------------------------------------------------------------

struct ProbeResult {
  double accuracy = 0.0;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  std::size_t queries = 0;
};

/// Flattened T of every sub-layer for one input window.
std::vector<double> probe_features(const AotPot& model, const Tensor& window);

/// Nearest-centroid classification. For every class the first half of its
/// samples (in the given order) forms the template, the rest are queries.
/// Ties go to the lowest class index. Throws when a class has < 2 samples.
ProbeResult nearest_centroid_probe(const std::vector<std::vector<double>>& features,
                                   const std::vector<std::size_t>& labels, std::size_t classes);

void write_feature_csv(const std::filesystem::path& path,
                       const std::vector<std::vector<double>>& features,
                       const std::vector<std::size_t>& labels,
                       const std::vector<std::string>& names);

}  // namespace aotpot
