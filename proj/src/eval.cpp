#include "aotpot/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <mutex>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "aotpot/errors.hpp"
#include "aotpot/rng.hpp"

namespace aotpot {

double l2re(const Tensor& pred, const Tensor& truth) {
  if (pred.shape() != truth.shape()) {
    throw DimensionError("l2re: shapes " + shape_str(pred.shape()) + " and " +
                         shape_str(truth.shape()) + " differ");
  }
  double diff = 0.0, norm = 0.0;
  auto p = pred.values(), t = truth.values();
  for (std::size_t i = 0; i < p.size(); ++i) {
    diff += (p[i] - t[i]) * (p[i] - t[i]);
    norm += t[i] * t[i];
  }
  if (!(norm > 0.0)) throw UndefinedMetricError("l2re: reference has zero norm");
  return std::sqrt(diff) / std::sqrt(norm);
}

double l2re(const std::vector<Tensor>& preds, const std::vector<Tensor>& truths) {
  if (preds.size() != truths.size() || preds.empty()) {
    throw DimensionError("l2re: batch sizes differ or are empty");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) total += l2re(preds[i], truths[i]);
  return total / static_cast<double>(preds.size());
}

Tensor leading_channels(const Tensor& x, std::size_t channels) {
  const std::size_t c = x.shape().back();
  if (channels == 0 || channels == c) return x;
  if (channels > c) throw DimensionError("leading_channels: asked for more channels than present");
  std::vector<std::size_t> keep(channels);
  std::iota(keep.begin(), keep.end(), 0);
  return take(x, x.rank() - 1, keep);
}

std::uint64_t hash_tensor(const Tensor& t) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (double v : t.values()) {
    char bytes[sizeof(double)];
    std::memcpy(bytes, &v, sizeof v);
    h = fnv1a(std::string_view(bytes, sizeof bytes), h);
  }
  return h;
}

RolloutResult rollout(const Predictor& predict, const Tensor& initial_window, std::size_t horizon,
                      const Tensor* reference, std::size_t channels) {
  if (horizon == 0) throw std::invalid_argument("rollout: horizon must be >= 1");
  if (initial_window.rank() != 4) {
    throw DimensionError("rollout: window must be [T,H,W,C], got " + shape_str(initial_window.shape()));
  }
  const Shape frame_shape(initial_window.shape().begin() + 1, initial_window.shape().end());
  const std::size_t t_in = initial_window.dim(0), frame = shape_numel(frame_shape);
  if (reference && (reference->dim(0) < horizon ||
                    Shape(reference->shape().begin() + 1, reference->shape().end()) != frame_shape)) {
    throw DimensionError("rollout: reference " + shape_str(reference->shape()) +
                         " does not cover the horizon");
  }

  RolloutResult result;
  std::vector<double> window(initial_window.values().begin(), initial_window.values().end());
  std::vector<double> produced;
  std::size_t done = 0;
  for (std::size_t step = 0; step < horizon; ++step) {
    Tensor input(initial_window.shape(), window);
    result.window_hashes.push_back(hash_tensor(input));
    Tensor next;
    try {
      next = predict(input);
    } catch (const NumericError& e) {
      result.blowup_step = step + 1;
      result.error = e.what();
      break;
    }
    if (next.shape() != frame_shape) {
      throw DimensionError("rollout: predictor returned " + shape_str(next.shape()) + ", expected " +
                           shape_str(frame_shape));
    }
    if (!all_finite(next)) {
      result.blowup_step = step + 1;
      result.error = "rollout: non-finite prediction at step " + std::to_string(step + 1);
      break;
    }
    produced.insert(produced.end(), next.values().begin(), next.values().end());
    ++done;
    if (reference) {
      auto ref = reference->values().subspan(step * frame, frame);
      Tensor truth(frame_shape, std::vector<double>(ref.begin(), ref.end()));
      result.l2re.push_back(l2re(leading_channels(next, channels), leading_channels(truth, channels)));
    }
    window.erase(window.begin(), window.begin() + static_cast<long>(frame));
    window.insert(window.end(), next.values().begin(), next.values().end());
  }
  Shape out_shape = frame_shape;
  out_shape.insert(out_shape.begin(), done);
  result.trajectory = Tensor(out_shape, std::move(produced));
  (void)t_in;
  return result;
}

// ---------------------------------------------------------------------------

double EvalReport::label(const std::string& name) const {
  for (const auto& s : by_label) {
    if (s.group == name) return s.l2re;
  }
  throw std::out_of_range("no evaluation score for '" + name + "'");
}

double EvalReport::group(const std::string& name) const {
  for (const auto& s : by_group) {
    if (s.group == name) return s.l2re;
  }
  throw std::out_of_range("no evaluation score for '" + name + "'");
}

std::string group_name(const Trajectory& t) {
  if (t.param == 0.0) return t.label;
  std::ostringstream os;
  os << t.label << "@nu=" << t.param;
  return os.str();
}

std::vector<std::size_t> evaluation_starts(std::size_t frames, std::size_t t_in,
                                           std::size_t per_trajectory) {
  if (frames < t_in + 1) return {};
  const std::size_t last = frames - t_in - 1;
  std::vector<std::size_t> starts;
  const std::size_t k = std::max<std::size_t>(1, per_trajectory);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t s = k == 1 ? 0 : (i * last) / (k - 1);
    if (starts.empty() || starts.back() != s) starts.push_back(s);
  }
  return starts;
}

EvalReport evaluate(const Predictor& predict, const TrajectoryDataset& ds, std::size_t t_in,
                    std::size_t per_trajectory, std::size_t threads) {
  std::vector<double> per_traj(ds.size(), 0.0);
  std::vector<std::size_t> counts(ds.size(), 0);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < ds.size(); i = next++) {
      try {
        const auto& traj = ds.trajectories[i];
        for (std::size_t start : evaluation_starts(traj.frames(), t_in, per_trajectory)) {
          Sample s = make_sample(ds, i, start, t_in);
          Tensor pred = predict(s.window);
          per_traj[i] += l2re(leading_channels(pred, traj.channels),
                              leading_channels(s.target, traj.channels));
          ++counts[i];
        }
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(threads, ds.size()));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  // Aggregate in dataset order so the report is independent of threading.
  EvalReport report;
  auto accumulate = [](std::vector<EvalScore>& scores, const std::string& key, double sum,
                       std::size_t n) {
    auto it = std::find_if(scores.begin(), scores.end(), [&](const EvalScore& s) { return s.group == key; });
    if (it == scores.end()) {
      scores.push_back({key, 0.0, 0});
      it = scores.end() - 1;
    }
    it->l2re += sum;
    it->samples += n;
  };
  double total = 0.0;
  std::size_t n_total = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (counts[i] == 0) continue;
    accumulate(report.by_label, ds.trajectories[i].label, per_traj[i], counts[i]);
    accumulate(report.by_group, group_name(ds.trajectories[i]), per_traj[i], counts[i]);
    total += per_traj[i];
    n_total += counts[i];
  }
  for (auto* scores : {&report.by_label, &report.by_group}) {
    for (auto& s : *scores) s.l2re /= static_cast<double>(s.samples);
  }
  report.mean = n_total ? total / static_cast<double>(n_total) : 0.0;
  return report;
}

// ---------------------------------------------------------------------------

double max_row_sum(const Tensor& m) {
  const std::size_t rows = m.dim(0), cols = m.dim(1);
  double best = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += std::abs(m.at(i * cols + j));
    best = std::max(best, s);
  }
  return best;
}

double max_col_sum(const Tensor& m) {
  const std::size_t rows = m.dim(0), cols = m.dim(1);
  double best = 0.0;
  for (std::size_t j = 0; j < cols; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < rows; ++i) s += std::abs(m.at(i * cols + j));
    best = std::max(best, s);
  }
  return best;
}

GainReport gain_report(const std::vector<std::vector<Tensor>>& kernels) {
  GainReport report;
  if (kernels.empty()) throw std::invalid_argument("gain analysis: no probe inputs");
  const std::size_t layers = kernels.front().size();
  report.forward.assign(layers, 0.0);
  report.backward.assign(layers, 0.0);
  report.composite_forward.assign(layers, 0.0);
  report.composite_backward.assign(layers, 0.0);
  for (const auto& probe : kernels) {
    if (probe.size() != layers) throw DimensionError("gain analysis: probes disagree on sub-layer count");
    for (std::size_t l = 0; l < layers; ++l) {
      report.forward[l] += max_row_sum(probe[l]);
      report.backward[l] += max_col_sum(probe[l]);
    }
    // Suffix products, built from the last sub-layer down.
    Tensor product;
    for (std::size_t l = layers; l-- > 0;) {
      product = product.defined() ? matmul(product, probe[l]) : probe[l].detach();
      report.composite_forward[l] += max_row_sum(product);
      report.composite_backward[l] += max_col_sum(product);
    }
  }
  const double n = static_cast<double>(kernels.size());
  for (auto* v : {&report.forward, &report.backward, &report.composite_forward, &report.composite_backward}) {
    for (auto& x : *v) x /= n;
  }
  report.probes = kernels.size();
  return report;
}

GainReport gain_analysis(const AotPot& model, const std::vector<Tensor>& windows) {
  std::vector<std::vector<Tensor>> kernels;
  for (const auto& w : windows) {
    ForwardTrace trace;
    model.forward(w, &trace);
    std::vector<Tensor> ts;
    for (const auto& m : trace.maps) ts.push_back(m.t.matrix.detach());
    kernels.push_back(std::move(ts));
  }
  return gain_report(kernels);
}

void write_gain_csv(const std::filesystem::path& path, const GainReport& report) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << std::setprecision(17);
  out << "# gains averaged over " << report.probes << " probe inputs\n";
  out << "sublayer,forward_gain,backward_gain\n";
  for (std::size_t l = 0; l < report.forward.size(); ++l) {
    out << l << ',' << report.forward[l] << ',' << report.backward[l] << '\n';
  }
  out << "\n# composite[l] = T_{L-1} ... T_{l+1} T_l (latest sub-layer leftmost)\n";
  out << "start_index,composite_forward,composite_backward\n";
  for (std::size_t l = 0; l < report.composite_forward.size(); ++l) {
    out << l << ',' << report.composite_forward[l] << ',' << report.composite_backward[l] << '\n';
  }
}

// ---------------------------------------------------------------------------

std::vector<double> probe_features(const AotPot& model, const Tensor& window) {
  ForwardTrace trace;
  model.forward(window, &trace);
  std::vector<double> out;
  for (const auto& m : trace.maps) {
    auto v = m.t.matrix.values();
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

ProbeResult nearest_centroid_probe(const std::vector<std::vector<double>>& features,
                                   const std::vector<std::size_t>& labels, std::size_t classes) {
  if (features.size() != labels.size()) throw DimensionError("probe: features and labels differ in count");
  if (classes < 2) throw std::invalid_argument("probe: need at least 2 families");
  std::vector<std::vector<std::size_t>> members(classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= classes) throw std::invalid_argument("probe: label out of range");
    members[labels[i]].push_back(i);
  }
  const std::size_t dim = features.empty() ? 0 : features.front().size();
  for (const auto& f : features) {
    if (f.size() != dim) throw DimensionError("probe: ragged feature vectors");
  }
  for (std::size_t c = 0; c < classes; ++c) {
    if (members[c].size() < 2) {
      throw std::invalid_argument("probe: family " + std::to_string(c) + " has fewer than 2 samples");
    }
  }
  std::vector<std::vector<double>> centroid(classes, std::vector<double>(dim, 0.0));
  for (std::size_t c = 0; c < classes; ++c) {
    const std::size_t half = members[c].size() / 2;
    for (std::size_t k = 0; k < half; ++k) {
      for (std::size_t d = 0; d < dim; ++d) centroid[c][d] += features[members[c][k]][d];
    }
    for (auto& v : centroid[c]) v /= static_cast<double>(half);
  }
  ProbeResult result;
  result.confusion.assign(classes, std::vector<std::size_t>(classes, 0));
  std::size_t correct = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t k = members[c].size() / 2; k < members[c].size(); ++k) {
      const auto& f = features[members[c][k]];
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < classes; ++j) {
        double dist = 0.0;
        for (std::size_t d = 0; d < dim; ++d) dist += (f[d] - centroid[j][d]) * (f[d] - centroid[j][d]);
        if (dist < best_d) {
          best_d = dist;
          best = j;
        }
      }
      ++result.confusion[c][best];
      correct += best == c;
      ++result.queries;
    }
  }
  result.accuracy = static_cast<double>(correct) / static_cast<double>(result.queries);
  return result;
}

void write_feature_csv(const std::filesystem::path& path,
                       const std::vector<std::vector<double>>& features,
                       const std::vector<std::size_t>& labels, const std::vector<std::string>& names) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  const std::size_t dim = features.empty() ? 0 : features.front().size();
  out << "label";
  for (std::size_t d = 0; d < dim; ++d) out << ",f" << d;
  out << '\n' << std::setprecision(17);
  for (std::size_t i = 0; i < features.size(); ++i) {
    out << (labels[i] < names.size() ? names[labels[i]] : std::to_string(labels[i]));
    for (double v : features[i]) out << ',' << v;
    out << '\n';
  }
}

}  // namespace aotpot
