#include "aotpot/dataset.hpp"

#include <zlib.h>

#include <algorithm>
#include <atomic>
#include <bit>
#include <cstring>
#include <exception>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "aotpot/errors.hpp"
#include "binary_io.hpp"

namespace aotpot {

namespace fs = std::filesystem;

std::vector<std::string> TrajectoryDataset::labels() const {
  std::vector<std::string> out;
  for (const auto& t : trajectories) {
    if (std::find(out.begin(), out.end(), t.label) == out.end()) out.push_back(t.label);
  }
  return out;
}

std::vector<std::size_t> TrajectoryDataset::indices_of(const std::string& label) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    if (trajectories[i].label == label) out.push_back(i);
  }
  return out;
}

Tensor pad_channels(const Tensor& data, std::size_t channels, double value) {
  if (data.rank() != 4) throw DimensionError("pad_channels: expected [T,H,W,C], got " + shape_str(data.shape()));
  const std::size_t c = data.dim(3);
  if (c == channels) return data;
  if (c > channels) throw DimensionError("pad_channels: cannot pad " + std::to_string(c) +
                                         " channels down to " + std::to_string(channels));
  const std::size_t nodes = data.numel() / c;
  Tensor out({data.dim(0), data.dim(1), data.dim(2), channels}, value);
  auto src = data.values();
  auto dst = out.values();
  for (std::size_t n = 0; n < nodes; ++n) {
    std::copy_n(src.begin() + static_cast<long>(n * c), c, dst.begin() + static_cast<long>(n * channels));
  }
  return out;
}

TrajectoryDataset assemble(std::vector<Trajectory> trajectories, std::size_t min_channels) {
  TrajectoryDataset ds;
  ds.channels = min_channels;
  for (const auto& t : trajectories) ds.channels = std::max(ds.channels, t.data.dim(3));
  for (auto& t : trajectories) {
    if (!ds.trajectories.empty() &&
        (t.data.dim(1) != ds.height() || t.data.dim(2) != ds.width())) {
      throw DimensionError("dataset: mixed grids " + shape_str(t.data.shape()) + " vs " +
                           shape_str(ds.trajectories.front().data.shape()));
    }
    t.data = pad_channels(t.data, ds.channels);
    ds.trajectories.push_back(std::move(t));
  }
  if (!ds.empty()) ds.mask = Tensor::ones({ds.height(), ds.width()});
  return ds;
}

TrajectoryDataset select_family(const TrajectoryDataset& ds, const std::string& label) {
  std::vector<Trajectory> picked;
  for (const auto& t : ds.trajectories) {
    if (t.label == label) picked.push_back(t);
  }
  if (picked.empty()) throw std::invalid_argument("dataset has no trajectories of family '" + label + "'");
  return assemble(std::move(picked), ds.channels);
}

std::pair<TrajectoryDataset, TrajectoryDataset> build_dataset(const std::vector<PdeFamilySpec>& specs,
                                                              std::uint64_t seed,
                                                              std::size_t threads) {
  if (specs.empty()) throw std::invalid_argument("build_dataset: no family specs");
  struct Job {
    std::size_t spec;
    std::size_t index;
  };
  std::vector<Job> jobs;
  std::vector<std::size_t> offset;
  std::size_t c_max = 0;
  for (std::size_t s = 0; s < specs.size(); ++s) {
    specs[s].validate();
    offset.push_back(jobs.size());
    for (std::size_t i = 0; i < specs[s].train_count + specs[s].test_count; ++i) jobs.push_back({s, i});
    c_max = std::max(c_max, family_channels(specs[s].family));
  }

  std::vector<Trajectory> generated(jobs.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t j = next++; j < jobs.size(); j = next++) {
      try {
        generated[j] = generate_trajectory(specs[jobs[j].spec], jobs[j].index, seed);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(threads, jobs.size()));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  std::vector<Trajectory> train, test;
  for (std::size_t s = 0; s < specs.size(); ++s) {
    const std::size_t count = specs[s].train_count + specs[s].test_count;
    std::vector<std::size_t> order(count);
    std::iota(order.begin(), order.end(), 0);
    Rng rng = SeedSplitter(seed).stream("split/" + to_string(specs[s].family) + "/" + std::to_string(s));
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i = 0; i < count; ++i) {
      auto& traj = generated[offset[s] + order[i]];
      (i < specs[s].train_count ? train : test).push_back(std::move(traj));
    }
  }
  return {assemble(std::move(train), c_max), assemble(std::move(test), c_max)};
}

// ---------------------------------------------------------------------------

SamplingPlan::SamplingPlan(const TrajectoryDataset& ds) {
  labels_ = ds.labels();
  for (const auto& label : labels_) {
    members_.push_back(ds.indices_of(label));
    weights_.push_back(ds.trajectories[members_.back().front()].weight);
  }
}

SamplingPlan::SamplingPlan(const TrajectoryDataset& ds,
                           const std::vector<std::pair<std::string, double>>& weights)
    : SamplingPlan(ds) {
  for (const auto& [label, w] : weights) {
    auto it = std::find(labels_.begin(), labels_.end(), label);
    if (it == labels_.end()) throw std::invalid_argument("sampling plan: no dataset labelled '" + label + "'");
    if (!(w >= 0.0)) throw std::invalid_argument("sampling plan: negative weight for '" + label + "'");
    weights_[static_cast<std::size_t>(it - labels_.begin())] = w;
  }
}

double SamplingPlan::dataset_probability(std::size_t k) const {
  const double total = std::accumulate(weights_.begin(), weights_.end(), 0.0);
  return total > 0.0 ? weights_[k] / total : 0.0;
}

double SamplingPlan::datapoint_probability(std::size_t k) const {
  return dataset_probability(k) / static_cast<double>(members_[k].size());
}

std::size_t SamplingPlan::pick(double u) const {
  const double total = std::accumulate(weights_.begin(), weights_.end(), 0.0);
  if (!(total > 0.0)) throw std::invalid_argument("sampling plan: all weights are zero");
  double acc = 0.0;
  for (std::size_t k = 0; k < weights_.size(); ++k) {
    acc += weights_[k];
    if (u * total < acc) return k;
  }
  // u close to 1 with round-off: last dataset with positive weight
  for (std::size_t k = weights_.size(); k-- > 0;) {
    if (weights_[k] > 0.0) return k;
  }
  return 0;
}

Sample make_sample(const TrajectoryDataset& ds, std::size_t trajectory, std::size_t start,
                   std::size_t t_in) {
  const Tensor& data = ds.trajectories.at(trajectory).data;
  const std::size_t frames = data.dim(0);
  if (frames < t_in + 1) {
    throw std::invalid_argument("trajectory " + std::to_string(trajectory) + " has " +
                                std::to_string(frames) + " frames; need at least " +
                                std::to_string(t_in + 1));
  }
  if (start + t_in >= frames) throw std::out_of_range("sample window runs past the trajectory end");
  const std::size_t frame = data.numel() / frames;
  Sample s;
  s.trajectory = trajectory;
  s.start = start;
  auto src = data.values();
  s.window = Tensor({t_in, data.dim(1), data.dim(2), data.dim(3)},
                    std::vector<double>(src.begin() + static_cast<long>(start * frame),
                                        src.begin() + static_cast<long>((start + t_in) * frame)));
  s.target = Tensor({data.dim(1), data.dim(2), data.dim(3)},
                    std::vector<double>(src.begin() + static_cast<long>((start + t_in) * frame),
                                        src.begin() + static_cast<long>((start + t_in + 1) * frame)));
  return s;
}

std::vector<Sample> sample_batch(const TrajectoryDataset& ds, const SamplingPlan& plan,
                                 std::size_t batch, std::size_t t_in, Rng& rng) {
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.trajectories[i].frames() < t_in + 1) {
      throw std::invalid_argument("trajectory " + std::to_string(i) + " is too short for a window of " +
                                  std::to_string(t_in) + " frames plus a target");
    }
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Sample> out;
  out.reserve(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t k = plan.pick(unit(rng));
    const auto& members = plan.members(k);
    const std::size_t traj =
        members[std::uniform_int_distribution<std::size_t>(0, members.size() - 1)(rng)];
    const std::size_t last = ds.trajectories[traj].frames() - t_in - 1;
    const std::size_t start = std::uniform_int_distribution<std::size_t>(0, last)(rng);
    Sample s = make_sample(ds, traj, start, t_in);
    s.dataset = k;
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Binary helpers: explicit little-endian encoding.

namespace {

constexpr char kAotdMagic[4] = {'A', 'O', 'T', 'D'};

using namespace io;

}  // namespace

std::uint32_t write_aotd(const fs::path& path, const Tensor& data, const std::string& label,
                         DType dtype) {
  if (data.rank() != 4) throw DimensionError("write_aotd: expected [T,H,W,C], got " + shape_str(data.shape()));
  if (label.size() > 0xFFFF) throw std::invalid_argument("write_aotd: label too long");
  std::string bytes(kAotdMagic, 4);
  put_le<std::uint32_t>(bytes, 1);
  put_le<std::uint16_t>(bytes, static_cast<std::uint16_t>(label.size()));
  bytes += label;
  put_le<std::uint32_t>(bytes, static_cast<std::uint32_t>(data.dim(1)));
  put_le<std::uint32_t>(bytes, static_cast<std::uint32_t>(data.dim(2)));
  put_le<std::uint32_t>(bytes, static_cast<std::uint32_t>(data.dim(0)));
  put_le<std::uint32_t>(bytes, static_cast<std::uint32_t>(data.dim(3)));
  bytes.push_back(static_cast<char>(dtype));
  const std::size_t payload_start = bytes.size();
  for (double v : data.values()) {
    if (dtype == DType::f32) {
      put_f32(bytes, static_cast<float>(v));
    } else {
      put_f64(bytes, v);
    }
  }
  const std::uint32_t crc = crc_of(bytes.data() + payload_start, bytes.size() - payload_start);
  put_le<std::uint32_t>(bytes, crc);
  spit(path, bytes);
  return crc;
}

Tensor read_aotd(const fs::path& path, AotdHeader* header) {
  const std::string bytes = slurp(path);
  Reader r(bytes, path.string());
  if (r.str(4) != std::string(kAotdMagic, 4)) throw FormatError(path.string() + ": bad magic");
  AotdHeader h;
  h.version = r.get<std::uint32_t>();
  if (h.version != 1) throw FormatError(path.string() + ": unsupported version " + std::to_string(h.version));
  h.label = r.str(r.get<std::uint16_t>());
  h.height = r.get<std::uint32_t>();
  h.width = r.get<std::uint32_t>();
  h.frames = r.get<std::uint32_t>();
  h.channels = r.get<std::uint32_t>();
  const auto code = r.get<std::uint8_t>();
  if (code > 1) throw FormatError(path.string() + ": unknown dtype code " + std::to_string(code));
  h.dtype = static_cast<DType>(code);
  const std::size_t count = std::size_t{h.frames} * h.height * h.width * h.channels;
  const std::size_t width = h.dtype == DType::f32 ? 4 : 8;
  if (r.remaining() != count * width + 4) {
    throw FormatError(path.string() + ": payload size does not match header");
  }
  const std::uint32_t crc = crc_of(r.data() + r.pos(), count * width);
  Tensor out({h.frames, h.height, h.width, h.channels});
  auto v = out.values();
  for (std::size_t i = 0; i < count; ++i) v[i] = h.dtype == DType::f32 ? r.f32() : r.f64();
  h.crc = r.get<std::uint32_t>();
  if (h.crc != crc) throw FormatError(path.string() + ": CRC32 mismatch");
  if (header) *header = h;
  return out;
}

void write_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries) {
  std::ostringstream os;
  os << "# path label weight param\n";
  os << std::setprecision(17);
  for (const auto& e : entries) os << e.path << ' ' << e.label << ' ' << e.weight << ' ' << e.param << '\n';
  spit(path, os.str());
}

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
  std::istringstream in(slurp(path));
  std::vector<ManifestEntry> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    ManifestEntry e;
    if (!(ls >> e.path)) continue;
    if (!(ls >> e.label >> e.weight)) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected 'path label weight'");
    }
    if (!(ls >> e.param)) e.param = 0.0;
    out.push_back(std::move(e));
  }
  return out;
}

TrajectoryDataset load_manifest(const fs::path& path) {
  const auto entries = read_manifest(path);
  const fs::path base = path.parent_path();
  std::vector<Trajectory> trajs;
  for (const auto& e : entries) {
    AotdHeader h;
    Trajectory t;
    t.data = read_aotd(base / e.path, &h);
    t.label = e.label;
    t.weight = e.weight;
    t.param = e.param;
    t.channels = h.channels;
    try {
      t.channels = std::min<std::size_t>(h.channels, family_channels(parse_family(e.label)));
    } catch (const std::invalid_argument&) {
      // Not a built-in family: keep every stored channel.
    }
    if (t.channels < h.channels) {
      std::vector<std::size_t> keep(t.channels);
      std::iota(keep.begin(), keep.end(), 0);
      t.data = take(t.data, 3, keep);
    }
    trajs.push_back(std::move(t));
  }
  return assemble(std::move(trajs));
}

WrittenDataset write_dataset(const fs::path& root, const TrajectoryDataset& train,
                             const TrajectoryDataset& test, DType dtype) {
  WrittenDataset out;
  auto emit = [&](const TrajectoryDataset& ds, const std::string& split) {
    std::vector<ManifestEntry> entries;
    std::map<std::string, std::size_t> counter;
    for (const auto& t : ds.trajectories) {
      std::ostringstream name;
      name << t.label << '/' << split << '_' << std::setw(4) << std::setfill('0') << counter[t.label]++
           << ".aotd";
      std::vector<std::size_t> keep(t.channels);
      std::iota(keep.begin(), keep.end(), 0);
      Tensor own = take(t.data, 3, keep);
      const std::uint32_t crc = write_aotd(root / name.str(), own, t.label, dtype);
      out.crcs.emplace_back(name.str(), crc);
      entries.push_back({name.str(), t.label, t.weight, t.param});
    }
    const fs::path manifest = root / (split + ".manifest");
    write_manifest(manifest, entries);
    return manifest;
  };
  out.train_manifest = emit(train, "train");
  out.test_manifest = emit(test, "test");
  return out;
}

}  // namespace aotpot
