#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "aotpot/config.hpp"
#include "aotpot/dataset.hpp"
#include "aotpot/errors.hpp"
#include "aotpot/eval.hpp"
#include "aotpot/experiment.hpp"
#include "aotpot/model.hpp"
#include "aotpot/trainer.hpp"

using namespace aotpot;
namespace fs = std::filesystem;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitBlowUp = 3;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Carries a nonzero exit code out of a command after its reports are written.
struct BlowUp : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Flags {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> threads;
  std::optional<std::string> data;
  std::optional<std::string> checkpoint;
  std::optional<std::string> transform_from;
  std::optional<std::string> mode;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> steps;
  std::optional<std::size_t> batch;
  std::optional<std::size_t> horizon;
  std::optional<std::string> families;
  std::vector<std::string> settings;
  bool resume = false;
};

fs::path data_root(const RunConfig& cfg) { return cfg.data.empty() ? cfg.out / "data" : cfg.data; }

fs::path checkpoint_path(const RunConfig& cfg) {
  return cfg.checkpoint.empty() ? cfg.out / "checkpoint.aotc" : cfg.checkpoint;
}

/// Pins cfg.data so the config echo records where the corpus came from.
std::pair<TrajectoryDataset, TrajectoryDataset> load_data(RunConfig& cfg) {
  const fs::path root = data_root(cfg);
  cfg.data = root;
  if (!fs::exists(root / "train.manifest") || !fs::exists(root / "test.manifest")) {
    throw std::runtime_error("no dataset at " + root.string() + " (run gen-data or pass --data DIR)");
  }
  return {load_manifest(root / "train.manifest"), load_manifest(root / "test.manifest")};
}

void resolve_channels(RunConfig& cfg, std::size_t channels) {
  if (cfg.model.channels == 0) {
    cfg.model.channels = channels;
  } else if (cfg.model.channels != channels) {
    throw std::runtime_error("model.channels = " + std::to_string(cfg.model.channels) + " but the dataset has " +
                             std::to_string(channels));
  }
}

/// Commands reading a checkpoint echo to <command>_config.ini so the
/// training run's config.ini next to its checkpoint stays intact.
void echo_config(const RunConfig& cfg, const std::string& name = "config.ini") {
  fs::create_directories(cfg.out);
  std::ofstream(cfg.out / name) << cfg.to_ini();
}

void write_summary(const RunConfig& cfg, const std::string& name, const std::string& text) {
  fs::create_directories(cfg.out);
  std::ofstream(cfg.out / name) << text;
  std::cout << text;
}

std::unique_ptr<AotPot> load_trained(RunConfig& cfg, std::size_t channels) {
  resolve_channels(cfg, channels);
  auto model = std::make_unique<AotPot>(cfg.model, cfg.init_seed());
  const fs::path ckpt = checkpoint_path(cfg);
  if (!fs::exists(ckpt)) throw std::runtime_error("checkpoint not found: " + ckpt.string());
  load_model(*model, ckpt);
  return model;
}

Predictor predictor(const AotPot& model) {
  return [&model](const Tensor& w) { return model.forward(w); };
}

std::string format_report(const EvalReport& report) {
  std::ostringstream os;
  os << std::setprecision(6);
  for (const auto& s : report.by_group) os << "  " << s.group << ": L2RE " << s.l2re << " (" << s.samples << " windows)\n";
  os << "  mean: " << report.mean << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------

int cmd_gen_data(RunConfig& cfg) {
  for (auto& spec : cfg.families) spec.validate();
  const fs::path root = data_root(cfg);
  std::pair<TrajectoryDataset, TrajectoryDataset> split;
  try {
    split = build_dataset(cfg.families, cfg.seed, cfg.threads);
  } catch (const NumericError& e) {
    throw NumericError(std::string(e.what()) + " (data seed " + std::to_string(cfg.seed) + ")", e.index());
  }
  auto written = write_dataset(root, split.first, split.second, cfg.dtype);
  {
    std::ofstream crc(root / "crc32.csv");
    crc << "path,crc32\n";
    for (const auto& [path, value] : written.crcs) {
      char hex[16];
      std::snprintf(hex, sizeof hex, "%08x", value);
      crc << path << ',' << hex << '\n';
    }
  }
  std::ostringstream os;
  os << "dataset written to " << root.string() << '\n';
  for (const auto& label : split.first.labels()) {
    os << "  " << label << ": " << split.first.indices_of(label).size() << " train, "
       << split.second.indices_of(label).size() << " test\n";
  }
  os << "  channels (padded): " << split.first.channels << '\n';
  write_summary(cfg, "gen_data_summary.txt", os.str());
  return 0;
}

int cmd_train(RunConfig& cfg, bool resume) {
  if (cfg.model.transform == TransformMode::frozen && cfg.transform_from.empty()) {
    throw UsageError("--mode frozen needs --transform-from CHECKPOINT");
  }
  auto [train, test] = load_data(cfg);
  resolve_channels(cfg, train.channels);
  echo_config(cfg);
  AotPot model(cfg.model, cfg.init_seed());
  if (cfg.model.transform == TransformMode::frozen) load_frozen_transform(model, cfg.transform_from);
  TrainConfig tc = cfg.train;
  tc.seed = cfg.train_seed();
  tc.threads = cfg.threads;
  Trainer trainer(model, train, tc, &test);
  const fs::path ckpt = cfg.out / "checkpoint.aotc";
  if (resume && fs::exists(ckpt)) {
    trainer.resume(ckpt);
    std::cout << "resumed from " << ckpt.string() << " at step " << trainer.step() << '\n';
  }
  std::cout << "training " << model.accounting().total << " parameters for " << tc.total_steps() << " steps\n";
  TrainResult result = trainer.run(cfg.out);
  std::ostringstream os;
  os << std::setprecision(6);
  if (result.blew_up) {
    os << "numeric blow-up at step " << result.blowup_step << ": " << result.error << '\n'
       << "last good checkpoint kept at " << ckpt.string() << '\n';
    write_summary(cfg, "train_summary.txt", os.str());
    throw BlowUp(result.error);
  }
  os << "final validation:\n" << format_report(trainer.validate());
  if (!result.epochs.empty()) os << "final epoch train loss: " << result.epochs.back().train_loss << '\n';
  os << "checkpoint: " << ckpt.string() << '\n';
  write_summary(cfg, "train_summary.txt", os.str());
  return 0;
}

int cmd_eval(RunConfig& cfg) {
  auto [train, test] = load_data(cfg);
  auto model = load_trained(cfg, test.channels);
  echo_config(cfg, "eval_config.ini");
  EvalReport report = evaluate(predictor(*model), test, cfg.model.t_in, cfg.eval.windows, cfg.threads);
  std::ofstream csv(cfg.out / "eval.csv");
  csv << std::setprecision(10) << "group,l2re,windows\n";
  for (const auto& s : report.by_group) csv << s.group << ',' << s.l2re << ',' << s.samples << '\n';
  for (const auto& s : report.by_label) {
    if (std::none_of(report.by_group.begin(), report.by_group.end(),
                     [&](const EvalScore& g) { return g.group == s.group; })) {
      csv << s.group << ',' << s.l2re << ',' << s.samples << '\n';
    }
  }
  write_summary(cfg, "eval_summary.txt", "one-step test L2RE:\n" + format_report(report));
  return 0;
}

int cmd_rollout(RunConfig& cfg) {
  auto [train, test] = load_data(cfg);
  auto model = load_trained(cfg, test.channels);
  echo_config(cfg, "rollout_config.ini");
  const std::size_t t_in = cfg.model.t_in;
  std::ofstream csv(cfg.out / "rollout.csv");
  csv << std::setprecision(10) << "trajectory,label,step,l2re\n";
  std::ostringstream os;
  os << std::setprecision(6);
  bool blew_up = false;
  const std::size_t count = std::min(cfg.eval.rollouts, test.size());
  for (std::size_t i = 0; i < count; ++i) {
    const auto& traj = test.trajectories[i];
    if (traj.frames() <= t_in) continue;
    const std::size_t horizon = std::min(cfg.eval.horizon, traj.frames() - t_in);
    const std::size_t plane = traj.data.numel() / traj.frames();
    Shape window_shape = traj.data.shape();
    window_shape[0] = t_in;
    auto v = traj.data.values();
    Tensor window(window_shape, std::vector<double>(v.begin(), v.begin() + static_cast<long>(t_in * plane)));
    Shape ref_shape = traj.data.shape();
    ref_shape[0] = horizon;
    Tensor reference(ref_shape, std::vector<double>(v.begin() + static_cast<long>(t_in * plane),
                                                    v.begin() + static_cast<long>((t_in + horizon) * plane)));
    RolloutResult r = rollout(predictor(*model), window, horizon, &reference, traj.channels);
    for (std::size_t s = 0; s < r.l2re.size(); ++s) csv << i << ',' << traj.label << ',' << s + 1 << ',' << r.l2re[s] << '\n';
    if (r.trajectory.dim(0) > 0) {
      char name[64];
      std::snprintf(name, sizeof name, "%04zu_", i);
      write_aotd(cfg.out / "rollout" / (name + traj.label + ".aotd"), leading_channels(r.trajectory, traj.channels),
                 traj.label, DType::f64);
    }
    os << "  trajectory " << i << " (" << group_name(traj) << "): ";
    if (r.blowup_step) {
      blew_up = true;
      os << "blow-up at step " << *r.blowup_step << '\n';
    } else {
      os << "L2RE step 1 " << r.l2re.front() << ", step " << r.l2re.size() << ' ' << r.l2re.back() << '\n';
    }
  }
  write_summary(cfg, "rollout_summary.txt", "autoregressive rollouts:\n" + os.str());
  if (blew_up) throw BlowUp("rollout diverged");
  return 0;
}

std::vector<Tensor> probe_windows(const TrajectoryDataset& ds, std::size_t t_in, std::size_t per_trajectory,
                                  std::vector<std::size_t>* owners = nullptr) {
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t start : evaluation_starts(ds.trajectories[i].frames(), t_in, per_trajectory)) {
      out.push_back(make_sample(ds, i, start, t_in).window);
      if (owners) owners->push_back(i);
    }
  }
  return out;
}

int cmd_gain(RunConfig& cfg) {
  auto [train, test] = load_data(cfg);
  auto model = load_trained(cfg, test.channels);
  echo_config(cfg, "gain_config.ini");
  auto windows = probe_windows(test, cfg.model.t_in, 1);
  if (windows.empty()) throw std::runtime_error("no probe windows in the test set");
  if (windows.size() > cfg.eval.gain_probes) windows.resize(std::max<std::size_t>(1, cfg.eval.gain_probes));
  GainReport g = gain_analysis(*model, windows);
  write_gain_csv(cfg.out / "gains.csv", g);
  double worst_col = 0.0, worst_row = 0.0;
  for (std::size_t l = 0; l < g.forward.size(); ++l) {
    worst_col = std::max(worst_col, std::abs(g.backward[l] - 1.0));
    worst_row = std::max(worst_row, std::abs(g.forward[l] - 1.0));
  }
  std::ostringstream os;
  os << std::setprecision(6) << "gain analysis over " << g.probes << " probe windows, " << g.forward.size()
     << " sub-layers\n"
     << "  max |backward gain - 1| (column sums, exact constraint): " << worst_col << '\n'
     << "  max |forward gain - 1| (row sums): " << worst_row << '\n'
     << "  composite from sub-layer 0: forward " << g.composite_forward.front() << ", backward "
     << g.composite_backward.front() << '\n';
  write_summary(cfg, "gain_summary.txt", os.str());
  return 0;
}

int cmd_probe(RunConfig& cfg) {
  auto [train, test] = load_data(cfg);
  auto model = load_trained(cfg, test.channels);
  echo_config(cfg, "probe_config.ini");
  const auto labels = test.labels();
  std::vector<std::size_t> owners;
  auto windows = probe_windows(test, cfg.model.t_in, cfg.eval.windows, &owners);
  std::vector<std::vector<double>> features;
  std::vector<std::size_t> classes;
  for (std::size_t k = 0; k < windows.size(); ++k) {
    features.push_back(probe_features(*model, windows[k]));
    const auto& label = test.trajectories[owners[k]].label;
    classes.push_back(static_cast<std::size_t>(std::find(labels.begin(), labels.end(), label) - labels.begin()));
  }
  write_feature_csv(cfg.out / "probe_features.csv", features, classes, labels);
  ProbeResult r = nearest_centroid_probe(features, classes, labels.size());
  std::ofstream conf(cfg.out / "probe_confusion.csv");
  conf << "true\\predicted";
  for (const auto& l : labels) conf << ',' << l;
  conf << '\n';
  for (std::size_t i = 0; i < labels.size(); ++i) {
    conf << labels[i];
    for (auto c : r.confusion[i]) conf << ',' << c;
    conf << '\n';
  }
  std::ostringstream os;
  os << std::setprecision(6) << "nearest-centroid probe: accuracy " << r.accuracy << " over " << r.queries
     << " held-out windows (" << labels.size() << " families)\n";
  write_summary(cfg, "probe_summary.txt", os.str());
  return 0;
}

int cmd_transform_exp(RunConfig& cfg) {
  auto [train, test] = load_data(cfg);
  resolve_channels(cfg, train.channels);
  echo_config(cfg);
  TrainConfig tc = cfg.train;
  tc.seed = cfg.train_seed();
  tc.threads = cfg.threads;
  auto exp = run_transform_experiment(cfg.model, tc, train, test, cfg.eval.transfer_families, cfg.init_seed(),
                                      cfg.eval.windows);
  write_mode_table(cfg.out / "transform_modes.csv", exp);
  write_transfer_matrix(cfg.out / "transfer_matrix.csv", exp);
  std::ostringstream os;
  os << std::setprecision(6) << "pointwise transform experiment:\n";
  bool blew_up = false;
  for (const auto& r : exp.runs) {
    os << "  " << r.family << " " << r.mode << (r.source.empty() ? "" : " (transform from " + r.source + ")")
       << ": final train loss " << r.final_train_loss << ", test L2RE " << r.l2re
       << (r.mode == "frozen" && !r.transform_unchanged ? " [transform changed]" : "") << '\n';
    blew_up = blew_up || r.blew_up;
  }
  write_summary(cfg, "transform_exp_summary.txt", os.str());
  if (blew_up) throw BlowUp("a transform-experiment run diverged");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive operator transformation PDE surrogates: data, training and diagnostics"};
  app.require_subcommand(1, 1);
  app.fallthrough();
  Flags f;
  app.add_option("--config", f.config, "INI config file (defaults < file < flags)");
  app.add_option("--seed", f.seed, "Master seed");
  app.add_option("--out", f.out, "Output directory");
  app.add_option("--threads", f.threads, "Worker threads for data generation and evaluation");
  app.add_option("--data", f.data, "Dataset directory written by gen-data");
  app.add_option("--checkpoint", f.checkpoint, "Checkpoint to evaluate");
  app.add_option("--transform-from", f.transform_from, "Checkpoint providing the frozen transform");
  app.add_option("--mode", f.mode, "Transform mode: vanilla, learned or frozen");
  app.add_option("--epochs", f.epochs, "Training epochs");
  app.add_option("--steps", f.steps, "Optimizer steps per epoch");
  app.add_option("--batch", f.batch, "Batch size");
  app.add_option("--horizon", f.horizon, "Rollout horizon");
  app.add_option("--families", f.families, "Comma-separated PDE families");
  app.add_option("--set", f.settings, "Override any config key: section.key=value")->take_all();

  auto* gen = app.add_subcommand("gen-data", "Generate the PDE corpus (AOTD files and manifests)");
  auto* train = app.add_subcommand("train", "Train a model on a generated corpus");
  train->add_flag("--resume", f.resume, "Continue from <out>/checkpoint.aotc if present");
  auto* eval = app.add_subcommand("eval", "One-step test L2RE per family");
  auto* roll = app.add_subcommand("rollout", "Autoregressive rollouts against the solver reference");
  auto* gain = app.add_subcommand("gain", "Propagation gains of the transformation kernels");
  auto* probe = app.add_subcommand("probe", "Nearest-centroid probe on the transformation kernels");
  auto* texp = app.add_subcommand("transform-exp", "Vanilla / learned / frozen pointwise-transform runs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  RunConfig cfg;
  try {
    const bool reads_checkpoint = !gen->parsed() && !train->parsed() && !texp->parsed();
    if (f.config) {
      cfg.load(*f.config);
    } else if (reads_checkpoint && f.checkpoint) {
      // A training run leaves its resolved config next to the checkpoint.
      const fs::path sibling = fs::path(*f.checkpoint).parent_path() / "config.ini";
      if (fs::exists(sibling)) {
        cfg.load(sibling);
        std::cout << "using config " << sibling.string() << '\n';
      }
    }
    for (const auto& s : f.settings) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw UsageError("--set expects section.key=value, got '" + s + "'");
      cfg.set(s.substr(0, eq), s.substr(eq + 1));
    }
    if (f.seed) cfg.seed = *f.seed;
    if (f.out) cfg.out = *f.out;
    if (f.threads) cfg.threads = std::max<std::size_t>(1, *f.threads);
    if (f.data) cfg.data = *f.data;
    if (f.checkpoint) cfg.checkpoint = *f.checkpoint;
    if (f.transform_from) cfg.transform_from = *f.transform_from;
    if (f.mode) cfg.set("model.transform", *f.mode);
    if (f.epochs) cfg.train.epochs = *f.epochs;
    if (f.steps) cfg.train.steps_per_epoch = *f.steps;
    if (f.batch) cfg.train.batch = *f.batch;
    if (f.horizon) cfg.eval.horizon = *f.horizon;
    if (f.families) cfg.set("data.families", *f.families);
    cfg.train.validate();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(cfg);
    if (train->parsed()) return cmd_train(cfg, f.resume);
    if (eval->parsed()) return cmd_eval(cfg);
    if (roll->parsed()) return cmd_rollout(cfg);
    if (gain->parsed()) return cmd_gain(cfg);
    if (probe->parsed()) return cmd_probe(cfg);
    if (texp->parsed()) return cmd_transform_exp(cfg);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const BlowUp& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitBlowUp;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kExitBlowUp;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
