#include "aotpot/trainer.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "aotpot/errors.hpp"
#include "binary_io.hpp"

namespace aotpot {

namespace fs = std::filesystem;
using namespace io;

void TrainConfig::validate() const {
  if (epochs == 0 || steps_per_epoch == 0) throw std::invalid_argument("train: epochs and steps must be >= 1");
  if (batch == 0) throw std::invalid_argument("train: batch must be >= 1");
  if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) {
    throw std::invalid_argument("train: warmup fraction must be in [0, 1)");
  }
  if (!(lr >= 0.0)) throw std::invalid_argument("train: lr must be >= 0");
  if (!(noise >= 0.0)) throw std::invalid_argument("train: noise must be >= 0");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("train: weight decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("train: betas must be in [0, 1)");
  }
  if (!(clip >= 0.0)) throw std::invalid_argument("train: clip must be >= 0");
}

Tensor inject_noise(const Tensor& window, double noise, Rng& rng) {
  if (noise < 0.0) throw std::invalid_argument("inject_noise: scale must be >= 0");
  Tensor out = window.detach();
  if (noise == 0.0 || out.numel() == 0) return out;
  double ss = 0.0;
  for (double v : out.values()) ss += v * v;
  const double std = noise * std::sqrt(ss / static_cast<double>(out.numel()));
  if (std == 0.0) return out;
  std::normal_distribution<double> normal(0.0, std);
  for (double& v : out.values()) v += normal(rng);
  return out;
}

Tensor denoising_loss(const Tensor& pred, const Tensor& target, std::size_t channels) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("denoising_loss: shapes " + shape_str(pred.shape()) + " and " +
                         shape_str(target.shape()) + " differ");
  }
  Tensor diff = sub(leading_channels(pred, channels), leading_channels(target, channels));
  return sum(square(diff));
}

Tensor denoising_loss(const std::vector<Tensor>& preds, const std::vector<Tensor>& targets) {
  if (preds.size() != targets.size() || preds.empty()) {
    throw DimensionError("denoising_loss: batch sizes differ or are empty");
  }
  Tensor total = denoising_loss(preds[0], targets[0]);
  for (std::size_t i = 1; i < preds.size(); ++i) total = add(total, denoising_loss(preds[i], targets[i]));
  return scale(total, 1.0 / static_cast<double>(preds.size()));
}

double one_cycle_lr(std::size_t step, std::size_t total, double warmup_fraction, double peak) {
  if (total == 0) return peak;
  step = std::min(step, total);
  const double warm = warmup_fraction * static_cast<double>(total);
  const double s = static_cast<double>(step);
  if (s <= warm) return warm > 0.0 ? peak * s / warm : peak;
  const double progress = (s - warm) / (static_cast<double>(total) - warm);
  return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

double global_grad_norm(const ParamList& params) {
  double ss = 0.0;
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad()) ss += g * g;
  }
  return std::sqrt(ss);
}

// ---------------------------------------------------------------------------

AdamW::AdamW(ParamList params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (const auto& p : params_) {
    m_.push_back(Tensor::zeros(p.tensor.shape()));
    v_.push_back(Tensor::zeros(p.tensor.shape()));
  }
}

void AdamW::step(double lr, double grad_scale) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& p = params_[i];
    if (!p.tensor.requires_grad() || !p.tensor.has_grad()) continue;
    auto g = p.tensor.grad();
    for (std::size_t k = 0; k < g.size(); ++k) {
      if (!std::isfinite(g[k])) {
        throw NumericError("non-finite gradient in parameter '" + p.name + "' at element " +
                               std::to_string(k),
                           t_ + 1);
      }
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const double decay = 1.0 - lr * cfg_.weight_decay;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor p = params_[i].tensor;
    if (!p.requires_grad() || !p.has_grad()) continue;
    auto g = p.grad();
    auto w = p.values();
    auto m = m_[i].values();
    auto v = v_[i].values();
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = g[k] * grad_scale;
      w[k] *= decay;
      m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * gk;
      v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * gk * gk;
      const double mhat = m[k] / bc1, vhat = v[k] / bc2;
      w[k] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kCkptMagic[4] = {'A', 'O', 'T', 'C'};
constexpr std::uint32_t kCkptVersion = 1;
constexpr std::uint8_t kDtypeF64 = 1;

void put_block(std::string& out, const std::string& name, const Tensor& t) {
  if (name.size() > 0xFFFF) throw std::invalid_argument("checkpoint: name too long");
  put_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
  out += name;
  put_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
  for (std::size_t d : t.shape()) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  put_le<std::uint8_t>(out, kDtypeF64);
  for (double v : t.values()) put_f64(out, v);
}

std::pair<std::string, Tensor> get_block(Reader& in, const std::string& source) {
  const auto len = in.get<std::uint16_t>();
  std::string name = in.str(len);
  const auto rank = in.get<std::uint8_t>();
  Shape shape(rank);
  for (auto& d : shape) d = in.get<std::uint32_t>();
  if (in.get<std::uint8_t>() != kDtypeF64) throw FormatError(source + ": unsupported dtype in " + name);
  const std::size_t n = shape_numel(shape);
  if (n > in.remaining() / 8) throw FormatError(source + ": truncated tensor " + name);
  std::vector<double> values(n);
  for (auto& v : values) v = in.f64();
  return {std::move(name), Tensor(std::move(shape), std::move(values))};
}

void copy_into(Tensor dst, const Tensor& src, const std::string& name) {
  if (dst.shape() != src.shape()) {
    throw std::runtime_error("checkpoint tensor '" + name + "' has shape " + shape_str(src.shape()) +
                             ", model expects " + shape_str(dst.shape()));
  }
  std::copy(src.values().begin(), src.values().end(), dst.values().begin());
}

const Tensor& find_tensor(const std::vector<std::pair<std::string, Tensor>>& list, const std::string& name) {
  for (const auto& [n, t] : list) {
    if (n == name) return t;
  }
  throw std::runtime_error("checkpoint is missing tensor '" + name + "'");
}

}  // namespace

void write_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
  std::string out(kCkptMagic, 4);
  put_le<std::uint32_t>(out, kCkptVersion);
  put_le<std::uint64_t>(out, ckpt.config_hash);
  put_le<std::uint64_t>(out, ckpt.step);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) put_block(out, name, t);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.optimizer.size()));
  for (const auto& [name, t] : ckpt.optimizer) put_block(out, name, t);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.rng_state.size()));
  out += ckpt.rng_state;
  put_le<std::uint32_t>(out, crc_of(out.data(), out.size()));
  // Write-then-rename so an interrupted save never clobbers the previous file.
  fs::path tmp = path;
  tmp += ".tmp";
  spit(tmp, out);
  fs::rename(tmp, path);
}

Checkpoint read_checkpoint(const fs::path& path) {
  const std::string bytes = slurp(path);
  const std::string source = path.string();
  if (bytes.size() < 4 || bytes.compare(0, 4, kCkptMagic, 4) != 0) throw FormatError(source + ": bad magic");
  if (bytes.size() < 8) throw FormatError(source + ": truncated file");
  {
    Reader tail(bytes, source);
    tail.str(bytes.size() - 4);
    const auto stored = tail.get<std::uint32_t>();
    if (stored != crc_of(bytes.data(), bytes.size() - 4)) throw FormatError(source + ": CRC mismatch");
  }
  Reader in(bytes, source);
  in.str(4);
  const auto version = in.get<std::uint32_t>();
  if (version != kCkptVersion) throw FormatError(source + ": unsupported version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.config_hash = in.get<std::uint64_t>();
  ckpt.step = in.get<std::uint64_t>();
  for (auto n = in.get<std::uint32_t>(); n > 0; --n) ckpt.tensors.push_back(get_block(in, source));
  for (auto n = in.get<std::uint32_t>(); n > 0; --n) ckpt.optimizer.push_back(get_block(in, source));
  ckpt.rng_state = in.str(in.get<std::uint32_t>());
  if (in.remaining() != 4) throw FormatError(source + ": trailing bytes");
  return ckpt;
}

void load_model(AotPot& model, const Checkpoint& ckpt) {
  if (ckpt.config_hash != model.config().hash()) {
    std::ostringstream os;
    os << "checkpoint config hash " << std::hex << ckpt.config_hash << " does not match the model ("
       << model.config().hash() << ": " << model.config().architecture_text() << ")";
    throw std::runtime_error(os.str());
  }
  for (const auto& p : model.parameters()) copy_into(p.tensor, find_tensor(ckpt.tensors, p.name), p.name);
}

void load_model(AotPot& model, const fs::path& path) { load_model(model, read_checkpoint(path)); }

void load_frozen_transform(AotPot& model, const fs::path& path) {
  if (!model.transform()) throw std::invalid_argument("model has no transform pair to load into");
  Checkpoint ckpt = read_checkpoint(path);
  ParamList pair;
  model.transform()->collect(pair, "transform");
  for (const auto& p : pair) copy_into(p.tensor, find_tensor(ckpt.tensors, p.name), p.name);
  model.transform()->set_mode(TransformMode::frozen);
}

// ---------------------------------------------------------------------------

Trainer::Trainer(AotPot& model, const TrajectoryDataset& train, TrainConfig cfg,
                 const TrajectoryDataset* validation, std::optional<SamplingPlan> plan)
    : model_(model),
      train_(train),
      validation_(validation),
      cfg_(cfg),
      plan_(plan ? std::move(*plan) : SamplingPlan(train)) {
  cfg_.validate();
  if (train.channels != model.config().channels) {
    throw DimensionError("train: dataset has " + std::to_string(train.channels) + " channels, model expects " +
                         std::to_string(model.config().channels));
  }
  if (cfg_.freeze_transform && model_.transform()) model_.transform()->set_mode(TransformMode::frozen);
  params_ = model_.parameters();
  if (cfg_.freeze_backbone) {
    for (auto& p : params_) {
      if (p.name.rfind("transform.", 0) != 0) p.tensor.set_requires_grad(false);
    }
  }
  optimizer_ = AdamW(params_, AdamWConfig{cfg_.weight_decay, cfg_.beta1, cfg_.beta2, cfg_.eps});
  SeedSplitter seeds(cfg_.seed);
  sample_rng_ = seeds.stream("sample");
  noise_rng_ = seeds.stream("noise");
}

double Trainer::train_step() {
  const std::size_t t_in = model_.config().t_in;
  const double lr = one_cycle_lr(step_ + 1, cfg_.total_steps(), cfg_.warmup_fraction, cfg_.lr);
  for (auto& p : params_) p.tensor.zero_grad();
  const auto batch = sample_batch(train_, plan_, cfg_.batch, t_in, sample_rng_);
  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (const auto& s : batch) {
    Tape tape;
    TapeScope scope(tape);
    Tensor window = inject_noise(s.window, cfg_.noise, noise_rng_);
    Tensor loss = denoising_loss(model_.forward(window), s.target, train_.trajectories[s.trajectory].channels);
    const double value = loss.item();
    if (!std::isfinite(value)) throw NumericError("non-finite training loss", step_ + 1);
    tape.backward(scale(loss, inv_batch));
    total += value;
  }
  double factor = 1.0;
  if (cfg_.clip > 0.0) {
    const double norm = global_grad_norm(params_);
    if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm", step_ + 1);
    if (norm > cfg_.clip) factor = cfg_.clip / norm;
  }
  optimizer_.step(lr, factor);
  ++step_;
  return total * inv_batch;
}

EvalReport Trainer::validate() const {
  if (!validation_ || validation_->size() == 0) return {};
  const AotPot& model = model_;
  return evaluate([&model](const Tensor& w) { return model.forward(w); }, *validation_,
                  model.config().t_in, cfg_.val_windows, cfg_.threads);
}

std::vector<std::pair<std::string, double>> validation_columns(const EvalReport& report) {
  std::vector<std::pair<std::string, double>> cols;
  for (const auto& s : report.by_label) cols.emplace_back(s.group + "_l2re", s.l2re);
  for (const auto& s : report.by_group) {
    if (s.group.find('@') != std::string::npos) cols.emplace_back(s.group + "_l2re", s.l2re);
  }
  return cols;
}

TrainResult Trainer::run(const fs::path& out_dir) {
  TrainResult result;
  std::ofstream csv;
  const fs::path ckpt_path = out_dir.empty() ? fs::path() : out_dir / "checkpoint.aotc";
  bool header_written = false;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    const fs::path csv_path = out_dir / "metrics.csv";
    header_written = step_ > 0 && fs::exists(csv_path);
    csv.open(csv_path, header_written ? std::ios::app : std::ios::trunc);
    if (!csv) throw std::runtime_error("cannot write " + csv_path.string());
    csv << std::setprecision(10);
  }

  const std::size_t total = cfg_.total_steps();
  double epoch_loss = 0.0;
  std::size_t epoch_steps = 0;
  while (step_ < total) {
    double loss = 0.0;
    try {
      loss = train_step();
    } catch (const NumericError& e) {
      result.blew_up = true;
      result.blowup_step = step_ + 1;
      result.error = e.what();
      return result;
    } catch (const std::domain_error& e) {
      // Non-finite values reaching the Sinkhorn projection.
      result.blew_up = true;
      result.blowup_step = step_ + 1;
      result.error = e.what();
      return result;
    }
    result.step_losses.push_back(loss);
    epoch_loss += loss;
    ++epoch_steps;
    if (step_ % cfg_.steps_per_epoch != 0 && step_ != total) continue;

    EpochMetrics m;
    m.epoch = (step_ + cfg_.steps_per_epoch - 1) / cfg_.steps_per_epoch;
    m.step = step_;
    m.lr = one_cycle_lr(step_, total, cfg_.warmup_fraction, cfg_.lr);
    m.train_loss = epoch_loss / static_cast<double>(epoch_steps);
    m.validation = validation_columns(validate());
    for (const auto& [name, value] : m.validation) {
      if (!std::isfinite(value)) {
        result.blew_up = true;
        result.blowup_step = step_;
        result.error = "non-finite validation " + name;
        return result;
      }
    }
    epoch_loss = 0.0;
    epoch_steps = 0;
    if (csv.is_open()) {
      if (!header_written) {
        csv << "epoch,step,lr,train_loss";
        for (const auto& c : m.validation) csv << ',' << c.first;
        csv << '\n';
        header_written = true;
      }
      csv << m.epoch << ',' << m.step << ',' << m.lr << ',' << m.train_loss;
      for (const auto& c : m.validation) csv << ',' << c.second;
      csv << '\n' << std::flush;
    }
    const bool periodic = cfg_.checkpoint_every > 0 && m.epoch % cfg_.checkpoint_every == 0;
    if (!ckpt_path.empty() && (periodic || step_ == total)) save(ckpt_path);
    result.epochs.push_back(std::move(m));
  }
  return result;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint ckpt;
  ckpt.config_hash = model_.config().hash();
  ckpt.step = step_;
  for (const auto& p : params_) ckpt.tensors.emplace_back(p.name, p.tensor.detach());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    ckpt.optimizer.emplace_back("m:" + params_[i].name, optimizer_.first_moments()[i].detach());
    ckpt.optimizer.emplace_back("v:" + params_[i].name, optimizer_.second_moments()[i].detach());
  }
  ckpt.rng_state = serialize_rng(sample_rng_) + "\n" + serialize_rng(noise_rng_);
  return ckpt;
}

void Trainer::save(const fs::path& path) const { write_checkpoint(path, checkpoint()); }

void Trainer::resume(const fs::path& path) {
  Checkpoint ckpt = read_checkpoint(path);
  load_model(model_, ckpt);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    copy_into(optimizer_.first_moments()[i], find_tensor(ckpt.optimizer, "m:" + params_[i].name),
              params_[i].name);
    copy_into(optimizer_.second_moments()[i], find_tensor(ckpt.optimizer, "v:" + params_[i].name),
              params_[i].name);
  }
  const auto split = ckpt.rng_state.find('\n');
  if (split == std::string::npos) throw FormatError(path.string() + ": malformed rng state");
  sample_rng_ = deserialize_rng(ckpt.rng_state.substr(0, split));
  noise_rng_ = deserialize_rng(ckpt.rng_state.substr(split + 1));
  step_ = ckpt.step;
  optimizer_.set_steps(step_);
}

}  // namespace aotpot
