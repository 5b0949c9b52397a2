#include "aotpot/experiment.hpp"

#include <fstream>
#include <iomanip>
#include <limits>
#include <memory>
#include <stdexcept>

#include "aotpot/eval.hpp"

namespace aotpot {

namespace fs = std::filesystem;

namespace {

std::vector<Tensor> transform_snapshot(const AotPot& model) {
  std::vector<Tensor> out;
  if (!model.transform()) return out;
  const auto& t = *model.transform();
  for (const Tensor* p : {&t.w_in, &t.b_in, &t.w_out, &t.b_out}) out.push_back(p->detach());
  return out;
}

ModeRun train_and_score(AotPot& model, const TrainConfig& cfg, const TrajectoryDataset& train,
                        const TrajectoryDataset& test, std::size_t eval_windows) {
  ModeRun r;
  const auto before = transform_snapshot(model);
  Trainer trainer(model, train, cfg);
  TrainResult result = trainer.run();
  r.blew_up = result.blew_up;
  if (!result.epochs.empty()) r.final_train_loss = result.epochs.back().train_loss;
  if (result.blew_up) {
    r.final_train_loss = std::numeric_limits<double>::quiet_NaN();
    r.l2re = std::numeric_limits<double>::quiet_NaN();
  } else {
    const AotPot& m = model;
    auto report = evaluate([&m](const Tensor& w) { return m.forward(w); }, test, m.config().t_in,
                           eval_windows, cfg.threads);
    r.l2re = report.mean;
  }
  if (model.transform() && model.transform()->mode == TransformMode::frozen) {
    const auto after = transform_snapshot(model);
    for (std::size_t i = 0; i < before.size(); ++i) {
      if (max_abs_diff(before[i], after[i]) != 0.0) r.transform_unchanged = false;
    }
  }
  return r;
}

}  // namespace

const ModeRun& TransformExperiment::run(const std::string& family, const std::string& mode,
                                        const std::string& source) const {
  for (const auto& r : runs) {
    if (r.family == family && r.mode == mode && (source.empty() || r.source == source)) return r;
  }
  throw std::out_of_range("no " + mode + " run for " + family);
}

void freeze_transform_from(AotPot& dst, const AotPot& src) {
  if (!dst.transform() || !src.transform()) throw std::invalid_argument("both models need a transform pair");
  auto& d = *dst.transform();
  const auto& s = *src.transform();
  const Tensor* from[] = {&s.w_in, &s.b_in, &s.w_out, &s.b_out};
  Tensor* to[] = {&d.w_in, &d.b_in, &d.w_out, &d.b_out};
  for (int i = 0; i < 4; ++i) {
    if (from[i]->shape() != to[i]->shape()) throw DimensionError("transform pairs differ in shape");
    std::copy(from[i]->values().begin(), from[i]->values().end(), to[i]->values().begin());
  }
  d.set_mode(TransformMode::frozen);
}

TransformExperiment run_transform_experiment(ModelConfig base, const TrainConfig& train_cfg,
                                             const TrajectoryDataset& train, const TrajectoryDataset& test,
                                             const std::vector<std::string>& families,
                                             std::uint64_t init_seed, std::size_t eval_windows) {
  if (families.empty()) throw std::invalid_argument("transform experiment: no families");
  TransformExperiment exp;
  exp.families = families;
  base.channels = train.channels;

  std::vector<TrajectoryDataset> train_of, test_of;
  for (const auto& f : families) {
    train_of.push_back(select_family(train, f));
    test_of.push_back(select_family(test, f));
  }

  std::vector<std::unique_ptr<AotPot>> learned;
  for (std::size_t k = 0; k < families.size(); ++k) {
    ModelConfig vanilla_cfg = base;
    vanilla_cfg.transform = TransformMode::vanilla;
    AotPot vanilla(vanilla_cfg, init_seed);
    ModeRun v = train_and_score(vanilla, train_cfg, train_of[k], test_of[k], eval_windows);
    v.family = families[k];
    v.mode = "vanilla";
    exp.runs.push_back(v);

    ModelConfig learned_cfg = base;
    learned_cfg.transform = TransformMode::learned;
    learned.push_back(std::make_unique<AotPot>(learned_cfg, init_seed));
    ModeRun l = train_and_score(*learned.back(), train_cfg, train_of[k], test_of[k], eval_windows);
    l.family = families[k];
    l.mode = "learned";
    exp.runs.push_back(l);
  }

  exp.transfer.assign(families.size(), std::vector<double>(families.size(), 0.0));
  for (std::size_t k = 0; k < families.size(); ++k) {
    for (std::size_t j = 0; j < families.size(); ++j) {
      ModelConfig frozen_cfg = base;
      frozen_cfg.transform = TransformMode::frozen;
      // Fresh backbone: a different initialization stream from the source run.
      AotPot frozen(frozen_cfg, SeedSplitter(init_seed).derive("frozen/" + families[j]));
      freeze_transform_from(frozen, *learned[k]);
      ModeRun f = train_and_score(frozen, train_cfg, train_of[j], test_of[j], eval_windows);
      f.family = families[j];
      f.mode = "frozen";
      f.source = families[k];
      exp.transfer[k][j] = f.l2re;
      exp.runs.push_back(f);
    }
  }
  return exp;
}

void write_mode_table(const fs::path& path, const TransformExperiment& exp) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << std::setprecision(10) << "family,mode,transform_source,final_train_loss,l2re\n";
  for (const auto& r : exp.runs) {
    out << r.family << ',' << r.mode << ',' << (r.source.empty() ? "-" : r.source) << ','
        << r.final_train_loss << ',' << r.l2re << '\n';
  }
}

void write_transfer_matrix(const fs::path& path, const TransformExperiment& exp) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << std::setprecision(10) << "source";
  for (const auto& f : exp.families) out << ',' << f;
  out << '\n';
  for (std::size_t k = 0; k < exp.families.size(); ++k) {
    out << exp.families[k];
    for (double v : exp.transfer[k]) out << ',' << v;
    out << '\n';
  }
}

}  // namespace aotpot
