#pragma once

// Reference networks and whole-model gradient sweeps shared by the unit and
// acceptance suites.

#include <map>
#include <string>

#include "gradcheck.hpp"

#include "aotpot/model.hpp"

namespace aotpot::testing {

/// Plain single-stream residual network built from the model's own
/// sub-layer weights: z <- z + post(F(pre(z))) for every sub-layer.
inline Tensor single_stream_reference(const AotPot& model, const Tensor& window) {
  Tensor u = window;
  if (model.transform()) u = apply_linear_transform(u, *model.transform(), TransformSide::in);
  Tensor z = model.aggregate(model.embed(u));
  for (const auto& block : model.blocks()) {
    z = add(z, block.mixer_wrap.normalized([&](const Tensor& x) { return block.mixer(x); }, z));
    z = add(z, block.mlp_wrap.normalized([&](const Tensor& x) { return block.mlp.channels(x); }, z));
  }
  Tensor out = model.head(z);
  if (model.transform()) out = apply_linear_transform(out, *model.transform(), TransformSide::out);
  return out;
}

/// Gates to zero: the configuration under which the multi-stream block is
/// meant to coincide with a standard residual connection.
inline void zero_gates(AotPot& model) {
  for (auto& p : model.parameters()) {
    if (p.name.find(".gate_") != std::string::npos) {
      std::fill(p.tensor.values().begin(), p.tensor.values().end(), 0.0);
    }
  }
}

/// Coarse parameter class used to report gradient checks.
inline std::string parameter_class(const std::string& name) {
  auto has = [&](const char* s) { return name.find(s) != std::string::npos; };
  if (has("transform.")) return "transform";
  if (has("pos.")) return "positional";
  if (has("patch.")) return "patch_embed";
  if (has("temporal.gamma")) return "temporal_gamma";
  if (has("temporal.")) return "temporal_mlp";
  if (has(".fourier.w")) return "mixer_weights";
  if (has(".fourier.b")) return "mixer_biases";
  if (has(".phi_")) return "aot_projections";
  if (has(".gate_")) return "aot_gates";
  if (has(".aot.bias_")) return "aot_biases";
  if (has(".rms.")) return "aot_rmsnorm";
  if (has("_norm.")) return "sandwich_norm";
  if (has(".ffn.")) return "channel_mlp";
  if (has("readout.")) return "readout_logits";
  if (has("head.")) return "output_head";
  return "other";
}

struct ClassReport {
  double worst = 0.0;
  std::string where;
  std::size_t checked = 0;
};

/// Central-difference sweep over `per_tensor` coordinates of every trainable
/// tensor, grouped by parameter class. The loss is a mean so it stays O(1);
/// the stencil's round-off is then ~1e-11, and the 1e-6 denominator floor
/// keeps structurally zero gradients (e.g. a per-channel bias feeding a
/// per-channel GroupNorm) from being scored against that noise.
inline std::map<std::string, ClassReport> model_gradcheck(const AotPot& model, const Tensor& window,
                                                          const Tensor& target,
                                                          std::size_t per_tensor, double h = 1e-4) {
  auto loss = [&] {
    Tensor diff = sub(model.forward(window), target);
    return scale(sum(mul(diff, diff)), 1.0 / static_cast<double>(diff.numel()));
  };
  std::map<std::string, ClassReport> report;
  for (const auto& p : model.parameters()) {
    if (!p.tensor.requires_grad()) continue;
    auto r = check_gradient(loss, p.tensor, spread_coords(p.tensor.numel(), per_tensor), p.name,
                            h, 4, 1e-6);
    auto& slot = report[parameter_class(p.name)];
    slot.checked += r.checked;
    if (r.max_rel_error >= slot.worst) {
      slot.worst = r.max_rel_error;
      slot.where = r.worst.empty() ? p.name : r.worst;
    }
  }
  return report;
}

/// Small two-block configuration for gradient and equivalence checks.
inline ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.height = 8;
  cfg.width = 8;
  cfg.channels = 2;
  cfg.t_in = 3;
  cfg.patch = 2;
  cfg.embed_dim = 8;
  cfg.heads = 2;
  cfg.modes = 2;
  cfg.blocks = 2;
  cfg.streams = 3;
  cfg.mlp_hidden = 8;
  cfg.temporal_hidden = 8;
  return cfg;
}

}  // namespace aotpot::testing
