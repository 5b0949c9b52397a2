#include "aotpot/model.hpp"

#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "aotpot/errors.hpp"
#include "aotpot/fft.hpp"

namespace aotpot {

std::string to_string(TransformMode mode) {
  switch (mode) {
    case TransformMode::vanilla:
      return "vanilla";
    case TransformMode::learned:
      return "learned";
    case TransformMode::frozen:
      return "frozen";
  }
  return "vanilla";
}

TransformMode parse_transform_mode(const std::string& text) {
  if (text == "vanilla") return TransformMode::vanilla;
  if (text == "learned") return TransformMode::learned;
  if (text == "frozen") return TransformMode::frozen;
  throw std::invalid_argument("unknown transform mode '" + text +
                              "' (expected vanilla, learned or frozen)");
}

std::size_t ModelConfig::group_count() const {
  return groups != 0 ? groups : default_groups(embed_dim);
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("model config: " + msg); };
  if (patch == 0 || height % patch != 0 || width % patch != 0) fail("H and W must be divisible by P");
  if (!is_power_of_two(token_height()) || !is_power_of_two(token_width())) {
    fail("token grid (H/P, W/P) must be powers of two");
  }
  if (heads == 0 || embed_dim % heads != 0) fail("embed_dim must be divisible by heads");
  if (modes == 0 || modes > token_height() || modes > token_width()) {
    fail("modes must be in [1, token grid extent]");
  }
  if (channels == 0 || t_in == 0 || blocks == 0 || streams == 0) {
    fail("channels, t_in, blocks and streams must be positive");
  }
  if (sinkhorn_iters == 0) fail("sinkhorn_iters must be >= 1");
  if (embed_dim % group_count() != 0) fail("groups must divide embed_dim");
}

std::string ModelConfig::architecture_text() const {
  std::ostringstream os;
  os << "H=" << height << ";W=" << width << ";C=" << channels << ";T=" << t_in
     << ";P=" << patch << ";d=" << embed_dim << ";heads=" << heads << ";modes=" << modes
     << ";N=" << blocks << ";n=" << streams << ";groups=" << group_count()
     << ";mlp=" << mlp_hidden << ";tmlp=" << temporal_hidden
     << ";transform=" << (transform == TransformMode::vanilla ? 0 : 1);
  return os.str();
}

std::uint64_t ModelConfig::hash() const { return fnv1a(architecture_text()); }

// ---------------------------------------------------------------------------

LinearTransformPair::LinearTransformPair(std::size_t channels, TransformMode m)
    : w_in(parameter(Tensor::eye(channels))),
      b_in(parameter(Tensor::zeros({channels}))),
      w_out(parameter(Tensor::eye(channels))),
      b_out(parameter(Tensor::zeros({channels}))) {
  set_mode(m);
}

std::size_t LinearTransformPair::parameter_count() const {
  return w_in.numel() + b_in.numel() + w_out.numel() + b_out.numel();
}

void LinearTransformPair::set_mode(TransformMode m) {
  mode = m;
  const bool train = m != TransformMode::frozen;
  for (Tensor* t : {&w_in, &b_in, &w_out, &b_out}) t->set_requires_grad(train);
}

void LinearTransformPair::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".w_in", w_in});
  out.push_back({prefix + ".b_in", b_in});
  out.push_back({prefix + ".w_out", w_out});
  out.push_back({prefix + ".b_out", b_out});
}

Tensor apply_linear_transform(const Tensor& u, const LinearTransformPair& pair,
                              TransformSide side) {
  const Tensor& w = side == TransformSide::in ? pair.w_in : pair.w_out;
  const Tensor& b = side == TransformSide::in ? pair.b_in : pair.b_out;
  const std::size_t c = w.dim(0);
  if (u.shape().back() != c) {
    throw DimensionError("linear transform: last axis of " + shape_str(u.shape()) +
                         " is not " + std::to_string(c));
  }
  return reshape(add(matmul(reshape(u, {u.numel() / c, c}), w), b), u.shape());
}

Tensor temporal_aggregate(const Tensor& tokens, const std::function<Tensor(const Tensor&)>& frame_map,
                          const Tensor& gamma) {
  if (tokens.rank() != 4) {
    throw DimensionError("temporal aggregate: expected [T,d,H,W], got " + shape_str(tokens.shape()));
  }
  const std::size_t t = tokens.dim(0), d = tokens.dim(1), h = tokens.dim(2), w = tokens.dim(3);
  const std::size_t nodes = h * w;
  Tensor rows = reshape(permute(reshape(tokens, {t, d, nodes}), {0, 2, 1}), {t * nodes, d});
  Tensor mapped = reshape(frame_map(rows), {t, nodes, d});

  Tensor frame_index({t, 1});
  for (std::size_t i = 0; i < t; ++i) frame_index.values()[i] = static_cast<double>(i);
  // Re(e^{-i gamma t}) = cos(gamma t)
  Tensor phase = reshape(cos(matmul(frame_index, reshape(gamma, {1, d}))), {t, 1, d});
  Tensor summed = sum(mul(mapped, phase), 0);  // [nodes, d]
  return reshape(transpose(summed), {d, h, w});
}

// ---------------------------------------------------------------------------

AotPot::AotPot(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  options_.sinkhorn_iters = cfg_.sinkhorn_iters;
  Rng rng = SeedSplitter(seed).stream("init");
  const std::size_t c = cfg_.channels, d = cfg_.embed_dim, p = cfg_.patch;
  const std::size_t pixels = p * p * c;

  pos_weight = parameter(randn({c, 3}, rng, 0.02));
  patch = Linear(pixels, d, rng);
  temporal = PointwiseMlp(d, cfg_.temporal_hidden, rng);
  gamma = Tensor({d});
  for (std::size_t i = 0; i < d; ++i) {
    gamma.values()[i] = std::numbers::pi / static_cast<double>(cfg_.t_in) *
                        static_cast<double>(i) / static_cast<double>(d);
  }
  gamma = parameter(gamma);

  FourierMixerConfig mix{d, cfg_.heads, cfg_.modes, cfg_.mixer_activation};
  const std::size_t groups = cfg_.group_count();
  blocks_.reserve(cfg_.blocks);
  for (std::size_t b = 0; b < cfg_.blocks; ++b) {
    AotPotBlock block;
    block.mixer_wrap = AotSublayer(cfg_.streams, d, groups, cfg_.gate_init, rng);
    block.mixer = FourierMixer(mix, rng);
    block.mlp_wrap = AotSublayer(cfg_.streams, d, groups, cfg_.gate_init, rng);
    block.mlp = PointwiseMlp(d, cfg_.mlp_hidden, rng);
    blocks_.push_back(std::move(block));
  }
  readout_logits = parameter(Tensor::zeros({cfg_.streams}));
  head_proj = Linear(d, pixels, rng);
  if (cfg_.transform != TransformMode::vanilla) transform_.emplace(c, cfg_.transform);
}

Tensor AotPot::embed(const Tensor& window) const {
  const std::size_t t = cfg_.t_in, h = cfg_.height, w = cfg_.width, c = cfg_.channels;
  const std::size_t p = cfg_.patch, th = cfg_.token_height(), tw = cfg_.token_width();
  if (window.shape() != Shape{t, h, w, c}) {
    throw DimensionError("embed: expected window " + shape_str({t, h, w, c}) + ", got " +
                         shape_str(window.shape()));
  }
  Tensor coords({t * h * w, 3});
  {
    auto v = coords.values();
    const double sx = h > 1 ? 1.0 / static_cast<double>(h - 1) : 0.0;
    const double sy = w > 1 ? 1.0 / static_cast<double>(w - 1) : 0.0;
    std::size_t k = 0;
    for (std::size_t f = 0; f < t; ++f) {
      for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j, ++k) {
          v[3 * k] = static_cast<double>(i) * sx;
          v[3 * k + 1] = static_cast<double>(j) * sy;
          v[3 * k + 2] = static_cast<double>(f);
        }
      }
    }
  }
  Tensor positional = reshape(matmul(coords, transpose(pos_weight)), {t, h, w, c});
  Tensor u = add(window, positional);
  Tensor patches = reshape(permute(reshape(u, {t, th, p, tw, p, c}), {0, 1, 3, 2, 4, 5}),
                           {t * th * tw, p * p * c});
  Tensor tokens = reshape(patch.rows(patches), {t, th * tw, cfg_.embed_dim});
  return reshape(permute(tokens, {0, 2, 1}), {t, cfg_.embed_dim, th, tw});
}

Tensor AotPot::aggregate(const Tensor& tokens) const {
  return temporal_aggregate(tokens, [this](const Tensor& x) { return temporal.rows(x); }, gamma);
}

Tensor AotPot::head(const Tensor& field) const {
  const std::size_t d = cfg_.embed_dim, th = cfg_.token_height(), tw = cfg_.token_width();
  const std::size_t p = cfg_.patch, c = cfg_.channels;
  Tensor rows = transpose(reshape(field, {d, th * tw}));
  Tensor pixels = reshape(head_proj.rows(rows), {th, tw, p, p, c});
  return reshape(permute(pixels, {0, 2, 1, 3, 4}), {cfg_.height, cfg_.width, c});
}

Tensor AotPot::forward(const Tensor& window, ForwardTrace* trace) const {
  Tensor u = window;
  if (transform_) u = apply_linear_transform(u, *transform_, TransformSide::in);
  Tensor z = aggregate(embed(u));
  StreamState state = lift(z, cfg_.streams);
  if (trace != nullptr) trace->maps.clear();

  auto mixer_fn = [](const FourierMixer& m) { return [&m](const Tensor& x) { return m(x); }; };
  auto mlp_fn = [](const PointwiseMlp& m) {
    return [&m](const Tensor& x) { return m.channels(x); };
  };
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const auto& block = blocks_[b];
    AotMaps maps;
    state = block.mixer_wrap.forward(state, mixer_fn(block.mixer), options_,
                                     trace ? &maps : nullptr);
    if (trace) trace->maps.push_back(std::move(maps));
    state = block.mlp_wrap.forward(state, mlp_fn(block.mlp), options_, trace ? &maps : nullptr);
    if (trace) trace->maps.push_back(std::move(maps));
    if (!all_finite(state.streams)) {
      throw NumericError("forward: non-finite activations after block " + std::to_string(b), b);
    }
  }
  Tensor out = head(readout(state, readout_logits));
  if (transform_) out = apply_linear_transform(out, *transform_, TransformSide::out);
  return out;
}

ParamList AotPot::parameters() const {
  ParamList out;
  out.push_back({"pos.weight", pos_weight});
  patch.collect(out, "patch");
  temporal.collect(out, "temporal");
  out.push_back({"temporal.gamma", gamma});
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const std::string prefix = "blocks." + std::to_string(b);
    blocks_[b].mixer_wrap.collect(out, prefix + ".mix");
    blocks_[b].mixer.collect(out, prefix + ".mix.fourier");
    blocks_[b].mlp_wrap.collect(out, prefix + ".mlp");
    blocks_[b].mlp.collect(out, prefix + ".mlp.ffn");
  }
  out.push_back({"readout.logits", readout_logits});
  head_proj.collect(out, "head");
  if (transform_) transform_->collect(out, "transform");
  return out;
}

ParamAccounting AotPot::accounting() const {
  ParamAccounting acc;
  for (const auto& p : parameters()) {
    const std::size_t n = p.tensor.numel();
    acc.total += n;
    if (p.name.find(".aot.") != std::string::npos || p.name == "readout.logits") acc.aot += n;
    if (p.name.rfind("transform.", 0) == 0) acc.transform += n;
  }
  return acc;
}

}  // namespace aotpot
