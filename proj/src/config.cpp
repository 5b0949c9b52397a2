#include "aotpot/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

namespace aotpot {

namespace fs = std::filesystem;
namespace pt = boost::property_tree;

namespace {

std::invalid_argument bad_value(const std::string& key, const std::string& value, const std::string& why) {
  return std::invalid_argument("config: invalid value '" + value + "' for " + key + " (" + why + ")");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',' || c == ' ' || c == '\t') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto s = trim(v);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) throw bad_value(key, v, "expected a number");
  return out;
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto s = trim(v);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    throw bad_value(key, v, "expected a non-negative integer");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  const auto s = trim(v);
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw bad_value(key, v, "expected true or false");
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string join_numbers(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + num(v[i]);
  return out;
}

std::string dtype_name(DType d) { return d == DType::f32 ? "f32" : "f64"; }

struct Field {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define SIZE_FIELD(KEY, MEMBER)                                                                       \
  Field {                                                                                             \
    KEY, [](RunConfig& c, const std::string& v) { c.MEMBER = static_cast<std::size_t>(to_uint(KEY, v)); }, \
        [](const RunConfig& c) { return std::to_string(c.MEMBER); }                                   \
  }
#define DOUBLE_FIELD(KEY, MEMBER)                                                  \
  Field {                                                                          \
    KEY, [](RunConfig& c, const std::string& v) { c.MEMBER = to_double(KEY, v); }, \
        [](const RunConfig& c) { return num(c.MEMBER); }                           \
  }
#define BOOL_FIELD(KEY, MEMBER)                                                  \
  Field {                                                                        \
    KEY, [](RunConfig& c, const std::string& v) { c.MEMBER = to_bool(KEY, v); }, \
        [](const RunConfig& c) { return std::string(c.MEMBER ? "true" : "false"); } \
  }
#define PATH_FIELD(KEY, MEMBER)                                                     \
  Field {                                                                           \
    KEY, [](RunConfig& c, const std::string& v) { c.MEMBER = fs::path(trim(v)); }, \
        [](const RunConfig& c) { return c.MEMBER.string(); }                        \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      Field{"run.seed", [](RunConfig& c, const std::string& v) { c.seed = to_uint("run.seed", v); },
            [](const RunConfig& c) { return std::to_string(c.seed); }},
      PATH_FIELD("run.out", out),
      SIZE_FIELD("run.threads", threads),
      PATH_FIELD("run.data", data),
      PATH_FIELD("run.checkpoint", checkpoint),
      PATH_FIELD("run.transform_from", transform_from),

      SIZE_FIELD("model.height", model.height),
      SIZE_FIELD("model.width", model.width),
      SIZE_FIELD("model.channels", model.channels),
      SIZE_FIELD("model.t_in", model.t_in),
      SIZE_FIELD("model.patch", model.patch),
      SIZE_FIELD("model.embed_dim", model.embed_dim),
      SIZE_FIELD("model.heads", model.heads),
      SIZE_FIELD("model.modes", model.modes),
      SIZE_FIELD("model.blocks", model.blocks),
      SIZE_FIELD("model.streams", model.streams),
      SIZE_FIELD("model.sinkhorn_iters", model.sinkhorn_iters),
      DOUBLE_FIELD("model.gate_init", model.gate_init),
      SIZE_FIELD("model.groups", model.groups),
      SIZE_FIELD("model.mlp_hidden", model.mlp_hidden),
      SIZE_FIELD("model.temporal_hidden", model.temporal_hidden),
      Field{"model.mixer_activation",
            [](RunConfig& c, const std::string& v) {
              try {
                c.model.mixer_activation = parse_activation(trim(v));
              } catch (const std::invalid_argument& e) {
                throw bad_value("model.mixer_activation", v, "gelu, relu or identity");
              }
            },
            [](const RunConfig& c) { return to_string(c.model.mixer_activation); }},
      Field{"model.transform",
            [](RunConfig& c, const std::string& v) {
              try {
                c.model.transform = parse_transform_mode(trim(v));
              } catch (const std::invalid_argument& e) {
                throw bad_value("model.transform", v, "vanilla, learned or frozen");
              }
            },
            [](const RunConfig& c) { return to_string(c.model.transform); }},

      SIZE_FIELD("train.epochs", train.epochs),
      SIZE_FIELD("train.steps_per_epoch", train.steps_per_epoch),
      SIZE_FIELD("train.batch", train.batch),
      DOUBLE_FIELD("train.warmup_fraction", train.warmup_fraction),
      DOUBLE_FIELD("train.lr", train.lr),
      DOUBLE_FIELD("train.weight_decay", train.weight_decay),
      DOUBLE_FIELD("train.beta1", train.beta1),
      DOUBLE_FIELD("train.beta2", train.beta2),
      DOUBLE_FIELD("train.eps", train.eps),
      DOUBLE_FIELD("train.noise", train.noise),
      DOUBLE_FIELD("train.clip", train.clip),
      BOOL_FIELD("train.freeze_transform", train.freeze_transform),
      BOOL_FIELD("train.freeze_backbone", train.freeze_backbone),
      SIZE_FIELD("train.val_windows", train.val_windows),
      SIZE_FIELD("train.checkpoint_every", train.checkpoint_every),

      Field{"data.families",
            [](RunConfig& c, const std::string& v) {
              std::vector<PdeFamilySpec> next;
              for (const auto& name : split_list(v)) {
                Family f;
                try {
                  f = parse_family(name);
                } catch (const std::invalid_argument& e) {
                  throw std::invalid_argument(std::string("config: data.families: ") + e.what());
                }
                auto it = std::find_if(c.families.begin(), c.families.end(),
                                       [&](const PdeFamilySpec& s) { return s.family == f; });
                next.push_back(it != c.families.end() ? *it : PdeFamilySpec::defaults(f));
              }
              if (next.empty()) throw bad_value("data.families", v, "at least one family");
              c.families = std::move(next);
            },
            [](const RunConfig& c) {
              std::string out;
              for (std::size_t i = 0; i < c.families.size(); ++i) {
                out += (i ? ", " : "") + to_string(c.families[i].family);
              }
              return out;
            }},
      Field{"data.dtype",
            [](RunConfig& c, const std::string& v) {
              const auto s = trim(v);
              if (s == "f32") {
                c.dtype = DType::f32;
              } else if (s == "f64") {
                c.dtype = DType::f64;
              } else {
                throw bad_value("data.dtype", v, "f32 or f64");
              }
            },
            [](const RunConfig& c) { return dtype_name(c.dtype); }},

      SIZE_FIELD("eval.windows", eval.windows),
      SIZE_FIELD("eval.horizon", eval.horizon),
      SIZE_FIELD("eval.rollouts", eval.rollouts),
      SIZE_FIELD("eval.gain_probes", eval.gain_probes),
      Field{"eval.transfer_families",
            [](RunConfig& c, const std::string& v) {
              c.eval.transfer_families.clear();
              for (const auto& name : split_list(v)) c.eval.transfer_families.push_back(to_string(parse_family(name)));
            },
            [](const RunConfig& c) {
              std::string out;
              for (std::size_t i = 0; i < c.eval.transfer_families.size(); ++i) {
                out += (i ? ", " : "") + c.eval.transfer_families[i];
              }
              return out;
            }},
  };
  return table;
}

struct FamilyField {
  std::string name;
  std::function<void(PdeFamilySpec&, const std::string& key, const std::string&)> set;
  std::function<std::string(const PdeFamilySpec&)> get;
};

const std::vector<FamilyField>& family_fields() {
  auto size_field = [](std::string name, std::size_t PdeFamilySpec::*m) {
    return FamilyField{name, [m](PdeFamilySpec& s, const std::string& k, const std::string& v) {
                         s.*m = static_cast<std::size_t>(to_uint(k, v));
                       },
                       [m](const PdeFamilySpec& s) { return std::to_string(s.*m); }};
  };
  auto double_field = [](std::string name, double PdeFamilySpec::*m) {
    return FamilyField{name, [m](PdeFamilySpec& s, const std::string& k, const std::string& v) { s.*m = to_double(k, v); },
                       [m](const PdeFamilySpec& s) { return num(s.*m); }};
  };
  static const std::vector<FamilyField> table = {
      FamilyField{"viscosities",
                  [](PdeFamilySpec& s, const std::string& k, const std::string& v) {
                    s.viscosities.clear();
                    for (const auto& x : split_list(v)) s.viscosities.push_back(to_double(k, x));
                    if (s.viscosities.empty()) throw bad_value(k, v, "at least one value");
                  },
                  [](const PdeFamilySpec& s) { return join_numbers(s.viscosities); }},
      FamilyField{"diffusion",
                  [](PdeFamilySpec& s, const std::string& k, const std::string& v) {
                    auto parts = split_list(v);
                    if (parts.size() != 2) throw bad_value(k, v, "two values: D_u, D_v");
                    s.diffusion = {to_double(k, parts[0]), to_double(k, parts[1])};
                  },
                  [](const PdeFamilySpec& s) { return join_numbers({s.diffusion[0], s.diffusion[1]}); }},
      FamilyField{"reaction_k",
                  [](PdeFamilySpec& s, const std::string& k, const std::string& v) { s.reaction.k = to_double(k, v); },
                  [](const PdeFamilySpec& s) { return num(s.reaction.k); }},
      FamilyField{"reaction_scale",
                  [](PdeFamilySpec& s, const std::string& k, const std::string& v) {
                    s.reaction.scale = to_double(k, v);
                  },
                  [](const PdeFamilySpec& s) { return num(s.reaction.scale); }},
      double_field("dr_noise", &PdeFamilySpec::dr_noise),
      size_field("height", &PdeFamilySpec::height),
      size_field("width", &PdeFamilySpec::width),
      double_field("dt", &PdeFamilySpec::dt),
      size_field("frames", &PdeFamilySpec::frames),
      size_field("save_every", &PdeFamilySpec::save_every),
      FamilyField{"forcing",
                  [](PdeFamilySpec& s, const std::string& k, const std::string& v) { s.forcing = to_bool(k, v); },
                  [](const PdeFamilySpec& s) { return std::string(s.forcing ? "true" : "false"); }},
      size_field("train_count", &PdeFamilySpec::train_count),
      size_field("test_count", &PdeFamilySpec::test_count),
      double_field("weight", &PdeFamilySpec::weight),
  };
  return table;
}

}  // namespace

RunConfig::RunConfig() {
  model.channels = 0;
  for (Family f : {Family::heat, Family::diffusion_reaction, Family::ns_vorticity}) {
    families.push_back(PdeFamilySpec::defaults(f));
  }
}

PdeFamilySpec& RunConfig::family(const std::string& label) {
  const Family f = parse_family(label);
  for (auto& s : families) {
    if (s.family == f) return s;
  }
  throw std::invalid_argument("config: family '" + label + "' is not in data.families");
}

std::vector<std::string> RunConfig::family_labels() const {
  std::vector<std::string> out;
  for (const auto& s : families) out.push_back(to_string(s.family));
  return out;
}

std::uint64_t RunConfig::init_seed() const { return SeedSplitter(seed).derive("init"); }
std::uint64_t RunConfig::train_seed() const { return SeedSplitter(seed).derive("train"); }

void RunConfig::set(const std::string& raw_key, const std::string& value) {
  const std::string key = trim(raw_key);
  for (const auto& f : fields()) {
    if (f.key == key) {
      f.set(*this, value);
      return;
    }
  }
  if (key.rfind("data.", 0) == 0) {
    const auto dot = key.rfind('.');
    if (dot > 5) {
      const std::string fam = key.substr(5, dot - 5), name = key.substr(dot + 1);
      for (const auto& f : family_fields()) {
        if (f.name == name) {
          f.set(family(fam), key, value);
          return;
        }
      }
    }
  }
  throw std::invalid_argument("config: unknown key '" + key + "'");
}

void RunConfig::load_text(const std::string& text) {
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  std::vector<std::pair<std::string, std::string>> settings;
  for (const auto& [section, body] : tree) {
    if (body.empty()) {
      if (!body.data().empty()) throw std::invalid_argument("config: key '" + section + "' is outside a section");
      continue;
    }
    for (const auto& [key, value] : body) settings.emplace_back(section + "." + key, value.data());
  }
  // The family list decides which per-family sections are valid.
  for (const auto& [k, v] : settings) {
    if (k == "data.families") set(k, v);
  }
  for (const auto& [k, v] : settings) {
    if (k != "data.families") set(k, v);
  }
}

void RunConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  load_text(os.str());
}

std::string RunConfig::to_ini() const {
  std::ostringstream out;
  std::string section;
  for (const auto& f : fields()) {
    const std::string s = f.key.substr(0, f.key.find('.'));
    if (s != section) {
      if (!section.empty()) out << '\n';
      out << '[' << s << "]\n";
      section = s;
    }
    out << f.key.substr(s.size() + 1) << " = " << f.get(*this) << '\n';
  }
  for (const auto& spec : families) {
    out << "\n[data." << to_string(spec.family) << "]\n";
    for (const auto& f : family_fields()) out << f.name << " = " << f.get(spec) << '\n';
  }
  return out.str();
}

}  // namespace aotpot
