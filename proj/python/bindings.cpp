#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <complex>

#include "aotpot/config.hpp"
#include "aotpot/dataset.hpp"
#include "aotpot/errors.hpp"
#include "aotpot/eval.hpp"
#include "aotpot/model.hpp"
#include "aotpot/pde.hpp"
#include "aotpot/sinkhorn.hpp"
#include "aotpot/trainer.hpp"

namespace py = pybind11;
using namespace aotpot;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

py::dict gain_dict(const GainReport& g) {
  py::dict d;
  d["forward"] = g.forward;
  d["backward"] = g.backward;
  d["composite_forward"] = g.composite_forward;
  d["composite_backward"] = g.composite_backward;
  d["probes"] = g.probes;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Adaptive operator transformation PDE surrogates (C++ core)";

  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<UndefinedMetricError>(m, "UndefinedMetricError", PyExc_ValueError);

  // Projection and metrics.
  m.def(
      "sinkhorn",
      [](const Array& raw, std::size_t iterations) {
        auto ds = sinkhorn_project(to_tensor(raw), iterations);
        return py::make_tuple(to_array(ds.matrix), ds.residual);
      },
      py::arg("raw"), py::arg("iterations") = kSinkhornIterations,
      "Doubly stochastic projection of exp(raw); returns (matrix, residual).");
  m.def(
      "fft2",
      [](const Array& x) {
        Tensor re = to_tensor(x);
        ComplexTensor c = fft2(re, Tensor::zeros(re.shape()), false);
        py::array_t<std::complex<double>> out(std::vector<py::ssize_t>(c.re.shape().begin(), c.re.shape().end()));
        auto* p = out.mutable_data();
        for (std::size_t i = 0; i < c.re.numel(); ++i) p[i] = {c.re.at(i), c.im.at(i)};
        return out;
      },
      py::arg("x"), "2-D DFT over the last two axes (sizes must be powers of two).");
  m.def(
      "l2re", [](const Array& pred, const Array& truth) { return l2re(to_tensor(pred), to_tensor(truth)); },
      py::arg("pred"), py::arg("truth"));
  m.def("one_cycle_lr", &one_cycle_lr, py::arg("step"), py::arg("total"), py::arg("warmup_fraction"),
        py::arg("peak"));

  // Solvers and data.
  m.def(
      "solve_heat",
      [](const Array& ic, double nu, double dt, std::size_t steps) {
        return to_array(solve_heat(to_tensor(ic), nu, dt, steps));
      },
      py::arg("ic"), py::arg("nu"), py::arg("dt"), py::arg("steps"));
  m.def(
      "solve_dr",
      [](const Array& ic, double du, double dv, double k, double scale, double dt, std::size_t steps) {
        return to_array(solve_dr(to_tensor(ic), {du, dv}, FhnReaction{k, scale}, dt, steps));
      },
      py::arg("ic"), py::arg("du"), py::arg("dv"), py::arg("k") = 5e-3, py::arg("scale") = 1.0, py::arg("dt"),
      py::arg("steps"));
  m.def(
      "solve_ns_vorticity",
      [](const Array& ic, double nu, double dt, std::size_t steps, std::size_t save_every, bool forcing) {
        Tensor w0 = to_tensor(ic);
        Tensor f = forcing ? ns_forcing(w0.dim(0), w0.dim(1)) : Tensor();
        return to_array(solve_ns_vorticity(w0, nu, f, dt, steps, save_every));
      },
      py::arg("ic"), py::arg("nu"), py::arg("dt"), py::arg("steps"), py::arg("save_every") = 1,
      py::arg("forcing") = true);
  m.def(
      "gaussian_random_field",
      [](std::size_t h, std::size_t w, std::uint64_t seed) {
        Rng rng(seed);
        return to_array(gaussian_random_field(h, w, rng));
      },
      py::arg("height"), py::arg("width"), py::arg("seed"));
  m.def(
      "write_aotd",
      [](const std::filesystem::path& path, const Array& data, const std::string& label, bool single) {
        return write_aotd(path, to_tensor(data), label, single ? DType::f32 : DType::f64);
      },
      py::arg("path"), py::arg("data"), py::arg("label"), py::arg("single") = false,
      "Writes a [T, H, W, C] trajectory; returns the payload CRC32.");
  m.def(
      "read_aotd",
      [](const std::filesystem::path& path) {
        AotdHeader h;
        Tensor t = read_aotd(path, &h);
        return py::make_tuple(to_array(t), h.label);
      },
      py::arg("path"));

  py::class_<PdeFamilySpec>(m, "FamilySpec")
      .def(py::init([](const std::string& family) { return PdeFamilySpec::defaults(parse_family(family)); }),
           py::arg("family"))
      .def_property_readonly("family", [](const PdeFamilySpec& s) { return to_string(s.family); })
      .def_readwrite("viscosities", &PdeFamilySpec::viscosities)
      .def_readwrite("height", &PdeFamilySpec::height)
      .def_readwrite("width", &PdeFamilySpec::width)
      .def_readwrite("dt", &PdeFamilySpec::dt)
      .def_readwrite("frames", &PdeFamilySpec::frames)
      .def_readwrite("save_every", &PdeFamilySpec::save_every)
      .def_readwrite("train_count", &PdeFamilySpec::train_count)
      .def_readwrite("test_count", &PdeFamilySpec::test_count)
      .def_readwrite("weight", &PdeFamilySpec::weight);
  m.def(
      "generate_trajectory",
      [](const PdeFamilySpec& spec, std::size_t index, std::uint64_t seed) {
        Trajectory t = generate_trajectory(spec, index, seed);
        return py::make_tuple(to_array(t.data), t.label, t.param);
      },
      py::arg("spec"), py::arg("index"), py::arg("seed"));

  // Model.
  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("height", &ModelConfig::height)
      .def_readwrite("width", &ModelConfig::width)
      .def_readwrite("channels", &ModelConfig::channels)
      .def_readwrite("t_in", &ModelConfig::t_in)
      .def_readwrite("patch", &ModelConfig::patch)
      .def_readwrite("embed_dim", &ModelConfig::embed_dim)
      .def_readwrite("heads", &ModelConfig::heads)
      .def_readwrite("modes", &ModelConfig::modes)
      .def_readwrite("blocks", &ModelConfig::blocks)
      .def_readwrite("streams", &ModelConfig::streams)
      .def_readwrite("mlp_hidden", &ModelConfig::mlp_hidden)
      .def_readwrite("temporal_hidden", &ModelConfig::temporal_hidden)
      .def_property(
          "transform", [](const ModelConfig& c) { return to_string(c.transform); },
          [](ModelConfig& c, const std::string& v) { c.transform = parse_transform_mode(v); })
      .def("hash", &ModelConfig::hash)
      .def("__repr__", [](const ModelConfig& c) { return "ModelConfig(" + c.architecture_text() + ")"; });

  py::class_<AotPot>(m, "Model")
      .def(py::init<ModelConfig, std::uint64_t>(), py::arg("config"), py::arg("seed") = 0)
      .def_property_readonly("config", &AotPot::config)
      .def(
          "forward", [](const AotPot& model, const Array& window) { return to_array(model.forward(to_tensor(window))); },
          py::arg("window"), "Next frame [H, W, C] from a window [T_in, H, W, C].")
      .def(
          "kernels",
          [](const AotPot& model, const Array& window) {
            ForwardTrace trace;
            model.forward(to_tensor(window), &trace);
            std::vector<Array> out;
            for (const auto& mp : trace.maps) out.push_back(to_array(mp.t.matrix));
            return out;
          },
          py::arg("window"), "Transformation kernel T of every sub-layer.")
      .def(
          "gains",
          [](const AotPot& model, const std::vector<Array>& windows) {
            std::vector<Tensor> ts;
            for (const auto& w : windows) ts.push_back(to_tensor(w));
            return gain_dict(gain_analysis(model, ts));
          },
          py::arg("windows"))
      .def(
          "probe_features",
          [](const AotPot& model, const Array& window) { return probe_features(model, to_tensor(window)); },
          py::arg("window"))
      .def("set_identity_kernel", &AotPot::set_identity_kernel, py::arg("on"))
      .def(
          "parameter_count", [](const AotPot& model) { return model.accounting().total; })
      .def(
          "aot_fraction", [](const AotPot& model) { return model.accounting().aot_fraction(); })
      .def(
          "load", [](AotPot& model, const std::filesystem::path& path) { load_model(model, path); },
          py::arg("path"), "Loads parameters from a checkpoint written by training.");

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("steps_per_epoch", &TrainConfig::steps_per_epoch)
      .def_readwrite("batch", &TrainConfig::batch)
      .def_readwrite("warmup_fraction", &TrainConfig::warmup_fraction)
      .def_readwrite("lr", &TrainConfig::lr)
      .def_readwrite("weight_decay", &TrainConfig::weight_decay)
      .def_readwrite("noise", &TrainConfig::noise)
      .def_readwrite("clip", &TrainConfig::clip)
      .def_readwrite("seed", &TrainConfig::seed);

  m.def(
      "train",
      [](AotPot& model, const std::vector<PdeFamilySpec>& families, const TrainConfig& cfg, std::uint64_t data_seed,
         const std::string& out_dir) {
        auto [train, test] = build_dataset(families, data_seed);
        Trainer trainer(model, train, cfg, &test);
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = trainer.run(out_dir);
        }
        if (r.blew_up) throw NumericError(r.error, r.blowup_step);
        py::dict out;
        out["step_losses"] = r.step_losses;
        py::dict val;
        for (const auto& s : trainer.validate().by_group) val[py::str(s.group)] = s.l2re;
        out["validation"] = val;
        return out;
      },
      py::arg("model"), py::arg("families"), py::arg("config"), py::arg("data_seed") = 0, py::arg("out_dir") = "",
      "Generates the families, trains in place and returns losses and test L2RE per group.");

  m.def(
      "resolved_config",
      [](const std::string& ini_text) {
        RunConfig cfg;
        cfg.load_text(ini_text);
        return cfg.to_ini();
      },
      py::arg("ini_text") = "", "Defaults merged with the given INI text, as resolved INI text.");
}
