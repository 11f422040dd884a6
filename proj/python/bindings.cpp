#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <memory>

#include "affsam/checkpoint.hpp"
#include "affsam/config.hpp"
#include "affsam/dataset.hpp"
#include "affsam/errors.hpp"
#include "affsam/metrics.hpp"
#include "affsam/ops.hpp"
#include "affsam/postproc.hpp"
#include "affsam/synth.hpp"
#include "affsam/trainer.hpp"
#include "affsam/verify.hpp"
#include "affsam/version.hpp"

namespace py = pybind11;
using namespace affsam;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

AffordanceMap to_map(const Array& a) {
  if (a.ndim() != 2) throw DimensionError("expected a 2-D array, got " + std::to_string(a.ndim()) + " dimensions");
  const auto h = static_cast<std::size_t>(a.shape(0)), w = static_cast<std::size_t>(a.shape(1));
  return AffordanceMap::from(h, w, std::vector<double>(a.data(), a.data() + h * w));
}

Array to_array(const AffordanceMap& m) {
  Array out({m.height, m.width});
  std::copy(m.values.begin(), m.values.end(), out.mutable_data());
  return out;
}

// A checkpoint-backed model for inference from Python.
class Predictor {
 public:
  explicit Predictor(const std::filesystem::path& checkpoint)
      : model_(std::make_unique<AffordanceModel>(restore_model(load_checkpoint(checkpoint)))) {}

  std::size_t image_size() const { return model_->config().backbone.image_size; }
  bool has_adaption() const { return model_->has_adaption(); }

  // image [C, S, S] in [0, 1] -> sigmoid heatmap [S, S]
  Array predict(const Array& image, const std::string& prompt) const {
    const auto& bb = model_->config().backbone;
    if (image.ndim() != 3 || static_cast<std::size_t>(image.shape(0)) != bb.channels ||
        static_cast<std::size_t>(image.shape(1)) != bb.image_size ||
        static_cast<std::size_t>(image.shape(2)) != bb.image_size) {
      throw DimensionError("image must be [" + std::to_string(bb.channels) + ", " + std::to_string(bb.image_size) +
                           ", " + std::to_string(bb.image_size) + "]");
    }
    TrainingSample s;
    s.image.assign(image.data(), image.data() + image.size());
    s.prompt = prompt;
    tokenize(prompt, bb);
    py::gil_scoped_release release;
    const AffordanceMap m = affsam::predict(*model_, {s}).front();
    py::gil_scoped_acquire acquire;
    return to_array(m);
  }

 private:
  std::unique_ptr<AffordanceModel> model_;
};

}  // namespace

PYBIND11_MODULE(_affsam, m) {
  m.doc() = "Affordance-map toolkit: post-processing, metrics, synthetic data and inference";
  m.attr("__version__") = kVersion;

  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<InputError>(m, "InputError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ValidationError>(m, "ValidationError", PyExc_RuntimeError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  m.def(
      "postprocess",
      [](const Array& map, double gamma, int num_filtrations) {
        return to_array(postprocess(to_map(map), PostprocConfig{gamma, num_filtrations}));
      },
      py::arg("map"), py::arg("gamma") = 0.45, py::arg("num_filtrations") = 3,
      "Cascade filter that suppresses low-response regions of a heatmap.");

  m.def(
      "kld", [](const Array& p, const Array& g, double eps) { return kld(to_map(p), to_map(g), MetricsConfig{eps}); },
      py::arg("pred"), py::arg("gt"), py::arg("epsilon") = 1e-10);
  m.def("sim", [](const Array& p, const Array& g) { return sim(to_map(p), to_map(g)); }, py::arg("pred"), py::arg("gt"));
  m.def("nss", [](const Array& p, const Array& g) { return nss(to_map(p), to_map(g)); }, py::arg("pred"), py::arg("gt"));

  m.def("build_prompt", py::overload_cast<const std::string&, const std::string&>(&build_prompt), py::arg("action"),
        py::arg("object"));
  m.def(
      "tokenize", [](const std::string& text) { return tokenize(text, BackboneConfig{}); }, py::arg("text"),
      "Token ids under the default backbone configuration.");

  m.def(
      "lr_at",
      [](std::size_t step, std::size_t total, double base_lr, std::size_t warmup) {
        return lr_at(step, total, base_lr, warmup);
      },
      py::arg("step"), py::arg("total_steps"), py::arg("base_lr"), py::arg("warmup_steps"));
  m.def(
      "clip_gradients",
      [](std::vector<double> grad, double max_norm) {
        std::vector<std::span<double>> one = {grad};
        clip_gradients(std::span<const std::span<double>>(one), max_norm);
        return grad;
      },
      py::arg("grad"), py::arg("max_norm") = 3.0, "Returns a copy scaled to global norm <= max_norm.");

  m.def(
      "generate_synthetic_dataset",
      [](const std::filesystem::path& out, std::uint64_t seed, int objects, int actions, int size) {
        SynthConfig c;
        c.seed = seed;
        c.n_objects = objects;
        c.n_actions = actions;
        c.size = size;
        const SynthSummary s = generate_synthetic_dataset(c, out);
        py::dict d;
        for (const auto& [name, path] : s.manifests) d[py::str(name)] = path;
        return py::make_tuple(d, s.hard_test_objects, s.n_records);
      },
      py::arg("out"), py::arg("seed") = 42, py::arg("objects") = 10, py::arg("actions") = 4, py::arg("size") = 64,
      "Writes the synthetic dataset; returns (manifests, hard_test_objects, n_records).");

  m.def(
      "evaluate_split",
      [](const std::filesystem::path& pred_dir, const std::filesystem::path& manifest,
         const std::filesystem::path& data_root) {
        return evaluate_split(pred_dir, read_manifest(manifest), data_root).to_json().dump();
      },
      py::arg("pred_dir"), py::arg("manifest"), py::arg("data_root"), "JSON report as a string.");

  m.def(
      "read_map", [](const std::filesystem::path& p) { return to_array(read_map_pgm(p)); }, py::arg("path"));
  m.def(
      "write_map", [](const std::filesystem::path& p, const Array& a) { write_map_pgm(p, to_map(a)); }, py::arg("path"),
      py::arg("map"));

  m.def(
      "verify",
      [](const std::string& suite, std::size_t seeds) {
        VerifyOptions o;
        o.seeds = seeds;
        std::vector<CheckOutcome> out;
        if (suite == "all" || suite == "grad") out = run_grad_suite(o);
        if (suite == "all" || suite == "oracle") {
          const auto r = run_oracle_suite(o);
          out.insert(out.end(), r.begin(), r.end());
        }
        py::list rows;
        for (const auto& c : out) {
          rows.append(py::dict(py::arg("suite") = c.suite, py::arg("name") = c.name, py::arg("passed") = c.passed,
                               py::arg("worst") = c.worst, py::arg("tolerance") = c.tolerance));
        }
        return rows;
      },
      py::arg("suite") = "oracle", py::arg("seeds") = 20);

  m.def(
      "init_checkpoint",
      [](const std::filesystem::path& path, std::uint64_t seed, bool adaption) {
        const RunConfig rc = RunConfig::defaults("desk");
        AffordanceModel model(rc.model, seed);
        if (adaption) model.attach_adaption(seed);
        save_checkpoint(path, capture_checkpoint(model, config_hash(rc)));
      },
      py::arg("path"), py::arg("seed") = 42, py::arg("adaption") = false,
      "Writes an untrained default-configuration checkpoint.");

  py::class_<Predictor>(m, "Predictor")
      .def(py::init<const std::filesystem::path&>(), py::arg("checkpoint"))
      .def_property_readonly("image_size", &Predictor::image_size)
      .def_property_readonly("has_adaption", &Predictor::has_adaption)
      .def("predict", &Predictor::predict, py::arg("image"), py::arg("prompt"));
}
