#include "stad/evalbench.hpp"
#include "stad/gauss_ssm.hpp"
#include "stad/mathcore.hpp"
#include "stad/stream.hpp"
#include "stad/synth.hpp"
#include "stad/vmf_ssm.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace stad;

namespace {

// Batches cross the boundary as (t, features, labels-or-None) tuples.
py::list batches_to_py(const std::vector<EmbeddingBatch>& batches) {
  py::list out;
  for (const EmbeddingBatch& b : batches) {
    py::object labels = py::none();
    if (b.labels) labels = py::cast(*b.labels);
    out.append(py::make_tuple(b.t, b.features, labels));
  }
  return out;
}

std::vector<EmbeddingBatch> batches_from_py(const py::list& items) {
  std::vector<EmbeddingBatch> out;
  for (const py::handle& item : items) {
    const auto tup = item.cast<py::tuple>();
    EmbeddingBatch b;
    b.t = tup[0].cast<std::int64_t>();
    b.features = tup[1].cast<Matrix>();
    if (tup.size() > 2 && !tup[2].is_none()) b.labels = tup[2].cast<Labels>();
    out.push_back(std::move(b));
  }
  return out;
}

py::dict summary_dict(const eval::Summary& s) {
  return py::module_::import("json").attr("loads")(eval::summary_to_json(s).dump());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "State-space test-time adaptation: vMF and Gaussian prototype models";

  // StadError(message) with a `code` attribute naming the library error code.
  static py::handle error_type = py::exception<Error>(m, "StadError").release();
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object exc = py::reinterpret_borrow<py::object>(error_type)(e.what());
      exc.attr("code") = std::string(to_string(e.code()));
      PyErr_SetObject(error_type.ptr(), exc.ptr());
    }
  });

  m.def("log_bessel_i", &math::log_bessel_i, py::arg("order"), py::arg("arg"));
  m.def("bessel_ratio", &math::bessel_ratio, py::arg("dim"), py::arg("kappa"));
  m.def("log_vmf_norm_const", &math::log_vmf_norm_const, py::arg("dim"), py::arg("kappa"));
  m.def("estimate_kappa", &math::estimate_kappa, py::arg("r_bar"), py::arg("dim"));

  m.def(
      "synth_drift",
      [](const std::string& geometry, int dim, int num_classes, int steps, int n_per_step, double kappa_true,
         double sigma_true, double drift_deg, double drift_scale, const std::string& labels, std::uint64_t seed) {
        synth::DriftScenario s;
        s.geometry = geometry == "euclidean" ? synth::Geometry::kEuclidean : synth::Geometry::kSphere;
        s.dim = dim;
        s.num_classes = num_classes;
        s.steps = steps;
        s.n_per_step = n_per_step;
        s.kappa_true = kappa_true;
        s.sigma_true = sigma_true;
        s.drift_deg_per_step = drift_deg;
        s.drift_vector_scale = drift_scale;
        s.labels = synth::LabelDistribution::parse(labels);
        s.seed = seed;
        const synth::SyntheticStream out = synth::synth_drift(s);
        py::dict d;
        d["batches"] = batches_to_py(out.batches);
        d["trajectory"] = out.trajectory;
        d["source_prototypes"] = out.source_prototypes;
        return d;
      },
      py::arg("geometry") = "sphere", py::arg("dim") = 16, py::arg("num_classes") = 5, py::arg("steps") = 50,
      py::arg("n_per_step") = 200, py::arg("kappa_true") = 50.0, py::arg("sigma_true") = 0.1,
      py::arg("drift_deg") = 2.0, py::arg("drift_scale") = 0.02, py::arg("labels") = "uniform",
      py::arg("seed") = 0);

  m.def(
      "read_stream", [](const std::filesystem::path& dir) { return batches_to_py(stream::read_stream(dir)); },
      py::arg("dir"));
  m.def(
      "write_stream",
      [](const std::filesystem::path& dir, const py::list& batches, int num_classes) {
        stream::write_stream(dir, batches_from_py(batches), num_classes);
      },
      py::arg("dir"), py::arg("batches"), py::arg("num_classes"));

  py::class_<vmf::VmfModelState>(m, "VmfModel")
      .def(py::init([](const Matrix& source_weights, double kappa_trans, double kappa_ems, double kappa0, int window,
                       int e_sweeps, bool learn_kappa) {
             vmf::VmfConfig c;
             c.dim = static_cast<int>(source_weights.cols());
             c.num_classes = static_cast<int>(source_weights.rows());
             c.kappa_trans = kappa_trans;
             c.kappa_ems = kappa_ems;
             c.kappa0 = kappa0;
             c.window = window;
             c.e_sweeps = e_sweeps;
             c.learn_kappa_trans = c.learn_kappa_ems = learn_kappa;
             return vmf::init_vmf(source_weights, c);
           }),
           py::arg("source_weights"), py::arg("kappa_trans") = 100.0, py::arg("kappa_ems") = 100.0,
           py::arg("kappa0") = 100.0, py::arg("window") = 3, py::arg("e_sweeps") = 2, py::arg("learn_kappa") = false)
      .def("adapt", [](vmf::VmfModelState& s, std::int64_t t, const Matrix& h) { vmf::adapt(s, t, h); })
      .def("predict", [](const vmf::VmfModelState& s, const Matrix& h) { return vmf::predict(s, h).probabilities; })
      .def("elbo", [](const vmf::VmfModelState& s) { return vmf::elbo(s); })
      .def_property_readonly("prototypes", [](const vmf::VmfModelState& s) { return vmf::current_prototypes(s); })
      .def_property_readonly("kappa_ems", [](const vmf::VmfModelState& s) { return s.kappa_ems; })
      .def_property_readonly("window_size", [](const vmf::VmfModelState& s) { return s.window.size(); });

  py::class_<gauss::GaussModelState>(m, "GaussModel")
      .def(py::init([](const Matrix& source_weights, double sigma_trans, double sigma_ems, int window, int e_sweeps,
                       bool learn_sigmas) {
             gauss::GaussConfig c;
             c.dim = static_cast<int>(source_weights.cols());
             c.num_classes = static_cast<int>(source_weights.rows());
             c.sigma_trans_scale = sigma_trans;
             c.sigma_ems_scale = sigma_ems;
             c.window = window;
             c.e_sweeps = e_sweeps;
             c.learn_sigmas = learn_sigmas;
             return gauss::init_gauss(source_weights, c);
           }),
           py::arg("source_weights"), py::arg("sigma_trans") = 0.01, py::arg("sigma_ems") = 0.5,
           py::arg("window") = 3, py::arg("e_sweeps") = 2, py::arg("learn_sigmas") = true)
      .def("adapt", [](gauss::GaussModelState& s, std::int64_t t, const Matrix& h) { gauss::gauss_adapt(s, t, h); })
      .def("predict", [](const gauss::GaussModelState& s, const Matrix& h) { return gauss::gauss_predict(s, h); })
      .def_property_readonly("prototypes",
                             [](const gauss::GaussModelState& s) { return gauss::current_prototypes(s); });

  m.def(
      "run_experiment",
      [](const py::list& batches, const Matrix& source_weights, const std::string& method, int batch_size,
         const std::string& mode, std::optional<std::vector<Matrix>> ground_truth) {
        eval::ExperimentConfig c;
        c.method = eval::parse_method(method);
        c.mode = eval::parse_mode(mode);
        c.batch_size = batch_size;
        c.record_timing = false;
        const eval::ExperimentResult r =
            eval::run_experiment(batches_from_py(batches), source_weights, c, ground_truth);
        py::list steps;
        for (const eval::StepMetrics& s : r.steps) {
          py::dict d;
          d["t"] = s.t;
          d["n"] = s.n;
          d["accuracy"] = s.accuracy;
          d["mean_entropy"] = s.mean_entropy;
          d["dispersion_deg"] = s.dispersion_deg;
          d["tracking_err_deg"] = s.tracking_err_deg;
          steps.append(d);
        }
        return py::make_tuple(steps, summary_dict(r.summary));
      },
      py::arg("batches"), py::arg("source_weights"), py::arg("method") = "vmf", py::arg("batch_size") = 0,
      py::arg("mode") = "transductive", py::arg("ground_truth") = py::none());
}
