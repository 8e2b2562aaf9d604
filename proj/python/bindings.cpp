#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "worldprobe/dataset.hpp"
#include "worldprobe/errors.hpp"
#include "worldprobe/metrics.hpp"
#include "worldprobe/probes.hpp"
#include "worldprobe/synth.hpp"

namespace py = pybind11;
using namespace worldprobe;

PYBIND11_MODULE(_worldprobe, m) {
  m.doc() = "Linear probes for space and time in model activations";

  auto error = py::register_exception<Error>(m, "Error");
  py::register_exception<DataError>(m, "DataError", error.ptr());
  py::register_exception<NumericalError>(m, "NumericalError", error.ptr());
  py::register_exception<UsageError>(m, "UsageError", error.ptr());

  py::class_<ProbeModel>(m, "ProbeModel")
      .def_readonly("weights", &ProbeModel::weights)
      .def_readonly("intercept", &ProbeModel::intercept)
      .def_readonly("lam", &ProbeModel::lambda)
      .def_readonly("feature_mean", &ProbeModel::feature_mean)
      .def_readonly("target_mean", &ProbeModel::target_mean)
      .def("predict", [](const ProbeModel& p, const Matrix& A) { return predict(p, A); }, py::arg("A"))
      .def("encode", [](const ProbeModel& p) { return py::bytes(encode_probe(p)); })
      .def_static("decode", [](const py::bytes& b) { return decode_probe(std::string(b)); }, py::arg("data"));

  py::class_<LoocvCurve>(m, "LoocvCurve")
      .def_readonly("lambdas", &LoocvCurve::lambdas)
      .def_readonly("press", &LoocvCurve::press)
      .def_property_readonly("chosen_lambda", &LoocvCurve::chosen_lambda);

  m.def("fit_ridge",
        [](const Matrix& A, const Matrix& Y, double lam, bool standardize) {
          return fit_ridge(A, Y, lam, RidgeOptions{standardize});
        },
        py::arg("A"), py::arg("Y"), py::arg("lam"), py::arg("standardize") = false);
  m.def("default_lambda_grid", &default_lambda_grid);
  m.def("tune_lambda_loocv",
        [](const Matrix& A, const Matrix& Y, std::vector<double> grid) { return tune_lambda_loocv(A, Y, grid); },
        py::arg("A"), py::arg("Y"), py::arg("grid") = default_lambda_grid());
  m.def("fit_ridge_cv",
        [](const Matrix& A, const Matrix& Y, std::vector<double> grid) {
          auto fit = fit_ridge_cv(A, Y, grid);
          return py::make_tuple(fit.probe, fit.curve);
        },
        py::arg("A"), py::arg("Y"), py::arg("grid") = default_lambda_grid());
  m.def("loo_residuals",
        [](const Matrix& A, const Matrix& Y, double lam) { return RidgeSolver(A, Y).loo_residuals(lam); },
        py::arg("A"), py::arg("Y"), py::arg("lam"));

  m.def("r2", &r2, py::arg("Y"), py::arg("Yhat"));
  m.def("spearman", &spearman, py::arg("Y"), py::arg("Yhat"), py::arg("skip_constant") = false);
  m.def("proximity_error",
        [](const Matrix& Y, const Matrix& Yhat, const std::string& distance, const std::string& pool) {
          const auto kind = parse_distance_kind(distance);
          if (pool != "predictions" && pool != "true") throw UsageError("pool must be 'predictions' or 'true'");
          return proximity_error(Y, Yhat, kind, pool == "true" ? ProximityPool::TruePositions : ProximityPool::Predictions)
              .per_entity;
        },
        py::arg("Y"), py::arg("Yhat"), py::arg("distance") = "haversine", py::arg("pool") = "predictions");

  m.def("load_activations",
        [](const std::string& path) {
          const auto a = load_activations(path);
          py::dict meta;
          meta["model_id"] = a.model_id;
          meta["layer"] = a.layer;
          meta["prompt_id"] = a.prompt_id;
          return py::make_tuple(a.as_double(), meta);
        },
        py::arg("path"));
  m.def("write_activations",
        [](const std::string& path, const Matrix& data, const std::string& model_id, int layer,
           const std::string& prompt_id) {
          ActivationMatrix a;
          a.model_id = model_id;
          a.layer = static_cast<std::uint16_t>(layer);
          a.prompt_id = prompt_id;
          a.data = data.cast<float>();
          write_activations(path, a);
        },
        py::arg("path"), py::arg("data"), py::arg("model_id") = "unknown", py::arg("layer") = 0,
        py::arg("prompt_id") = "empty");
  m.def("load_targets", [](const std::string& path) { return load_entities(path).targets(); }, py::arg("path"));

  m.def("gen_linear",
        [](std::size_t n, std::size_t d, std::size_t target_dim, double snr, std::size_t n_distractors,
           std::uint64_t seed) {
          synth::SynthSpec s;
          s.n = n;
          s.d = d;
          s.target_dim = target_dim;
          s.snr = snr;
          s.n_distractors = n_distractors;
          s.seed = seed;
          const auto ds = synth::gen_linear(s);
          return py::make_tuple(ds.activations.as_double(), ds.entities.targets());
        },
        py::arg("n"), py::arg("d"), py::arg("target_dim") = 2, py::arg("snr") = 10.0, py::arg("n_distractors") = 0,
        py::arg("seed") = 0);
}
