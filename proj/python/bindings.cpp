#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <sstream>

#include "ldct/cli.hpp"
#include "ldct/ct_sim.hpp"
#include "ldct/data.hpp"
#include "ldct/errors.hpp"
#include "ldct/losses.hpp"
#include "ldct/metrics.hpp"

namespace py = pybind11;
using namespace ldct;

namespace {

Geometry make_geometry(int image_size, std::optional<int> num_angles, std::optional<int> num_detectors) {
  Geometry g = Geometry::desk(image_size);
  if (num_angles) g.num_angles = *num_angles;
  if (num_detectors) g.num_detectors = *num_detectors;
  g.validate();
  return g;
}

}  // namespace

PYBIND11_MODULE(_ldct, m) {
  m.doc() = "Low-dose CT simulation, losses and metrics";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);

  py::class_<Geometry>(m, "Geometry")
      .def(py::init(&make_geometry), py::arg("image_size"), py::arg("num_angles") = py::none(),
           py::arg("num_detectors") = py::none())
      .def_readwrite("num_angles", &Geometry::num_angles)
      .def_readwrite("num_detectors", &Geometry::num_detectors)
      .def_readwrite("image_size", &Geometry::image_size)
      .def("validate", &Geometry::validate);

  m.def("radon", [](const Image& image, const Geometry& g) -> SinogramValues { return radon(image, g).values; },
        py::arg("image"), py::arg("geometry"));
  m.def(
      "fbp",
      [](const SinogramValues& values, const Geometry& g, const std::string& filter) {
        return fbp(Sinogram{values, g}, parse_filter(filter));
      },
      py::arg("sinogram"), py::arg("geometry"), py::arg("filter") = "ramp");
  m.def(
      "simulate_low_dose",
      [](const Image& full, const Geometry& g, double photon_count, std::uint64_t seed) {
        NoiseModel n;
        n.photon_count = photon_count;
        n.rng_seed = seed;
        return simulate_low_dose(full, g, n);
      },
      py::arg("full_dose"), py::arg("geometry"), py::arg("photon_count") = 4096.0, py::arg("seed") = 0);
  m.def(
      "generate_phantom",
      [](int image_size, std::uint64_t seed) { return generate_phantom(PhantomSpec::scaled(image_size), seed); },
      py::arg("image_size") = 64, py::arg("seed") = 0);
  m.def("roi_mask", &roi_mask, py::arg("image_size"), py::arg("radius"));

  m.def(
      "mse_loss", [](const Image& prediction, const Image& target) { return mse_loss(prediction, target); },
      py::arg("prediction"), py::arg("target"));
  m.def(
      "dice_loss",
      [](const ProbMap<double>& probs, const SegMap& labels, double epsilon) {
        return dice_loss(probs, labels, epsilon);
      },
      py::arg("probs"), py::arg("labels"), py::arg("epsilon") = kDefaultDiceEpsilon);
  m.def("task_adaptive_loss", &task_adaptive_loss, py::arg("recon"), py::arg("full_dose"), py::arg("probs"),
        py::arg("labels"), py::arg("alpha"), py::arg("epsilon") = kDefaultDiceEpsilon);

  m.def("psnr_roi", &psnr_roi, py::arg("x"), py::arg("reference"), py::arg("mask"), py::arg("data_range") = 1.0);
  m.def(
      "ssim_roi", [](const Image& x, const Image& ref, const BoolMask& mask) { return ssim_roi(x, ref, mask); },
      py::arg("x"), py::arg("reference"), py::arg("mask"));
  m.def(
      "hard_dice",
      [](const SegMap& predicted, const SegMap& truth, std::vector<int> classes) {
        return hard_dice(predicted, truth, classes);
      },
      py::arg("predicted"), py::arg("truth"), py::arg("classes") = std::vector<int>{1, 2});

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = dispatch(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs an `ldct` subcommand; returns (exit_code, stdout, stderr).");
}
