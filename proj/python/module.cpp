#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "smoothlab/apps.hpp"
#include "smoothlab/network.hpp"
#include "smoothlab/solvers.hpp"

namespace py = pybind11;
using namespace smoothlab;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

// (H, W) or (H, W, C) -> planar Image
Image to_image(const Array& a) {
  if (a.ndim() != 2 && a.ndim() != 3) throw Error(Errc::shape, "expected an (H, W) or (H, W, C) array");
  const int h = static_cast<int>(a.shape(0)), w = static_cast<int>(a.shape(1));
  const int c = a.ndim() == 3 ? static_cast<int>(a.shape(2)) : 1;
  if (c != 1 && c != 3) throw Error(Errc::shape, "expected 1 or 3 channels");
  Image img(h, w, c);
  const double* p = a.data();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int k = 0; k < c; ++k) img.at(k, y, x) = p[(static_cast<std::size_t>(y) * w + x) * c + k];
  return img;
}

py::array_t<double> to_array(const Image& img) {
  const int h = img.height(), w = img.width(), c = img.channels();
  py::array_t<double> out({h, w, c});
  double* p = out.mutable_data();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int k = 0; k < c; ++k) p[(static_cast<std::size_t>(y) * w + x) * c + k] = img.at(k, y, x);
  return out;
}

py::array_t<double> map_array(const GuidanceMap& g) {
  py::array_t<double> out({g.height, g.width});
  std::copy(g.response.begin(), g.response.end(), out.mutable_data());
  return out;
}

py::array_t<bool> mask_array(const BinaryMask& m) {
  py::array_t<bool> out({m.height(), m.width()});
  bool* p = out.mutable_data();
  for (std::size_t i = 0; i < m.size(); ++i) p[i] = m.test(i);
  return out;
}

BinaryMask to_mask(const py::array_t<bool, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2) throw Error(Errc::shape, "mask must be a 2-D array");
  BinaryMask m(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  for (std::size_t i = 0; i < m.size(); ++i) m.set(i, a.data()[i]);
  return m;
}

py::dict breakdown(const EnergyBreakdown& e) {
  py::dict d;
  d["total"] = e.total;
  d["data"] = e.data;
  d["flatten"] = e.flatten;
  d["edge"] = e.edge;
  return d;
}

Targets targets_for(const Image& I, const std::string& preset, const std::optional<BinaryMask>& saliency) {
  return build_targets(I, resolve_preset(parse_preset(preset)), saliency ? &*saliency : nullptr);
}

std::optional<BinaryMask> opt_mask(const py::object& o) {
  if (o.is_none()) return std::nullopt;
  return to_mask(o.cast<py::array_t<bool, py::array::c_style | py::array::forcecast>>());
}

}  // namespace

PYBIND11_MODULE(_smoothlab, m) {
  m.doc() = "smoothlab core bindings";

  // leaked on purpose: the translator may run during interpreter teardown
  static PyObject* error_type = PyErr_NewException("smoothlab.SmoothlabError", PyExc_RuntimeError, nullptr);
  m.attr("SmoothlabError") = py::handle(error_type);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      switch (e.code()) {
        case Errc::invalid_argument:
        case Errc::shape:
          PyErr_SetString(PyExc_ValueError, e.what());
          return;
        case Errc::io:
          PyErr_SetString(PyExc_OSError, e.what());
          return;
        default:
          PyErr_SetString(error_type, e.what());
      }
    }
  });

  m.def("load_image", [](const std::string& path) { return to_array(load_image(path)); }, py::arg("path"));
  m.def(
      "save_image", [](const Array& a, const std::string& path) { save_image(to_image(a), path); }, py::arg("image"),
      py::arg("path"));

  m.def(
      "edge_response", [](const Array& a) { return map_array(edge_response(to_image(a))); }, py::arg("image"));

  m.def("preset_json", [](const std::string& name) { return preset_json(resolve_preset(parse_preset(name))); },
        py::arg("name"));

  m.def(
      "build_targets",
      [](const Array& a, const std::string& preset, const py::object& saliency) {
        const Targets t = targets_for(to_image(a), preset, opt_mask(saliency));
        return py::make_tuple(map_array(t.guide), mask_array(t.important));
      },
      py::arg("image"), py::arg("preset") = "flatten", py::arg("saliency") = py::none(),
      "Guidance response and important-edge mask for an image.");

  m.def(
      "energy",
      [](const Array& out, const Array& in, const std::string& preset, const py::object& saliency) {
        const Image I = to_image(in), T = to_image(out);
        const Preset p = resolve_preset(parse_preset(preset));
        const auto sal = opt_mask(saliency);
        const Targets t = build_targets(I, p, sal ? &*sal : nullptr);
        const EnergyModel model(I, t.important, t.guide, p.params, t.flatten_scale);
        return breakdown(model.evaluate(T, model.select(T)));
      },
      py::arg("output"), py::arg("input"), py::arg("preset") = "flatten", py::arg("saliency") = py::none());

  m.def(
      "smooth",
      [](const Array& a, const std::string& solver, const std::string& preset, int iterations, const std::string& p_mode,
         const py::object& saliency) {
        const Image I = to_image(a);
        const Preset p = resolve_preset(parse_preset(preset));
        const auto sal = opt_mask(saliency);
        const Targets t = build_targets(I, p, sal ? &*sal : nullptr);
        SolveResult r;
        {
          py::gil_scoped_release nogil;
          const EnergyModel model(I, t.important, t.guide, p.params, t.flatten_scale);
          if (solver == "gd") {
            GdConfig cfg;
            if (iterations >= 0) cfg.iterations = iterations;
            cfg.p_mode = parse_pmode(p_mode);
            r = solve_gd(model, cfg);
          } else if (solver == "irls") {
            if (p.requires_full_objective()) {
              throw Error(Errc::invalid_argument,
                          std::string("irls cannot run preset ") + preset_name(p.id) + "; use solver='gd'");
            }
            IrlsConfig cfg;
            if (iterations >= 0) cfg.outer_iterations = iterations;
            cfg.p_mode = parse_pmode(p_mode == "dynamic" ? "all_small" : p_mode);
            r = solve_irls(model, cfg);
          } else {
            throw Error(Errc::invalid_argument, "solver must be 'gd' or 'irls'");
          }
        }
        py::list trace;
        trace.append(breakdown(r.trace.initial));
        for (const auto& row : r.trace.rows) trace.append(breakdown(row.energy));
        return py::make_tuple(to_array(r.output), trace);
      },
      py::arg("image"), py::arg("solver") = "gd", py::arg("preset") = "flatten", py::arg("iterations") = -1,
      py::arg("p_mode") = "dynamic", py::arg("saliency") = py::none(),
      "Minimize the smoothing energy. Returns (output, trace) with one energy dict per iteration.");

  m.def(
      "detail_magnify",
      [](const Array& I, const Array& T, double k) { return to_array(detail_magnify(to_image(I), to_image(T), k)); },
      py::arg("input"), py::arg("smooth"), py::arg("k"));

  py::class_<Network>(m, "Network")
      .def_property_readonly("arch", [](const Network& n) { return std::string(architecture_name(n.arch)); })
      .def_property_readonly("parameter_count", &Network::parameter_count)
      .def_property_readonly("layer_count", [](const Network& n) { return n.layers.size(); })
      .def(
          "forward",
          [](const Network& n, const Array& a) {
            const Image I = to_rgb(to_image(a));
            Image out;
            {
              py::gil_scoped_release nogil;
              out = forward_smooth(n, I);
            }
            return to_array(out);
          },
          py::arg("image"), "One inference pass: input plus predicted residual, unclamped.")
      .def("save", [](const Network& n, const std::string& path) { save_model(n, path); }, py::arg("path"))
      .def("__eq__", [](const Network& a, const Network& b) { return a == b; });

  m.def(
      "make_network",
      [](const std::string& arch, std::uint64_t seed, bool zero_final) {
        Rng rng(seed);
        return make_network(parse_architecture(arch), rng, zero_final);
      },
      py::arg("arch") = "TOY8", py::arg("seed") = 1, py::arg("zero_final") = true);
  m.def("load_model", [](const std::string& path) { return load_model(path); }, py::arg("path"));
}
