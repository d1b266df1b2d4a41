#include <sstream>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "quadscan/bench.hpp"
#include "quadscan/cli.hpp"
#include "quadscan/eval.hpp"
#include "quadscan/scan_order.hpp"
#include "quadscan/ssm.hpp"
#include "quadscan/synthdata.hpp"

namespace py = pybind11;
using namespace quadscan;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor::from(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

py::array_t<std::uint8_t> image_array(const synth::Image& im) {
  py::array_t<std::uint8_t> out({im.height, im.width, im.channels});
  std::copy(im.pixels.begin(), im.pixels.end(), out.mutable_data());
  return out;
}

std::vector<BBox> to_boxes(const std::vector<std::array<double, 4>>& rows) {
  std::vector<BBox> boxes;
  for (const auto& r : rows) boxes.push_back({r[0], r[1], r[2], r[3]});
  return boxes;
}

py::dict sequence_dict(const synth::Sequence& seq) {
  std::vector<std::array<double, 4>> boxes;
  for (const auto& b : seq.boxes) boxes.push_back({b.x1, b.y1, b.w, b.h});
  py::list rgb, tir, event;
  for (const auto& im : seq.rgb) rgb.append(image_array(im));
  for (const auto& im : seq.tir) tir.append(image_array(im));
  for (const auto& im : seq.event) event.append(image_array(im));
  py::dict d;
  d["name"] = seq.name;
  d["boxes"] = boxes;
  d["language"] = seq.language;
  d["attributes"] = seq.attributes;
  d["rgb"] = rgb;
  d["tir"] = tir;
  d["event"] = event;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Quad-modal scan fusion core";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<GeometryError>(m, "GeometryError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);

  m.def(
      "scan_order",
      [](const std::string& scale, std::size_t modalities, std::size_t template_tokens) {
        return make_order(parse_scale(scale), TokenGeometry::standard(modalities, template_tokens)).perm;
      },
      py::arg("scale"), py::arg("modalities"), py::arg("template_tokens"),
      "Canonical token index visited at each scan step.");

  m.def(
      "scan_core",
      [](const Array& x, const Array& delta, const Array& a_log, const Array& b, const Array& c,
         const Array& d_skip) {
        return to_array(ssm::scan_core(to_tensor(x), to_tensor(delta), to_tensor(a_log), to_tensor(b),
                                       to_tensor(c), to_tensor(d_skip)));
      },
      py::arg("x"), py::arg("delta"), py::arg("a_log"), py::arg("b"), py::arg("c"), py::arg("d_skip"),
      "Selective-scan recurrence over [L x D] inputs with A = -exp(a_log).");

  m.def(
      "generate",
      [](const std::string& scenario, std::size_t frames, std::uint64_t seed) {
        synth::ScenarioConfig cfg;
        cfg.scenario = synth::parse_scenario(scenario);
        cfg.frames = frames;
        return sequence_dict(synth::generate(cfg, seed));
      },
      py::arg("scenario"), py::arg("frames") = 30, py::arg("seed") = 1);

  m.def(
      "score",
      [](const std::vector<std::array<double, 4>>& predicted, const std::vector<std::array<double, 4>>& truth) {
        const std::vector<eval::TrackResult> rs{{"seq", to_boxes(predicted), to_boxes(truth), {}}};
        const auto rep = eval::score(rs);
        return py::make_tuple(rep.pr, rep.sr);
      },
      py::arg("predicted"), py::arg("truth"), "(PR, SR) of one sequence of x1,y1,w,h boxes.");

  m.def("iou", [](std::array<double, 4> a, std::array<double, 4> b) {
    return eval::iou({a[0], a[1], a[2], a[3]}, {b[0], b[1], b[2], b[3]});
  });

  m.def(
      "fusion_flops",
      [](std::size_t tokens, std::size_t modalities, std::size_t dim) {
        mfm::MfmConfig cfg;
        cfg.dim = dim;
        py::dict d;
        d["mfm"] = bench::mfm_flops(cfg, tokens, modalities);
        d["attention-a"] = bench::attention_a_flops(tokens, dim, modalities);
        d["attention-b"] = bench::attention_b_flops(tokens, dim, modalities);
        return d;
      },
      py::arg("tokens"), py::arg("modalities") = 4, py::arg("dim") = 16);

  m.def(
      "run",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "quadscan");
        std::vector<const char*> argv;
        for (const auto& a : args) argv.push_back(a.c_str());
        std::ostringstream out, err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs a quadscan subcommand; returns (exit code, stdout, stderr).");
}
