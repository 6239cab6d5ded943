#include <pybind11/numpy.h>
#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "octaquant/cli.hpp"
#include "octaquant/error.hpp"
#include "octaquant/eval.hpp"
#include "octaquant/phantom.hpp"
#include "octaquant/quantify.hpp"
#include "octaquant/segment.hpp"
#include "octaquant/training.hpp"
#include "octaquant/unet.hpp"

namespace py = pybind11;
using namespace octaquant;

namespace {

template <typename R, typename In>
R from_array(const py::array_t<In, py::array::c_style | py::array::forcecast>& a, const char* what) {
  if (a.ndim() != 2) throw ShapeError(std::string(what) + " must be a 2-D array");
  const auto rows = static_cast<int>(a.shape(0));
  const auto cols = static_cast<int>(a.shape(1));
  R out(rows, cols);
  const In* src = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<typename R::value_type>(src[i]);
  return out;
}

using U8 = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;
using Bool = py::array_t<bool, py::array::c_style | py::array::forcecast>;

GrayImage to_image(const U8& a) { return from_array<GrayImage, std::uint8_t>(a, "image"); }
BinaryMask to_mask(const Bool& a) { return from_array<BinaryMask, bool>(a, "mask"); }

template <typename T, typename Out = T, typename R>
py::array_t<Out> to_array(const R& r) {
  py::array_t<Out> out({r.rows(), r.cols()});
  Out* dst = out.mutable_data();
  for (std::size_t i = 0; i < r.size(); ++i) dst[i] = static_cast<Out>(r[i]);
  return out;
}

py::array_t<std::uint8_t> image_array(const GrayImage& g) { return to_array<std::uint8_t>(g); }
py::array_t<bool> mask_array(const BinaryMask& m) { return to_array<std::uint8_t, bool>(m); }

py::dict counts_dict(const eval::EvalCounts& c) {
  py::dict d;
  d["tp"] = c.tp;
  d["fp"] = c.fp;
  d["fn"] = c.fn;
  d["tn"] = c.tn;
  return d;
}

}  // namespace

PYBIND11_MODULE(_octaquant, m) {
  m.doc() = "OCT-A vessel segmentation and inter-capillary area quantification";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ComputeError>(m, "ComputeError", PyExc_ArithmeticError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  m.def("confusion", [](const Bool& p, const Bool& t) { return counts_dict(eval::confusion(to_mask(p), to_mask(t))); },
        py::arg("pred"), py::arg("truth"));
  m.def("accuracy", [](const Bool& p, const Bool& t) { return eval::accuracy(eval::confusion(to_mask(p), to_mask(t))); },
        py::arg("pred"), py::arg("truth"));
  m.def("dice", [](const Bool& p, const Bool& t) { return eval::dice(eval::confusion(to_mask(p), to_mask(t))); },
        py::arg("pred"), py::arg("truth"));

  m.def("otsu_threshold", [](const U8& img) { return segment::otsu_threshold(to_image(img)); }, py::arg("image"));
  m.def("otsu", [](const U8& img) { return mask_array(segment::otsu(to_image(img))); }, py::arg("image"));
  m.def(
      "remove_small_components",
      [](const Bool& mask, int min_px, int connectivity) {
        if (connectivity != 4 && connectivity != 8) throw ConfigError("connectivity must be 4 or 8");
        return mask_array(segment::remove_small_components(
            to_mask(mask), min_px, connectivity == 4 ? morph::Connectivity::four : morph::Connectivity::eight));
      },
      py::arg("mask"), py::arg("min_px") = 30, py::arg("connectivity") = 8);
  m.def("distance_transform",
        [](const Bool& mask) { return to_array<double>(quantify::distance_transform(to_mask(mask))); },
        py::arg("mask"));

  m.def(
      "generate_phantom",
      [](const std::string& style, int rows, int cols, std::uint64_t seed, double snr, double density,
         double faz_radius, int bands, int frames, double spacing_variation) {
        phantom::PhantomSpec s;
        s.style = phantom::parse_style(style);
        s.rows = rows;
        s.cols = cols;
        s.seed = seed;
        s.speckle_snr = snr;
        s.vessel_density_target = density;
        s.faz_radius_px = faz_radius;
        s.projection_band_count = bands;
        s.frames_to_average = frames;
        s.spacing_variation = spacing_variation;
        const auto item = phantom::generate(s);
        py::dict d;
        d["single"] = image_array(item.frames.single);
        d["averaged"] = image_array(item.frames.averaged);
        d["mask"] = mask_array(item.truth.mask);
        d["bands"] = mask_array(item.truth.bands);
        return d;
      },
      py::arg("style") = "scp", py::arg("rows") = 256, py::arg("cols") = 256, py::arg("seed") = 0,
      py::arg("snr") = 1.5, py::arg("density") = 0.35, py::arg("faz_radius") = 20.0, py::arg("bands") = 0,
      py::arg("frames") = 10, py::arg("spacing_variation") = 0.0);

  m.def(
      "analyze",
      [](const Bool& mask, const std::string& plexus, double px_per_mm, const std::string& laterality) {
        quantify::QuantifyConfig c;
        c.px_per_mm = px_per_mm;
        c.laterality = laterality == "os" ? quantify::Laterality::os : quantify::Laterality::od;
        const auto r = quantify::analyze(to_mask(mask), quantify::parse_plexus(plexus), c);
        py::list icas;
        for (const auto& ica : r.icas) {
          py::dict d;
          d["label"] = ica.label;
          d["pixel_count"] = ica.pixel_count;
          d["mip"] = ica.mip_value;
          d["region"] = std::string(quantify::to_string(ica.etdrs_region));
          icas.append(d);
        }
        py::dict density;
        for (std::size_t i = 0; i < quantify::kRegionCount; ++i) {
          density[py::str(std::string(quantify::to_string(static_cast<quantify::EtdrsRegion>(i))))] =
              r.densities[i].density;
        }
        py::dict out;
        out["icas"] = icas;
        out["faz_label"] = r.faz_label;
        out["faz_area"] = r.faz().pixel_count;
        out["faz_centroid"] = py::make_tuple(r.faz_centroid.row, r.faz_centroid.col);
        out["density"] = density;
        out["mask"] = mask_array(r.mask);
        return out;
      },
      py::arg("mask"), py::arg("plexus") = "scp", py::arg("px_per_mm") = 0.0, py::arg("laterality") = "od");

  py::class_<unet::ModelWeights>(m, "Model")
      .def_static(
          "build",
          [](int depth, int base, float dropout, std::uint64_t seed) {
            unet::UnetConfig c;
            c.depth = depth;
            c.base_channels = base;
            c.dropout_p = dropout;
            return unet::build(c, seed);
          },
          py::arg("depth") = 4, py::arg("base") = 16, py::arg("dropout") = 0.5f, py::arg("seed") = 0)
      .def_static("load", [](const std::filesystem::path& p) { return unet::load_weights(p); }, py::arg("path"))
      .def("save", [](const unet::ModelWeights& w, const std::filesystem::path& p) { unet::save_weights(w, p); },
           py::arg("path"))
      .def_property_readonly("depth", [](const unet::ModelWeights& w) { return w.config.depth; })
      .def_property_readonly("base_channels", [](const unet::ModelWeights& w) { return w.config.base_channels; })
      .def_property_readonly("parameter_count", &unet::ModelWeights::parameter_count)
      .def(
          "forward", [](const unet::ModelWeights& w, const U8& img) { return to_array<float>(unet::forward(w, to_image(img))); },
          py::arg("image"))
      .def(
          "segment",
          [](const unet::ModelWeights& w, const U8& img, float threshold, int min_cluster) {
            segment::PostProcessConfig pc;
            pc.binarize_threshold = threshold;
            pc.min_cluster_px = min_cluster;
            return mask_array(segment::postprocess(segment::infer_tiled(w, to_image(img), {256, 256}), pc));
          },
          py::arg("image"), py::arg("threshold") = 0.5f, py::arg("min_cluster") = 30)
      .def(py::self == py::self);

  m.def(
      "train",
      [](const unet::ModelWeights& initial, const std::vector<U8>& images, const std::vector<Bool>& masks, int epochs,
         double lr, double eps, int batch, std::uint64_t seed, int tile_rows, int tile_cols) {
        if (images.size() != masks.size()) throw ShapeError("images and masks differ in count");
        training::LabeledSet set;
        for (std::size_t i = 0; i < images.size(); ++i) set.push_back({to_image(images[i]), to_mask(masks[i])});
        training::TrainConfig c;
        c.epochs = epochs;
        c.learning_rate = lr;
        c.adam_epsilon = eps;
        c.batch_size = batch;
        c.seed = seed;
        c.tile_rows = tile_rows;
        c.tile_cols = tile_cols;
        training::TrainResult res;
        {
          py::gil_scoped_release release;
          res = training::train(initial, set, c);
        }
        py::list history;
        for (const auto& e : res.history) history.append(py::make_tuple(e.epoch, e.loss, e.dice));
        return py::make_tuple(res.weights, history);
      },
      py::arg("model"), py::arg("images"), py::arg("masks"), py::arg("epochs") = 120, py::arg("lr") = 1e-4,
      py::arg("eps") = 1e-5, py::arg("batch") = 4, py::arg("seed") = 0, py::arg("tile_rows") = 1,
      py::arg("tile_cols") = 1);

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out;
        std::ostringstream err;
        const int code = cli::run(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"));
}
