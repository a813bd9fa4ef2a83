#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "flic/codec.hpp"
#include "flic/errors.hpp"
#include "flic/inspect.hpp"
#include "flic/metrics.hpp"

namespace py = pybind11;
using namespace flic;
using bitstream::ImageRect;

namespace {

using U8Array = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

RgbImage to_rgb(const U8Array& a) {
  if (a.ndim() != 3 || a.shape(2) != 3)
    throw std::invalid_argument("expected an (H, W, 3) uint8 array");
  RgbImage img(static_cast<std::uint32_t>(a.shape(1)), static_cast<std::uint32_t>(a.shape(0)));
  std::copy(a.data(), a.data() + a.size(), img.pixels.begin());
  return img;
}

U8Array to_array(const RgbImage& img) {
  U8Array out({static_cast<py::ssize_t>(img.height), static_cast<py::ssize_t>(img.width),
               py::ssize_t{3}});
  std::copy(img.pixels.begin(), img.pixels.end(), out.mutable_data());
  return out;
}

template <typename T>
py::array_t<T> matrix(const Tensor<T>& t) {
  if (t.empty()) return py::array_t<T>(std::vector<py::ssize_t>{0, 0});
  py::array_t<T> out({static_cast<py::ssize_t>(t.shape()[0]),
                      static_cast<py::ssize_t>(t.shape()[1])});
  std::copy(t.data(), t.data() + t.size(), out.mutable_data());
  return out;
}

std::vector<std::uint8_t> to_vec(const py::bytes& b) {
  const std::string s = b;
  return {s.begin(), s.end()};
}

py::bytes to_bytes(const std::vector<std::uint8_t>& v) {
  return py::bytes(reinterpret_cast<const char*>(v.data()), v.size());
}

std::vector<ImageRect> to_rects(const std::vector<std::array<std::uint32_t, 4>>& rois) {
  std::vector<ImageRect> out;
  for (const auto& r : rois) out.push_back({r[0], r[1], r[2], r[3]});
  return out;
}

py::dict stats_dict(const EncodeStats& s) {
  py::dict d;
  d["bpp_base"] = s.bpp_base;
  d["bpp_enh"] = s.bpp_enh;
  d["bpp_total"] = s.bpp_total;
  d["bpp_container"] = s.bpp_container;
  d["base_bytes"] = s.base_bytes;
  d["enh_bytes"] = s.enh_bytes;
  d["container_bytes"] = s.container_bytes;
  return d;
}

DecodeMode parse_mode(const std::string& mode, const std::vector<std::array<std::uint32_t, 4>>& rois) {
  if (mode == "full") return DecodeMode::full();
  if (mode == "base") return DecodeMode::base();
  if (mode == "roi") return DecodeMode::roi(to_rects(rois));
  throw std::invalid_argument("mode must be full, base or roi");
}

}  // namespace

PYBIND11_MODULE(_flic, m) {
  m.doc() = "Frequency-aware learned image codec with scalable and ROI decoding";

  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<ModelMismatchError>(m, "ModelMismatchError", PyExc_ValueError);

  py::class_<LoadedModel, std::shared_ptr<LoadedModel>>(m, "Model")
      .def_static(
          "init",
          [](int stages, std::vector<std::size_t> channels, std::uint64_t seed) {
            FlicConfig cfg;
            cfg.stages = stages;
            cfg.channels = std::move(channels);
            return std::make_shared<LoadedModel>(LoadedModel::from(init_model<float>(cfg, seed)));
          },
          py::arg("stages") = 4, py::arg("channels") = std::vector<std::size_t>{32, 64, 96, 128},
          py::arg("seed") = 1, "Freshly initialised (untrained) weights.")
      .def_static("load",
                  [](const std::string& path) {
                    return std::make_shared<LoadedModel>(LoadedModel::load(path));
                  })
      .def("save", [](const LoadedModel& lm, const std::string& path) { save_weights(lm.model, path); })
      .def_property_readonly("id", [](const LoadedModel& lm) { return model_id_hex(lm.id); })
      .def_property_readonly("stages", [](const LoadedModel& lm) { return lm.model.config.stages; })
      .def_property_readonly("channels",
                             [](const LoadedModel& lm) { return lm.model.config.channels; });

  m.def(
      "encode",
      [](const LoadedModel& lm, const U8Array& image) {
        auto r = encode_image(to_rgb(image), lm);
        return py::make_tuple(to_bytes(r.bytes), stats_dict(r.stats));
      },
      py::arg("model"), py::arg("image"), "Returns (container bytes, stats dict).");

  m.def(
      "decode",
      [](const LoadedModel& lm, const py::bytes& data, const std::string& mode,
         const std::vector<std::array<std::uint32_t, 4>>& rois) {
        const auto bytes = to_vec(data);
        return to_array(decode_image(bytes, parse_mode(mode, rois), lm));
      },
      py::arg("model"), py::arg("data"), py::arg("mode") = "full",
      py::arg("rois") = std::vector<std::array<std::uint32_t, 4>>{},
      "mode is full, base or roi; rois are (x, y, w, h).");

  m.def(
      "extract_roi",
      [](const LoadedModel& lm, const py::bytes& data,
         const std::vector<std::array<std::uint32_t, 4>>& rois) {
        const auto c = bitstream::parse(to_vec(data));
        if (c.header.model_id != lm.id) throw ModelMismatchError(c.header.model_id, lm.id);
        const auto rects = to_rects(rois);
        return to_bytes(bitstream::serialize(bitstream::extract_roi(c, rects, lm.model)));
      },
      py::arg("model"), py::arg("data"), py::arg("rois"));

  m.def(
      "latent_mosaics",
      [](const LoadedModel& lm, const py::bytes& data) {
        const auto c = bitstream::parse(to_vec(data));
        const auto y = decode_latents(c, c.is_tiled() ? DecodeMode::base() : DecodeMode::full(), lm);
        const auto mos = visualize_latents(
            LatentPair{entropy::from_symbols<float>(y.low), entropy::from_symbols<float>(y.high)});
        return py::make_tuple(matrix(mos.low.image), matrix(mos.high.image));
      },
      py::arg("model"), py::arg("data"), "Per-branch channel mosaics in [0, 1].");

  m.def("mse", [](const U8Array& a, const U8Array& b) {
    return mse(to_tensor(to_rgb(a)), to_tensor(to_rgb(b)));
  });
  m.def("psnr", [](const U8Array& a, const U8Array& b) {
    return psnr(to_tensor(to_rgb(a)), to_tensor(to_rgb(b)));
  });
  m.def("ms_ssim", [](const U8Array& a, const U8Array& b) {
    return ms_ssim(to_tensor(to_rgb(a)), to_tensor(to_rgb(b)));
  });
  m.def("spectrum", [](const U8Array& a) { return matrix(spectrum(to_tensor(to_rgb(a)))); });
  m.def(
      "bd_rate",
      [](const std::vector<std::pair<double, double>>& a,
         const std::vector<std::pair<double, double>>& b) {
        auto pts = [](const auto& v) {
          std::vector<RdPoint> out;
          for (const auto& [r, q] : v) out.push_back({r, q});
          return out;
        };
        return bd_rate(pts(a), pts(b));
      },
      py::arg("curve_a"), py::arg("curve_b"), "Curves are (bpp, quality) pairs.");
}
