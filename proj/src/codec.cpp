#include "flic/codec.hpp"

#include <algorithm>

#include "flic/entropy.hpp"

namespace flic {

using bitstream::Container;
using bitstream::ImageRect;
using bitstream::LatentRect;

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

void check_compatible(const Container& c, const LoadedModel& lm) {
  if (c.header.model_id != lm.id) throw ModelMismatchError(c.header.model_id, lm.id);
  const auto& cfg = lm.model.config;
  const auto& h = c.header;
  require(h.channels_low == cfg.latent_channels() && h.channels_high == cfg.latent_channels() &&
              latent_extent(h.height, cfg.stages) == h.latent_h &&
              latent_extent(h.width, cfg.stages) == h.latent_w,
          "container geometry does not match the model configuration");
}

}  // namespace

LoadedModel LoadedModel::from(FlicModel m) {
  LoadedModel lm{std::move(m), {}};
  lm.id = model_id(lm.model);
  return lm;
}

LoadedModel LoadedModel::load(const std::filesystem::path& path) {
  return from(load_weights(path));
}

ModelMismatchError::ModelMismatchError(const ModelId& stream, const ModelId& loaded)
    : std::runtime_error("bitstream was produced by model " + model_id_hex(stream) +
                         " but the loaded model is " + model_id_hex(loaded)) {}

EncodeStats container_stats(const Container& c, std::size_t container_bytes) {
  EncodeStats s;
  if (c.base) s.base_bytes = c.base->payload.size();
  if (const auto* full = std::get_if<entropy::CodedChunk>(&c.enhancement)) {
    s.enh_bytes = full->payload.size();
  } else if (const auto* tiles = std::get_if<std::vector<bitstream::RoiTile>>(&c.enhancement)) {
    for (const auto& t : *tiles) s.enh_bytes += t.chunk.payload.size();
  }
  s.container_bytes = container_bytes;
  const double pixels = static_cast<double>(c.header.width) * c.header.height;
  s.bpp_base = 8.0 * static_cast<double>(s.base_bytes) / pixels;
  s.bpp_enh = 8.0 * static_cast<double>(s.enh_bytes) / pixels;
  s.bpp_total = 8.0 * static_cast<double>(s.base_bytes + s.enh_bytes) / pixels;
  s.bpp_container = 8.0 * static_cast<double>(container_bytes) / pixels;
  return s;
}

EncodeResult encode_tensor(const Tensor<float>& x, const LoadedModel& lm) {
  const auto& m = lm.model;
  require(x.rank() == 3 && x.dim(0) == m.config.image_channels,
          "encode: expected a [3,H,W] image, got " + shape_str(x.shape()));
  const std::size_t f = m.config.downsampling();
  require(x.dim(1) >= f && x.dim(2) >= f,
          "encode: image " + std::to_string(x.dim(2)) + "x" + std::to_string(x.dim(1)) +
              " is smaller than the minimum " + std::to_string(f) + "x" + std::to_string(f));
  const auto y = analyze(Var<float>::constant(x), m);
  const auto yl = entropy::to_symbols(y.low.value());
  const auto yh = entropy::to_symbols(y.high.value());

  EncodeResult r;
  auto& h = r.container.header;
  h.width = static_cast<std::uint32_t>(x.dim(2));
  h.height = static_cast<std::uint32_t>(x.dim(1));
  h.latent_h = static_cast<std::uint16_t>(yl.dim(1));
  h.latent_w = static_cast<std::uint16_t>(yl.dim(2));
  h.channels_low = static_cast<std::uint16_t>(yl.dim(0));
  h.channels_high = static_cast<std::uint16_t>(yh.dim(0));
  h.model_id = lm.id;
  r.container.base = entropy::encode_latent(yl, m.density_low);
  r.container.enhancement = entropy::encode_latent(yh, m.density_high);
  r.bytes = bitstream::serialize(r.container);
  r.stats = container_stats(r.container, r.bytes.size());
  return r;
}

EncodeResult encode_image(const RgbImage& image, const LoadedModel& lm) {
  return encode_tensor(to_tensor(image), lm);
}

LatentSymbols decode_latents(const Container& c, const DecodeMode& mode, const LoadedModel& lm) {
  check_compatible(c, lm);
  const auto& m = lm.model;
  const auto& h = c.header;
  LatentSymbols y;
  y.low = bitstream::decode_base(c, m.density_low);
  switch (mode.kind) {
    case DecodeMode::Kind::base:
      y.high = IntTensor(Shape{h.channels_high, h.latent_h, h.latent_w});
      break;
    case DecodeMode::Kind::full:
      require(std::holds_alternative<entropy::CodedChunk>(c.enhancement),
              "full decode needs the full enhancement layer");
      y.high = bitstream::decode_enhancement(c, m.density_high);
      break;
    case DecodeMode::Kind::roi: {
      require(c.has_enhancement(), "ROI decode needs an enhancement layer");
      require(!mode.rois.empty(), "ROI decode needs at least one region");
      y.high = bitstream::decode_enhancement(c, m.density_high);
      const auto rects = bitstream::normalize_rois(mode.rois, h.width, h.height, m.config.stages);
      for (std::size_t i = 0; i < h.latent_h; ++i)
        for (std::size_t j = 0; j < h.latent_w; ++j) {
          const bool keep = std::any_of(rects.begin(), rects.end(),
                                        [&](const LatentRect& r) { return r.contains(i, j); });
          if (keep) continue;
          for (std::size_t ch = 0; ch < h.channels_high; ++ch) y.high.at(ch, i, j) = 0;
        }
      break;
    }
  }
  return y;
}

Tensor<float> reconstruct(const LatentSymbols& y, const FlicModel& m, std::size_t height,
                          std::size_t width) {
  FrequencyPair<Var<float>> v{Var<float>::constant(entropy::from_symbols<float>(y.low)),
                              Var<float>::constant(entropy::from_symbols<float>(y.high))};
  return synthesize(v, m, height, width).value();
}

RgbImage decode_image(const Container& c, const DecodeMode& mode, const LoadedModel& lm) {
  const auto y = decode_latents(c, mode, lm);
  return to_image(reconstruct(y, lm.model, c.header.height, c.header.width));
}

RgbImage decode_image(std::span<const std::uint8_t> bytes, const DecodeMode& mode,
                      const LoadedModel& lm) {
  return decode_image(bitstream::parse(bytes), mode, lm);
}

std::pair<std::size_t, std::size_t> synthesis_footprint(std::size_t lo, std::size_t hi,
                                                        int stages, std::size_t latent,
                                                        std::size_t image) {
  require(lo < hi && hi <= latent, "synthesis_footprint: empty or out-of-range interval");
  // Signed arithmetic so the growth can go below zero before clipping.
  long a = static_cast<long>(lo) - 1, b = static_cast<long>(hi) + 1;  // Conv3 before IGDN
  long extent = static_cast<long>(latent);
  a = std::max(a, 0L);
  b = std::min(b, extent);
  for (int s = 0; s < stages; ++s) {
    // Conv3PS widens by one input cell, the RB's trailing Conv3 by one output pixel.
    a = 2 * a - 3;
    b = 2 * b + 3;
    extent *= 2;
    a = std::max(a, 0L);
    b = std::min(b, extent);
  }
  b = std::min(b, static_cast<long>(image));
  return {static_cast<std::size_t>(a), static_cast<std::size_t>(std::max(a, b))};
}

std::vector<bool> influence_mask(std::span<const LatentRect> rects, int stages,
                                 std::size_t latent_h, std::size_t latent_w, std::size_t height,
                                 std::size_t width) {
  std::vector<bool> mask(height * width, false);
  for (const auto& r : rects) {
    const auto [y0, y1] = synthesis_footprint(r.y0, r.y1(), stages, latent_h, height);
    const auto [x0, x1] = synthesis_footprint(r.x0, r.x1(), stages, latent_w, width);
    for (std::size_t y = y0; y < y1; ++y)
      for (std::size_t x = x0; x < x1; ++x) mask[y * width + x] = true;
  }
  return mask;
}

}  // namespace flic
