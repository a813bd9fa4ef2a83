#pragma once

// Image-level encode/decode: full, base-only, and ROI-enhanced
// reconstruction from a two-layer container.

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "flic/bitstream.hpp"
#include "flic/image.hpp"
#include "flic/model.hpp"

namespace flic {

/// An immutable model together with its content hash.
struct LoadedModel {
  FlicModel model;
  ModelId id{};

  static LoadedModel from(FlicModel m);
  static LoadedModel load(const std::filesystem::path& path);
};

class ModelMismatchError : public std::runtime_error {
 public:
  ModelMismatchError(const ModelId& stream, const ModelId& loaded);
};

struct EncodeStats {
  std::size_t base_bytes = 0;  // entropy-coded payloads only
  std::size_t enh_bytes = 0;
  std::size_t container_bytes = 0;
  double bpp_base = 0;
  double bpp_enh = 0;
  double bpp_total = 0;      // (base + enh payload bits) / pixels
  double bpp_container = 0;  // whole serialized container
};

EncodeStats container_stats(const bitstream::Container& c, std::size_t container_bytes);

struct EncodeResult {
  bitstream::Container container;
  std::vector<std::uint8_t> bytes;
  EncodeStats stats;
};

/// Analysis, rounding, and per-branch entropy coding. The image must be at
/// least 2^stages on each side.
EncodeResult encode_image(const RgbImage& image, const LoadedModel& lm);
EncodeResult encode_tensor(const Tensor<float>& x, const LoadedModel& lm);

struct DecodeMode {
  enum class Kind { full, base, roi };
  Kind kind = Kind::full;
  std::vector<bitstream::ImageRect> rois;

  static DecodeMode full() { return {Kind::full, {}}; }
  static DecodeMode base() { return {Kind::base, {}}; }
  static DecodeMode roi(std::vector<bitstream::ImageRect> r) { return {Kind::roi, std::move(r)}; }
};

struct LatentSymbols {
  IntTensor low;
  IntTensor high;  // zeros where the mode carries no enhancement
};

/// The quantised latents a decode in `mode` synthesises from. roi mode keeps
/// the enhancement only on latent cells that lie in both the ROI footprint
/// and the transmitted tiles.
LatentSymbols decode_latents(const bitstream::Container& c, const DecodeMode& mode,
                             const LoadedModel& lm);

/// Unclamped synthesis output [3,H,W].
Tensor<float> reconstruct(const LatentSymbols& y, const FlicModel& m, std::size_t height,
                          std::size_t width);

RgbImage decode_image(const bitstream::Container& c, const DecodeMode& mode,
                      const LoadedModel& lm);
RgbImage decode_image(std::span<const std::uint8_t> bytes, const DecodeMode& mode,
                      const LoadedModel& lm);

/// Half-open range of output pixels along one axis that can change when the
/// latent cells [lo, hi) of either branch change; clipped to [0, image).
std::pair<std::size_t, std::size_t> synthesis_footprint(std::size_t lo, std::size_t hi,
                                                        int stages, std::size_t latent,
                                                        std::size_t image);

/// Pixel mask [H*W, row-major] of everything the given latent rectangles can
/// influence through the synthesis network.
std::vector<bool> influence_mask(std::span<const bitstream::LatentRect> rects, int stages,
                                 std::size_t latent_h, std::size_t latent_w, std::size_t height,
                                 std::size_t width);

}  // namespace flic
