#pragma once

// Two-layer container: header, base chunk (low branch), and the enhancement
// (high branch) as either one chunk or independently decodable ROI tiles.
//
// Layout, all integers little-endian:
//   "FLIC" | version u8 | flags u8 | W u32 | H u32 | h u16 | w u16 |
//   C_L u16 | C_H u16 | model id 8 bytes
//   [base chunk]                               if flags bit0
//   [enhancement chunk]                        if bit1 and not bit2
//   [tile count u16, {y0 x0 th tw u16, chunk}] if bit1 and bit2

#include <cstdint>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "flic/entropy.hpp"
#include "flic/model.hpp"

namespace flic::bitstream {

inline constexpr std::uint8_t kVersion = 1;
inline constexpr std::uint8_t kFlagBase = 1u << 0;
inline constexpr std::uint8_t kFlagEnhancement = 1u << 1;
inline constexpr std::uint8_t kFlagTiled = 1u << 2;
inline constexpr std::size_t kHeaderSize = 30;

struct Header {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::uint16_t latent_h = 0;
  std::uint16_t latent_w = 0;
  std::uint16_t channels_low = 0;
  std::uint16_t channels_high = 0;
  ModelId model_id{};
  bool operator==(const Header&) const = default;
};

/// Half-open latent-grid rectangle [y0, y0+h) x [x0, x0+w).
struct LatentRect {
  std::uint16_t y0 = 0, x0 = 0, h = 0, w = 0;

  std::size_t y1() const { return std::size_t{y0} + h; }
  std::size_t x1() const { return std::size_t{x0} + w; }
  std::size_t area() const { return std::size_t{h} * w; }
  bool contains(std::size_t y, std::size_t x) const {
    return y >= y0 && y < y1() && x >= x0 && x < x1();
  }
  bool overlaps(const LatentRect& o) const {
    return y0 < o.y1() && o.y0 < y1() && x0 < o.x1() && o.x0 < x1();
  }
  bool operator==(const LatentRect&) const = default;
};

/// Image-space rectangle in pixels.
struct ImageRect {
  std::uint32_t x = 0, y = 0, w = 0, h = 0;
  bool operator==(const ImageRect&) const = default;
};

struct RoiTile {
  LatentRect rect;
  entropy::CodedChunk chunk;
  bool operator==(const RoiTile&) const = default;
};

using Enhancement = std::variant<std::monostate, entropy::CodedChunk, std::vector<RoiTile>>;

struct Container {
  Header header;
  std::optional<entropy::CodedChunk> base;
  Enhancement enhancement;

  bool has_enhancement() const { return !std::holds_alternative<std::monostate>(enhancement); }
  bool is_tiled() const { return std::holds_alternative<std::vector<RoiTile>>(enhancement); }
  std::uint8_t flags() const;
  bool operator==(const Container&) const = default;
};

std::vector<std::uint8_t> serialize(const Container& c);

/// Total over arbitrary input: returns a container or throws FormatError
/// with the offending byte offset.
Container parse(std::span<const std::uint8_t> bytes);

/// Smallest stage count consistent with the header dimensions, or nullopt.
std::optional<int> infer_stages(const Header& h);

/// floor(start / 2^stages) .. ceil(end / 2^stages) on both axes.
LatentRect map_to_latent(const ImageRect& r, int stages);

/// Validates the rectangles against the image and converts them to a set of
/// pairwise disjoint latent rectangles covering exactly the union of their
/// latent footprints. Throws std::invalid_argument for empty or
/// out-of-bounds rectangles.
std::vector<LatentRect> normalize_rois(std::span<const ImageRect> rois, std::uint32_t width,
                                       std::uint32_t height, int stages);

/// Decomposes a latent mask [h*w, row-major] into disjoint rectangles.
std::vector<LatentRect> mask_to_rects(const std::vector<bool>& mask, std::size_t h,
                                      std::size_t w);

/// Slice of a [C,h,w] tensor.
IntTensor slice(const IntTensor& y, const LatentRect& r);

/// Encodes each rectangle of `y` [C,h,w] as an independent tile.
std::vector<RoiTile> encode_tiles(const IntTensor& y, std::span<const LatentRect> rects,
                                  const entropy::FactorizedDensity<float>& density);

/// The enhancement latent implied by the container: the full tensor for a
/// full chunk, tiles placed into zeros for a tiled one.
IntTensor decode_enhancement(const Container& c, const entropy::FactorizedDensity<float>& density);
IntTensor decode_base(const Container& c, const entropy::FactorizedDensity<float>& density);

/// Re-encodes the full enhancement of `c` as tiles covering `rois`.
Container extract_roi(const Container& c, std::span<const ImageRect> rois, const FlicModel& m);

}  // namespace flic::bitstream
