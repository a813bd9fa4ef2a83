#include "flic/bitstream.hpp"

#include <cstring>
#include <stdexcept>
#include <string>

#include "flic/bytes.hpp"
#include "flic/errors.hpp"

namespace flic::bitstream {

namespace {

constexpr char kMagic[4] = {'F', 'L', 'I', 'C'};
constexpr std::uint8_t kKnownFlags = kFlagBase | kFlagEnhancement | kFlagTiled;

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

void check_chunk_channels(const entropy::CodedChunk& chunk, std::size_t expected,
                          const char* what, std::size_t offset) {
  if (chunk.ranges.size() != expected) {
    throw FormatError(std::string(what) + " chunk has " + std::to_string(chunk.ranges.size()) +
                          " channels, header says " + std::to_string(expected),
                      offset);
  }
}

bool tile_in_bounds(const LatentRect& r, const Header& h) {
  return r.h > 0 && r.w > 0 && r.y1() <= h.latent_h && r.x1() <= h.latent_w;
}

}  // namespace

std::uint8_t Container::flags() const {
  std::uint8_t f = 0;
  if (base) f |= kFlagBase;
  if (has_enhancement()) f |= kFlagEnhancement;
  if (is_tiled()) f |= kFlagTiled;
  return f;
}

std::optional<int> infer_stages(const Header& h) {
  for (int s = 1; s <= 16; ++s) {
    if (latent_extent(h.width, s) == h.latent_w && latent_extent(h.height, s) == h.latent_h) {
      return s;
    }
  }
  return std::nullopt;
}

std::vector<std::uint8_t> serialize(const Container& c) {
  const Header& h = c.header;
  require(infer_stages(h).has_value(), "serialize: header dimensions are inconsistent");
  ByteWriter w;
  w.bytes(std::span(reinterpret_cast<const std::uint8_t*>(kMagic), 4));
  w.u8(kVersion);
  w.u8(c.flags());
  w.u32(h.width);
  w.u32(h.height);
  w.u16(h.latent_h);
  w.u16(h.latent_w);
  w.u16(h.channels_low);
  w.u16(h.channels_high);
  w.bytes(h.model_id);
  if (c.base) {
    require(c.base->ranges.size() == h.channels_low, "serialize: base channel count mismatch");
    entropy::write_chunk(w, *c.base);
  }
  if (const auto* full = std::get_if<entropy::CodedChunk>(&c.enhancement)) {
    require(full->ranges.size() == h.channels_high,
            "serialize: enhancement channel count mismatch");
    entropy::write_chunk(w, *full);
  } else if (const auto* tiles = std::get_if<std::vector<RoiTile>>(&c.enhancement)) {
    require(tiles->size() <= 0xffff, "serialize: too many tiles");
    w.u16(static_cast<std::uint16_t>(tiles->size()));
    for (std::size_t i = 0; i < tiles->size(); ++i) {
      const auto& t = (*tiles)[i];
      require(tile_in_bounds(t.rect, h), "serialize: tile outside the latent grid");
      require(t.chunk.ranges.size() == h.channels_high, "serialize: tile channel count mismatch");
      for (std::size_t j = 0; j < i; ++j) {
        require(!t.rect.overlaps((*tiles)[j].rect), "serialize: tiles overlap");
      }
      w.u16(t.rect.y0);
      w.u16(t.rect.x0);
      w.u16(t.rect.h);
      w.u16(t.rect.w);
      entropy::write_chunk(w, t.chunk);
    }
  }
  return w.take();
}

Container parse(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  const auto magic = r.bytes(4);
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw FormatError("bad magic", 0);
  const std::uint8_t version = r.u8();
  if (version != kVersion) {
    throw FormatError("unsupported version " + std::to_string(version), 4);
  }
  const std::uint8_t flags = r.u8();
  if (flags & ~kKnownFlags) throw FormatError("unknown flag bits", 5);
  if ((flags & kFlagTiled) && !(flags & kFlagEnhancement)) {
    throw FormatError("tiled flag without enhancement flag", 5);
  }

  Container c;
  Header& h = c.header;
  h.width = r.u32();
  h.height = r.u32();
  h.latent_h = r.u16();
  h.latent_w = r.u16();
  h.channels_low = r.u16();
  h.channels_high = r.u16();
  const auto id = r.bytes(8);
  std::copy(id.begin(), id.end(), h.model_id.begin());
  if (h.width == 0 || h.height == 0 || h.latent_h == 0 || h.latent_w == 0) {
    throw FormatError("zero image or latent dimension", 6);
  }
  if (!infer_stages(h)) throw FormatError("latent grid inconsistent with image size", 14);
  if (h.channels_low == 0 || h.channels_high == 0) {
    throw FormatError("zero channel count", 18);
  }

  if (flags & kFlagBase) {
    const std::size_t at = r.offset();
    c.base = entropy::read_chunk(r);
    check_chunk_channels(*c.base, h.channels_low, "base", at);
  }
  if (flags & kFlagEnhancement) {
    if (!(flags & kFlagTiled)) {
      const std::size_t at = r.offset();
      auto chunk = entropy::read_chunk(r);
      check_chunk_channels(chunk, h.channels_high, "enhancement", at);
      c.enhancement = std::move(chunk);
    } else {
      const std::uint16_t count = r.u16();
      std::vector<RoiTile> tiles;
      for (std::uint16_t i = 0; i < count; ++i) {
        const std::size_t at = r.offset();
        RoiTile t;
        t.rect.y0 = r.u16();
        t.rect.x0 = r.u16();
        t.rect.h = r.u16();
        t.rect.w = r.u16();
        if (!tile_in_bounds(t.rect, h)) throw FormatError("tile outside the latent grid", at);
        for (const auto& prev : tiles) {
          if (prev.rect.overlaps(t.rect)) throw FormatError("overlapping tiles", at);
        }
        const std::size_t chunk_at = r.offset();
        t.chunk = entropy::read_chunk(r);
        check_chunk_channels(t.chunk, h.channels_high, "tile", chunk_at);
        tiles.push_back(std::move(t));
      }
      c.enhancement = std::move(tiles);
    }
  }
  if (!r.at_end()) throw FormatError("trailing bytes after container", r.offset());
  return c;
}

LatentRect map_to_latent(const ImageRect& r, int stages) {
  const std::uint64_t f = std::uint64_t{1} << stages;
  const std::uint64_t y0 = r.y / f, x0 = r.x / f;
  const std::uint64_t y1 = (std::uint64_t{r.y} + r.h + f - 1) / f;
  const std::uint64_t x1 = (std::uint64_t{r.x} + r.w + f - 1) / f;
  require(y1 <= 0xffff && x1 <= 0xffff, "map_to_latent: rectangle beyond 16-bit latent range");
  return {static_cast<std::uint16_t>(y0), static_cast<std::uint16_t>(x0),
          static_cast<std::uint16_t>(y1 - y0), static_cast<std::uint16_t>(x1 - x0)};
}

std::vector<LatentRect> mask_to_rects(const std::vector<bool>& mask, std::size_t h,
                                      std::size_t w) {
  require(mask.size() == h * w, "mask_to_rects: mask size mismatch");
  std::vector<bool> taken(mask.size(), false);
  std::vector<LatentRect> out;
  auto free_cell = [&](std::size_t y, std::size_t x) {
    return mask[y * w + x] && !taken[y * w + x];
  };
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      if (!free_cell(y, x)) continue;
      std::size_t x1 = x;
      while (x1 < w && free_cell(y, x1)) ++x1;
      std::size_t y1 = y + 1;
      for (; y1 < h; ++y1) {
        bool full = true;
        for (std::size_t xx = x; xx < x1 && full; ++xx) full = free_cell(y1, xx);
        if (!full) break;
      }
      for (std::size_t yy = y; yy < y1; ++yy)
        for (std::size_t xx = x; xx < x1; ++xx) taken[yy * w + xx] = true;
      out.push_back({static_cast<std::uint16_t>(y), static_cast<std::uint16_t>(x),
                     static_cast<std::uint16_t>(y1 - y), static_cast<std::uint16_t>(x1 - x)});
    }
  }
  return out;
}

std::vector<LatentRect> normalize_rois(std::span<const ImageRect> rois, std::uint32_t width,
                                       std::uint32_t height, int stages) {
  const std::size_t lh = latent_extent(height, stages), lw = latent_extent(width, stages);
  std::vector<bool> mask(lh * lw, false);
  for (const auto& r : rois) {
    const std::string desc = "(" + std::to_string(r.x) + "," + std::to_string(r.y) + "," +
                             std::to_string(r.w) + "," + std::to_string(r.h) + ")";
    require(r.w > 0 && r.h > 0, "ROI " + desc + " has zero area");
    require(std::uint64_t{r.x} + r.w <= width && std::uint64_t{r.y} + r.h <= height,
            "ROI " + desc + " exceeds the " + std::to_string(width) + "x" +
                std::to_string(height) + " image");
    const auto l = map_to_latent(r, stages);
    for (std::size_t y = l.y0; y < l.y1(); ++y)
      for (std::size_t x = l.x0; x < l.x1(); ++x) mask[y * lw + x] = true;
  }
  return mask_to_rects(mask, lh, lw);
}

IntTensor slice(const IntTensor& y, const LatentRect& r) {
  require(y.rank() == 3 && r.y1() <= y.dim(1) && r.x1() <= y.dim(2) && r.area() > 0,
          "slice: rectangle outside tensor " + shape_str(y.shape()));
  const std::size_t c = y.dim(0);
  IntTensor out(Shape{c, r.h, r.w});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < r.h; ++i)
      for (std::size_t j = 0; j < r.w; ++j) out.at(ch, i, j) = y.at(ch, r.y0 + i, r.x0 + j);
  return out;
}

std::vector<RoiTile> encode_tiles(const IntTensor& y, std::span<const LatentRect> rects,
                                  const entropy::FactorizedDensity<float>& density) {
  std::vector<RoiTile> tiles;
  tiles.reserve(rects.size());
  for (const auto& r : rects) tiles.push_back({r, entropy::encode_latent(slice(y, r), density)});
  return tiles;
}

IntTensor decode_base(const Container& c, const entropy::FactorizedDensity<float>& density) {
  require(c.base.has_value(), "container has no base layer");
  const Header& h = c.header;
  return entropy::decode_latent(*c.base, density, Shape{h.channels_low, h.latent_h, h.latent_w});
}

IntTensor decode_enhancement(const Container& c,
                             const entropy::FactorizedDensity<float>& density) {
  const Header& h = c.header;
  const Shape shape{h.channels_high, h.latent_h, h.latent_w};
  if (const auto* full = std::get_if<entropy::CodedChunk>(&c.enhancement)) {
    return entropy::decode_latent(*full, density, shape);
  }
  const auto* tiles = std::get_if<std::vector<RoiTile>>(&c.enhancement);
  require(tiles != nullptr, "container has no enhancement layer");
  IntTensor out(shape);
  for (const auto& t : *tiles) {
    const auto part = entropy::decode_latent(t.chunk, density,
                                             Shape{h.channels_high, t.rect.h, t.rect.w});
    for (std::size_t ch = 0; ch < h.channels_high; ++ch)
      for (std::size_t i = 0; i < t.rect.h; ++i)
        for (std::size_t j = 0; j < t.rect.w; ++j)
          out.at(ch, t.rect.y0 + i, t.rect.x0 + j) = part.at(ch, i, j);
  }
  return out;
}

Container extract_roi(const Container& c, std::span<const ImageRect> rois, const FlicModel& m) {
  require(std::holds_alternative<entropy::CodedChunk>(c.enhancement),
          "extract_roi: container must carry the full enhancement layer");
  require(!rois.empty(), "extract_roi: no regions given");
  const Header& h = c.header;
  const int stages = m.config.stages;
  require(latent_extent(h.width, stages) == h.latent_w &&
              latent_extent(h.height, stages) == h.latent_h,
          "extract_roi: container does not match the model's stage count");
  const auto rects = normalize_rois(rois, h.width, h.height, stages);
  const auto yh = decode_enhancement(c, m.density_high);
  Container out;
  out.header = h;
  out.base = c.base;
  out.enhancement = encode_tiles(yh, rects, m.density_high);
  return out;
}

}  // namespace flic::bitstream
