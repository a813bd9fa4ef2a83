#include "flic/model.hpp"

#include <charconv>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "flic/bytes.hpp"
#include "flic/errors.hpp"

namespace flic {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

constexpr char kWeightsMagic[4] = {'F', 'L', 'C', 'W'};
constexpr std::uint8_t kWeightsVersion = 1;
constexpr std::uint8_t kDtypeF32 = 0;
const std::string kConfigEntry = "__config__";

}  // namespace

void FlicConfig::validate() const {
  require(stages >= 2 && stages <= 12, "config: stages must be in [2, 12], got " +
                                           std::to_string(stages));
  require(channels.size() == static_cast<std::size_t>(stages),
          "config: expected " + std::to_string(stages) + " channel counts, got " +
              std::to_string(channels.size()));
  for (auto c : channels) require(c > 0, "config: channel counts must be positive");
  require(image_channels > 0, "config: image_channels must be positive");
  require(lrelu_slope > 0 && lrelu_slope < 1, "config: lrelu_slope must be in (0,1)");
}

FlicConfig FlicConfig::toy() { return FlicConfig{}; }

FlicConfig FlicConfig::large() {
  FlicConfig c;
  c.channels = {96, 160, 192, 256};
  return c;
}

std::size_t latent_extent(std::size_t image_extent, int stages) {
  const std::size_t f = std::size_t{1} << stages;
  return (image_extent + f - 1) / f;
}

template <typename T>
FlicModelT<T> init_model(const FlicConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  FlicModelT<T> m;
  m.config = cfg;
  const auto s = static_cast<std::size_t>(cfg.stages);
  std::size_t cin = cfg.image_channels;
  for (std::size_t k = 0; k < s; ++k) {
    m.analysis.push_back(make_octave_layer<T>("analysis" + std::to_string(k), RbDirection::down,
                                              k == 0 ? Boundary::first : Boundary::interior,
                                              cin, cfg.channels[k], rng));
    cin = cfg.channels[k];
  }
  const std::size_t c = cfg.latent_channels();
  m.gdn_low = make_gdn<T>("gdn_low", c);
  m.gdn_high = make_gdn<T>("gdn_high", c);
  m.synth_in_low = make_conv_weight<T>("synthesis_in_low", c, c, 3, rng);
  m.synth_in_high = make_conv_weight<T>("synthesis_in_high", c, c, 3, rng);
  m.igdn_low = make_gdn<T>("igdn_low", c);
  m.igdn_high = make_gdn<T>("igdn_high", c);
  for (std::size_t i = 0; i < s; ++i) {
    const bool last = i + 1 == s;
    const std::size_t in = cfg.channels[s - 1 - i];
    const std::size_t out = last ? cfg.image_channels : cfg.channels[s - 2 - i];
    m.synthesis.push_back(make_octave_layer<T>("synthesis" + std::to_string(i), RbDirection::up,
                                               last ? Boundary::last : Boundary::interior, in,
                                               out, rng));
  }
  m.density_low = entropy::make_density<T>("density_low", c, rng);
  m.density_high = entropy::make_density<T>("density_high", c, rng);
  return m;
}

template <typename T>
FrequencyPair<Var<T>> analyze(const Var<T>& x, const FlicModelT<T>& m, OctaveProbe<T>* probe) {
  const auto& cfg = m.config;
  require(x.value().rank() == 3 && x.shape()[0] == cfg.image_channels,
          "analyze: expected [" + std::to_string(cfg.image_channels) + ",H,W], got " +
              shape_str(x.shape()));
  require(x.shape()[1] >= cfg.downsampling() && x.shape()[2] >= cfg.downsampling(),
          "analyze: image " + shape_str(x.shape()) + " smaller than " +
              std::to_string(cfg.downsampling()) + " pixels per side");
  const T slope = static_cast<T>(cfg.lrelu_slope);
  auto y = weoctconv_first(x, m.analysis.front(), slope);
  for (std::size_t k = 1; k < m.analysis.size(); ++k) y = weoctconv(y, m.analysis[k], slope, probe);
  return {gdn(y.low, m.gdn_low), gdn(y.high, m.gdn_high)};
}

template <typename T>
Var<T> synthesize(const FrequencyPair<Var<T>>& y, const FlicModelT<T>& m, std::size_t out_h,
                  std::size_t out_w) {
  const auto& cfg = m.config;
  const std::size_t c = cfg.latent_channels();
  require(y.low.valid() && y.high.valid() && y.low.value().rank() == 3 &&
              y.low.shape() == y.high.shape() && y.low.shape()[0] == c,
          "synthesize: latents must both be [" + std::to_string(c) + ",h,w]");
  const std::size_t h = y.low.shape()[1], w = y.low.shape()[2];
  const std::size_t f = cfg.downsampling();
  if (out_h == 0) out_h = h * f;
  if (out_w == 0) out_w = w * f;
  require(latent_extent(out_h, cfg.stages) == h && latent_extent(out_w, cfg.stages) == w,
          "synthesize: output " + std::to_string(out_h) + "x" + std::to_string(out_w) +
              " inconsistent with latent grid " + std::to_string(h) + "x" + std::to_string(w));
  const T slope = static_cast<T>(cfg.lrelu_slope);
  FrequencyPair<Var<T>> z{igdn(conv2d(y.low, m.synth_in_low.var, 1, 1), m.igdn_low),
                          igdn(conv2d(y.high, m.synth_in_high.var, 1, 1), m.igdn_high)};
  for (std::size_t i = 0; i + 1 < m.synthesis.size(); ++i) z = tweoctconv(z, m.synthesis[i], slope);
  auto out = tweoctconv_last(z, m.synthesis.back(), slope);
  if (out_h == h * f && out_w == w * f) return out;
  return crop(out, out_h, out_w);
}

// ---- weight files ----

namespace {

void write_entry(ByteWriter& w, const std::string& name, const Shape& shape,
                 std::span<const float> values) {
  require(name.size() <= 0xffff, "weight name too long");
  w.u16(static_cast<std::uint16_t>(name.size()));
  w.str(name);
  w.u8(kDtypeF32);
  w.u8(static_cast<std::uint8_t>(shape.size()));
  for (auto d : shape) w.u32(static_cast<std::uint32_t>(d));
  for (float v : values) w.f32(v);
}

struct RawEntry {
  Shape shape;
  std::vector<float> values;
  std::size_t offset = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize_weights(const FlicModel& m) {
  ByteWriter w;
  w.bytes(std::span(reinterpret_cast<const std::uint8_t*>(kWeightsMagic), 4));
  w.u8(kWeightsVersion);
  std::uint32_t count = 1;
  m.for_each_parameter([&](const Parameter<float>&) { ++count; });
  w.u32(count);
  std::vector<float> cfg{static_cast<float>(m.config.stages),
                         static_cast<float>(m.config.image_channels),
                         static_cast<float>(m.config.lrelu_slope)};
  for (auto c : m.config.channels) cfg.push_back(static_cast<float>(c));
  write_entry(w, kConfigEntry, Shape{cfg.size()}, cfg);
  m.for_each_parameter([&](const Parameter<float>& p) {
    write_entry(w, p.name, p.shape(), p.value().values());
  });
  return w.take();
}

FlicModel parse_weights(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  const auto magic = r.bytes(4);
  if (std::memcmp(magic.data(), kWeightsMagic, 4) != 0) {
    throw FormatError("weights: bad magic", 0);
  }
  const std::uint8_t version = r.u8();
  if (version != kWeightsVersion) {
    throw FormatError("weights: unsupported version " + std::to_string(version), 4);
  }
  const std::uint32_t count = r.u32();
  std::map<std::string, RawEntry> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t at = r.offset();
    const std::uint16_t name_len = r.u16();
    std::string name = r.str(name_len);
    const std::size_t dtype_at = r.offset();
    const std::uint8_t dtype = r.u8();
    if (dtype != kDtypeF32) {
      throw FormatError("weights: unknown dtype code " + std::to_string(dtype) + " for '" +
                            name + "'",
                        dtype_at);
    }
    const std::uint8_t rank = r.u8();
    RawEntry e;
    e.offset = at;
    std::uint64_t numel = 1;
    for (std::uint8_t d = 0; d < rank; ++d) {
      const std::uint32_t dim = r.u32();
      if (dim == 0) throw FormatError("weights: zero dimension in '" + name + "'", r.offset() - 4);
      e.shape.push_back(dim);
      numel *= dim;
      if (numel * 4 > r.remaining()) {
        throw FormatError("weights: tensor '" + name + "' overruns the file", r.offset());
      }
    }
    e.values.resize(numel);
    for (auto& v : e.values) v = r.f32();
    if (!entries.emplace(name, std::move(e)).second) {
      throw FormatError("weights: duplicate entry '" + name + "'", at);
    }
  }
  if (!r.at_end()) throw FormatError("weights: trailing bytes", r.offset());

  const auto cfg_it = entries.find(kConfigEntry);
  if (cfg_it == entries.end()) throw FormatError("weights: missing " + kConfigEntry, 0);
  const auto& cv = cfg_it->second.values;
  if (cfg_it->second.shape.size() != 1 || cv.size() < 5) {
    throw FormatError("weights: malformed " + kConfigEntry, cfg_it->second.offset);
  }
  FlicConfig cfg;
  cfg.stages = static_cast<int>(cv[0]);
  cfg.image_channels = static_cast<std::size_t>(cv[1]);
  {
    // Shortest decimal form of the stored float, so 0.01 reads back as 0.01.
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, cv[2]);
    std::from_chars(buf, res.ptr, cfg.lrelu_slope);
  }
  cfg.channels.clear();
  for (std::size_t i = 3; i < cv.size(); ++i) {
    if (!(cv[i] >= 1 && cv[i] <= 65535)) {
      throw FormatError("weights: invalid channel count in " + kConfigEntry, cfg_it->second.offset);
    }
    cfg.channels.push_back(static_cast<std::size_t>(cv[i]));
  }
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("weights: ") + e.what(), cfg_it->second.offset);
  }

  // Build the expected structure, then fill every tensor by name.
  FlicModel m = init_model<float>(cfg, 0);
  std::size_t used = 1;
  m.for_each_parameter([&](Parameter<float>& p) {
    const auto it = entries.find(p.name);
    if (it == entries.end()) throw FormatError("weights: missing tensor '" + p.name + "'", 0);
    if (it->second.shape != p.shape()) {
      throw FormatError("weights: tensor '" + p.name + "' has shape " +
                            shape_str(it->second.shape) + ", expected " + shape_str(p.shape()),
                        it->second.offset);
    }
    p = Parameter<float>(p.name, Tensor<float>(it->second.shape, std::move(it->second.values)));
    ++used;
  });
  if (used != entries.size()) throw FormatError("weights: unexpected extra tensors", 0);
  return m;
}

void save_weights(const FlicModel& m, const std::filesystem::path& path) {
  const auto bytes = serialize_weights(m);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

FlicModel load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return parse_weights(bytes);
}

ModelId model_id_of_bytes(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  ModelId id;
  for (int i = 0; i < 8; ++i) id[i] = static_cast<std::uint8_t>(h >> (8 * i));
  return id;
}

ModelId model_id(const FlicModel& m) { return model_id_of_bytes(serialize_weights(m)); }

std::string model_id_hex(const ModelId& id) {
  std::string s;
  char buf[3];
  for (auto b : id) {
    std::snprintf(buf, sizeof buf, "%02x", b);
    s += buf;
  }
  return s;
}

#define FLIC_INSTANTIATE(T)                                                              \
  template FlicModelT<T> init_model<T>(const FlicConfig&, std::uint64_t);                \
  template FrequencyPair<Var<T>> analyze<T>(const Var<T>&, const FlicModelT<T>&,         \
                                            OctaveProbe<T>*);                            \
  template Var<T> synthesize<T>(const FrequencyPair<Var<T>>&, const FlicModelT<T>&,      \
                                std::size_t, std::size_t);

FLIC_INSTANTIATE(float)
FLIC_INSTANTIATE(double)

#undef FLIC_INSTANTIATE

}  // namespace flic
