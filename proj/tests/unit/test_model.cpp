#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "flic/errors.hpp"
#include "flic/model.hpp"
#include "flic_test.hpp"

using namespace flic;
using flic::test::random_tensor;

namespace {
using VF = Var<float>;

// Parameter census from the layer definitions, written out independently of
// the model code.
std::size_t expected_parameters(const std::vector<std::size_t>& ch, std::size_t img = 3) {
  std::size_t n = 0, cin = img;
  for (std::size_t k = 0; k < ch.size(); ++k) {
    const std::size_t c = ch[k];
    const std::size_t rb = c * cin * 9 + c * c * 9 + c * cin;
    n += k == 0 ? rb + c * cin * 9 : 2 * rb + 2 * c * cin * 9;
    cin = c;
  }
  const std::size_t lc = ch.back();
  n += 4 * (lc + lc * lc) + 2 * lc * lc * 9;
  for (std::size_t i = 0; i < ch.size(); ++i) {
    const bool last = i + 1 == ch.size();
    const std::size_t in = ch[ch.size() - 1 - i];
    const std::size_t out = last ? img : ch[ch.size() - 2 - i];
    const std::size_t rb = 4 * out * in * 9 + out * out * 9 + 4 * out * in * 9;
    n += last ? rb + 4 * out * in * 9 : 2 * rb + 8 * out * in * 9;
  }
  // Density: matrices 3+9+9+3, biases 3+3+3+1, gates 3+3+3.
  n += 2 * lc * (24 + 10 + 9);
  return n;
}

const FlicModel& toy_model() {
  static const FlicModel m = init_model<float>(FlicConfig::toy(), 1);
  return m;
}

std::vector<std::uint8_t> read_all(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}
}  // namespace

TEST_CASE("config validation") {
  FlicConfig c;
  CHECK_NOTHROW(c.validate());
  c.stages = 1;
  c.channels = {8};
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = FlicConfig{};
  c.channels = {8, 8, 8};
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c.channels = {8, 0, 8, 8};
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  CHECK(FlicConfig{}.downsampling() == 16);
  CHECK(latent_extent(64, 4) == 4);
  CHECK(latent_extent(65, 4) == 5);
}

TEST_CASE("toy analysis and synthesis shapes") {
  const auto& m = toy_model();
  Rng rng(2);
  auto x = VF::constant(random_tensor<float>(rng, {3, 64, 64}, 0, 1));
  const auto y = analyze(x, m);
  CHECK(y.low.shape() == Shape{128, 4, 4});
  CHECK(y.high.shape() == Shape{128, 4, 4});
  CHECK(synthesize(y, m).shape() == Shape{3, 64, 64});

  const auto again = analyze(x, m);
  CHECK(again.low.value() == y.low.value());
  CHECK(again.high.value() == y.high.value());
  CHECK(synthesize(again, m).value() == synthesize(y, m).value());
}

TEST_CASE("shape identity across image sizes including odd ones") {
  const auto& m = toy_model();
  Rng rng(3);
  for (std::size_t h : {64, 96, 128, 65, 97, 127}) {
    for (std::size_t w : {64, 96, 128, 65, 97, 127}) {
      if ((h + w) % 3 != 0 && !(h == 64 && w == 64) && !(h == 127 && w == 65)) continue;
      CAPTURE(h);
      CAPTURE(w);
      auto x = VF::constant(random_tensor<float>(rng, {3, h, w}, 0, 1));
      const auto y = analyze(x, m);
      CHECK(y.low.shape() == Shape{128, latent_extent(h, 4), latent_extent(w, 4)});
      CHECK(synthesize(y, m, h, w).shape() == Shape{3, h, w});
    }
  }
}

TEST_CASE("argument checks") {
  const auto& m = toy_model();
  CHECK_THROWS_AS(analyze(VF::constant(Tensor<float>(Shape{3, 8, 64})), m), std::invalid_argument);
  CHECK_THROWS_AS(analyze(VF::constant(Tensor<float>(Shape{1, 64, 64})), m), std::invalid_argument);
  FrequencyPair<VF> bad{VF::constant(Tensor<float>(Shape{64, 4, 4})),
                        VF::constant(Tensor<float>(Shape{64, 4, 4}))};
  CHECK_THROWS_AS(synthesize(bad, m), std::invalid_argument);
  FrequencyPair<VF> ok{VF::constant(Tensor<float>(Shape{128, 4, 4})),
                       VF::constant(Tensor<float>(Shape{128, 4, 4}))};
  CHECK_THROWS_AS(synthesize(ok, m, 40, 64), std::invalid_argument);
}

TEST_CASE("constant gray input: high-pass paths carry nothing") {
  const auto& m = toy_model();
  auto x = VF::constant(Tensor<float>(Shape{3, 64, 64}, 0.5f));
  OctaveProbe<float> probe;
  (void)analyze(x, m, &probe);
  // The first layer has no L input, so it records no L->H path at all.
  REQUIRE(probe.hh_filtered.size() == m.analysis.size() - 1);
  // The second layer's L input is Conv3(LL(x)) of a constant image. It is
  // constant away from the zero-padded border, so HH vanishes exactly there.
  const auto& hh = probe.hh_filtered[0];
  const std::size_t h = hh.dim(1), w = hh.dim(2);
  for (std::size_t c = 0; c < hh.dim(0); ++c)
    for (std::size_t i = 1; i + 1 < h; ++i)
      for (std::size_t j = 1; j + 1 < w; ++j) CHECK(hh.at(c, i, j) == 0.0f);
}

TEST_CASE("initialisation is deterministic and the census matches") {
  const auto a = init_model<float>(FlicConfig::toy(), 42);
  const auto b = init_model<float>(FlicConfig::toy(), 42);
  const auto c = init_model<float>(FlicConfig::toy(), 43);
  CHECK(serialize_weights(a) == serialize_weights(b));
  CHECK(serialize_weights(a) != serialize_weights(c));
  CHECK(a.parameter_count() == expected_parameters({32, 64, 96, 128}));
  CHECK(a.parameter_count() == 6387953);
  MESSAGE("toy parameters: " << a.parameter_count());

  // One GDN per branch after the analysis stack, and no conv bias anywhere.
  std::size_t gdn_count = 0, conv_count = 0;
  a.for_each_parameter([&](const Parameter<float>& p) {
    if (p.name.rfind("gdn_", 0) == 0 && p.name.find(".beta") != std::string::npos) ++gdn_count;
    if (p.name.rfind("analysis", 0) == 0 || p.name.rfind("synthesis", 0) == 0) {
      CHECK(p.shape().size() == 4);
      ++conv_count;
    }
  });
  CHECK(gdn_count == 2);
  CHECK(conv_count > 0);

  std::set<std::string> names;
  a.for_each_parameter([&](const Parameter<float>& p) { CHECK(names.insert(p.name).second); });
}

TEST_CASE("large preset lands near 30M parameters") {
  const auto cfg = FlicConfig::large();
  const std::size_t n = expected_parameters(cfg.channels);
  const auto m = init_model<float>(cfg, 0);
  CHECK(m.parameter_count() == n);
  MESSAGE("large parameters: " << n);
  CHECK(std::abs(double(n) - 30e6) <= 0.1 * 30e6);
}

TEST_CASE("weights round trip bit-exact") {
  const auto& m = toy_model();
  const auto bytes = serialize_weights(m);
  const auto back = parse_weights(bytes);
  CHECK(back.config == m.config);
  CHECK(serialize_weights(back) == bytes);
  CHECK(model_id(back) == model_id(m));

  const auto dir = std::filesystem::temp_directory_path();
  const auto path = dir / "flic_test_weights.flcw";
  save_weights(m, path);
  CHECK(read_all(path) == bytes);
  CHECK(serialize_weights(load_weights(path)) == bytes);
  std::filesystem::remove(path);
}

TEST_CASE("weights format errors") {
  FlicConfig small;
  small.stages = 2;
  small.channels = {4, 8};
  const auto m = init_model<float>(small, 5);
  const auto bytes = serialize_weights(m);
  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{9}, bytes.size() / 2, bytes.size() - 1}) {
    CHECK_THROWS_AS(parse_weights(std::span(bytes.data(), cut)), FormatError);
  }
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(parse_weights(bad_magic), FormatError);
  auto bad_version = bytes;
  bad_version[4] = 9;
  CHECK_THROWS_AS(parse_weights(bad_version), FormatError);

  // The first entry's dtype byte sits right after its name.
  auto bad_dtype = bytes;
  const std::size_t name_len = bytes[9] | (bytes[10] << 8);
  bad_dtype[11 + name_len] = 7;
  try {
    (void)parse_weights(bad_dtype);
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("dtype code 7") != std::string::npos);
    CHECK(e.offset() == 11 + name_len);
  }
}

TEST_CASE("model ids differ between models") {
  const auto a = init_model<float>(FlicConfig{2, {4, 8}}, 1);
  const auto b = init_model<float>(FlicConfig{2, {4, 8}}, 2);
  CHECK(model_id(a) != model_id(b));
  CHECK(model_id_hex(model_id(a)).size() == 16);
  // FNV-1a reference values.
  const std::uint8_t a_byte[] = {'a'};
  const auto empty = model_id_of_bytes(std::span<const std::uint8_t>());
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(empty[i]) << (8 * i);
  CHECK(v == 0xcbf29ce484222325ull);
  const auto ida = model_id_of_bytes(a_byte);
  v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(ida[i]) << (8 * i);
  CHECK(v == 0xaf63dc4c8601ec8cull);
}

TEST_CASE("cast and clone preserve values") {
  FlicConfig small{2, {4, 8}};
  const auto m = init_model<float>(small, 9);
  const auto d = m.cast<double>();
  const auto back = d.cast<float>();
  CHECK(serialize_weights(back) == serialize_weights(m));
  auto c = m.clone();
  c.synth_in_low.var.mutable_value()[0] += 1.0f;
  CHECK(m.synth_in_low.value()[0] != c.synth_in_low.value()[0]);
}
