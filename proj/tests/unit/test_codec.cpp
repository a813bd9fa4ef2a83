#include <doctest.h>

#include <filesystem>

#include "flic/codec.hpp"
#include "flic_test.hpp"
#include "model_fixtures.hpp"

using namespace flic;
using bitstream::ImageRect;

namespace {

FlicConfig tiny_config() {
  FlicConfig cfg;
  cfg.stages = 2;
  cfg.channels = {6, 8};
  return cfg;
}

const LoadedModel& tiny_model() {
  static const LoadedModel lm = LoadedModel::from(test::active_model(tiny_config(), 21));
  return lm;
}

RgbImage random_image(Rng& rng, std::uint32_t w, std::uint32_t h) {
  // smooth gradients plus noise, so latents are not trivially zero
  RgbImage img(w, h);
  for (std::uint32_t y = 0; y < h; ++y)
    for (std::uint32_t x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        const double v = 40.0 + 3.0 * x + 2.0 * y + 30.0 * c + 20.0 * uniform01(rng);
        img.at(y, x, c) = static_cast<std::uint8_t>(std::min(255.0, v));
      }
  return img;
}

}  // namespace

TEST_CASE("full decode equals synthesis of the rounded analysis") {
  const auto& lm = tiny_model();
  Rng rng(1);
  const auto img = random_image(rng, 27, 22);
  const auto enc = encode_image(img, lm);
  const auto x = Var<float>::constant(to_tensor(img));
  const auto y = analyze(x, lm.model);
  FrequencyPair<Var<float>> q{
      Var<float>::constant(entropy::round_half_away(y.low.value())),
      Var<float>::constant(entropy::round_half_away(y.high.value()))};
  const auto expect = to_image(synthesize(q, lm.model, 22, 27).value());
  const auto got = decode_image(enc.bytes, DecodeMode::full(), lm);
  CHECK(got.width == 27);
  CHECK(got.height == 22);
  CHECK(got == expect);
}

TEST_CASE("rates are payload bits over pixels") {
  const auto& lm = tiny_model();
  Rng rng(2);
  const auto enc = encode_image(random_image(rng, 32, 20), lm);
  const auto& c = enc.container;
  const auto base = c.base->payload.size();
  const auto enh = std::get<entropy::CodedChunk>(c.enhancement).payload.size();
  CHECK(enc.stats.bpp_total == doctest::Approx(8.0 * (base + enh) / 640.0).epsilon(1e-15));
  CHECK(enc.stats.bpp_base + enc.stats.bpp_enh == doctest::Approx(enc.stats.bpp_total));
  CHECK(enc.stats.container_bytes == enc.bytes.size());
  CHECK(enc.stats.bpp_container > enc.stats.bpp_total);
}

TEST_CASE("encoding is deterministic") {
  const auto& lm = tiny_model();
  Rng rng(3);
  const auto img = random_image(rng, 16, 16);
  CHECK(encode_image(img, lm).bytes == encode_image(img, lm).bytes);
  const auto c = bitstream::parse(encode_image(img, lm).bytes);
  const auto a = decode_latents(c, DecodeMode::full(), lm);
  const auto b = decode_latents(c, DecodeMode::full(), lm);
  CHECK(a.low == b.low);
  CHECK(a.high == b.high);
}

TEST_CASE("base decode equals full synthesis with a zero enhancement") {
  const auto& lm = tiny_model();
  Rng rng(4);
  const auto enc = encode_image(random_image(rng, 24, 24), lm);
  auto y = decode_latents(enc.container, DecodeMode::full(), lm);
  y.high.fill(0);
  const auto expect = to_image(reconstruct(y, lm.model, 24, 24));
  CHECK(decode_image(enc.container, DecodeMode::base(), lm) == expect);
  CHECK_FALSE(decode_image(enc.container, DecodeMode::full(), lm) == expect);

  auto base_only = enc.container;
  base_only.enhancement = std::monostate{};
  CHECK(decode_image(base_only, DecodeMode::base(), lm) == expect);
  CHECK_THROWS_AS(decode_image(base_only, DecodeMode::full(), lm), std::invalid_argument);
  CHECK_THROWS_AS(decode_image(base_only, DecodeMode::roi({{0, 0, 4, 4}}), lm),
                  std::invalid_argument);
}

TEST_CASE("ROI decode: full cover equals full, outside the footprint equals base") {
  const auto& lm = tiny_model();
  Rng rng(5);
  const std::uint32_t W = 48, H = 40;
  const auto enc = encode_image(random_image(rng, W, H), lm);
  const auto full = decode_image(enc.container, DecodeMode::full(), lm);
  const auto base = decode_image(enc.container, DecodeMode::base(), lm);

  CHECK(decode_image(enc.container, DecodeMode::roi({{0, 0, W, H}}), lm) == full);

  const std::vector<ImageRect> rois{{4, 4, 6, 5}};
  const auto tiled = bitstream::extract_roi(enc.container, rois, lm.model);
  for (const auto* src : {&enc.container, &tiled}) {
    const auto roi = decode_image(*src, DecodeMode::roi(rois), lm);
    const auto rects = bitstream::normalize_rois(rois, W, H, 2);
    const auto mask = influence_mask(rects, 2, enc.container.header.latent_h,
                                     enc.container.header.latent_w, H, W);
    std::size_t outside = 0, changed = 0;
    for (std::uint32_t y = 0; y < H; ++y)
      for (std::uint32_t x = 0; x < W; ++x) {
        bool same = true;
        for (int c = 0; c < 3; ++c) same &= roi.at(y, x, c) == base.at(y, x, c);
        if (!mask[y * W + x]) {
          ++outside;
          REQUIRE(same);
        } else if (!same) {
          ++changed;
        }
      }
    CHECK(outside > 0);
    CHECK(changed > 0);
  }
  // tiles cover exactly the requested ROI, so both sources agree
  CHECK(decode_image(tiled, DecodeMode::roi(rois), lm) ==
        decode_image(enc.container, DecodeMode::roi(rois), lm));
}

TEST_CASE("ROI on a tiled stream keeps only cells inside both") {
  const auto& lm = tiny_model();
  Rng rng(6);
  const auto enc = encode_image(random_image(rng, 40, 40), lm);  // latent 10 x 10
  const std::vector<ImageRect> sent{{0, 0, 20, 40}};
  const auto tiled = bitstream::extract_roi(enc.container, sent, lm.model);
  const auto full = decode_latents(enc.container, DecodeMode::full(), lm);
  const auto y = decode_latents(tiled, DecodeMode::roi({{12, 8, 20, 8}}), lm);
  for (std::size_t ch = 0; ch < 8; ++ch)
    for (std::size_t i = 0; i < 10; ++i)
      for (std::size_t j = 0; j < 10; ++j) {
        const bool in = i >= 2 && i < 4 && j >= 3 && j < 5;
        REQUIRE(y.high.at(ch, i, j) == (in ? full.high.at(ch, i, j) : 0));
      }
  CHECK(y.low == full.low);
}

TEST_CASE("synthesis footprint bounds every changed pixel") {
  const auto& lm = tiny_model();
  Rng rng(7);
  const std::size_t lh = 6, lw = 7, H = 23, W = 27;
  auto low = test::normal_tensor<float>(rng, Shape{8, lh, lw});
  auto high = test::normal_tensor<float>(rng, Shape{8, lh, lw});
  auto run = [&](const Tensor<float>& h) {
    return synthesize<float>({Var<float>::constant(low), Var<float>::constant(h)}, lm.model, H,
                             W)
        .value();
  };
  const auto ref = run(high);
  for (int trial = 0; trial < 12; ++trial) {
    const std::size_t i = rng() % lh, j = rng() % lw;
    auto bumped = high;
    for (std::size_t c = 0; c < 8; ++c) bumped.at(c, i, j) += 1.5f;
    const auto out = run(bumped);
    const auto [y0, y1] = synthesis_footprint(i, i + 1, 2, lh, H);
    const auto [x0, x1] = synthesis_footprint(j, j + 1, 2, lw, W);
    std::size_t changed = 0;
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          if (out.at(c, y, x) == ref.at(c, y, x)) continue;
          ++changed;
          REQUIRE((y >= y0 && y < y1 && x >= x0 && x < x1));
        }
    CHECK(changed > 0);
  }
}

TEST_CASE("footprint arithmetic") {
  // one latent cell, two stages: [i-1, i+2), then [2a-3, 2b+3) per stage
  // cell 5: [4,7) -> [5,17) -> [7,37)
  CHECK(synthesis_footprint(5, 6, 2, 10, 1000) == std::pair<std::size_t, std::size_t>{7, 37});
  // edges clip at every level: [0,2) -> [0,7) -> [0,17)
  CHECK(synthesis_footprint(0, 1, 2, 10, 1000) == std::pair<std::size_t, std::size_t>{0, 17});
  // [8,10) -> [13,20) -> [23,40), cropped to the 37-pixel image
  CHECK(synthesis_footprint(9, 10, 2, 10, 37) == std::pair<std::size_t, std::size_t>{23, 37});
  CHECK_THROWS_AS(synthesis_footprint(3, 3, 2, 10, 40), std::invalid_argument);
}

TEST_CASE("model mismatch names both hashes") {
  const auto& lm = tiny_model();
  const auto other = LoadedModel::from(init_model<float>(tiny_config(), 22));
  Rng rng(8);
  const auto enc = encode_image(random_image(rng, 16, 16), lm);
  try {
    decode_image(enc.container, DecodeMode::full(), other);
    FAIL("expected ModelMismatchError");
  } catch (const ModelMismatchError& e) {
    const std::string msg = e.what();
    CHECK(msg.find(model_id_hex(lm.id)) != std::string::npos);
    CHECK(msg.find(model_id_hex(other.id)) != std::string::npos);
  }
}

TEST_CASE("encode rejects images smaller than the downsampling factor") {
  Rng rng(9);
  CHECK_THROWS_AS(encode_image(random_image(rng, 3, 16), tiny_model()), std::invalid_argument);
  CHECK_NOTHROW(encode_image(random_image(rng, 4, 4), tiny_model()));
}

TEST_CASE("a saved model loads with the same id") {
  const auto& lm = tiny_model();
  const auto path = std::filesystem::temp_directory_path() / "flic_codec_model.flcw";
  save_weights(lm.model, path);
  const auto back = LoadedModel::load(path);
  std::filesystem::remove(path);
  CHECK(back.id == lm.id);
  Rng rng(10);
  const auto img = random_image(rng, 20, 12);
  CHECK(decode_image(encode_image(img, lm).bytes, DecodeMode::full(), back) ==
        decode_image(encode_image(img, back).bytes, DecodeMode::full(), lm));
}
