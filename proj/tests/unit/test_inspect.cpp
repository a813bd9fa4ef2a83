#include <doctest.h>

#include <cmath>
#include <complex>
#include <numbers>

#include "flic/inspect.hpp"
#include "flic_test.hpp"
#include "oracles.hpp"

using namespace flic;
using flic::test::naive_dft;

namespace {

Tensor<float> gray(std::size_t h, std::size_t w, float v) { return Tensor<float>(Shape{3, h, w}, v); }

}  // namespace

TEST_CASE("mosaic drops zero channels and tiles near-square") {
  Rng rng(1);
  Tensor<float> y(Shape{10, 4, 5});
  const std::size_t live[7] = {0, 2, 3, 5, 6, 8, 9};
  for (auto ch : live)
    for (std::size_t i = 0; i < 20; ++i) y[ch * 20 + i] = static_cast<float>(normal(rng));
  const auto m = visualize_latents(y);
  CHECK(m.shown == 7);
  CHECK(m.rows == 3);
  CHECK(m.cols == 3);
  CHECK(m.image.shape() == Shape{3 * 4 + 2, 3 * 5 + 2});
  CHECK(m.warning.empty());
  // two blank cells in the last row
  for (std::size_t i = 10; i < 14; ++i)
    for (std::size_t j = 6; j < 17; ++j) REQUIRE(m.image[i * 17 + j] == 0.0f);
  // each shown tile spans exactly [0, 1]
  for (std::size_t k = 0; k < 7; ++k) {
    const std::size_t oy = (k / 3) * 5, ox = (k % 3) * 6;
    float lo = 2, hi = -1;
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 5; ++j) {
        lo = std::min(lo, m.image[(oy + i) * 17 + ox + j]);
        hi = std::max(hi, m.image[(oy + i) * 17 + ox + j]);
      }
    CHECK(lo == 0.0f);
    CHECK(hi == 1.0f);
  }
  // tile order follows channel order: tile 1 is channel 2
  const float* c2 = y.data() + 2 * 20;
  const auto [lo, hi] = std::minmax_element(c2, c2 + 20);
  CHECK(m.image[0 * 17 + 6] == doctest::Approx((c2[0] - *lo) / (*hi - *lo)));
}

TEST_CASE("mosaic degenerate cases") {
  const auto empty = visualize_latents(Tensor<float>(Shape{5, 3, 3}));
  CHECK(empty.image.empty());
  CHECK(empty.shown == 0);
  CHECK_FALSE(empty.warning.empty());

  Tensor<float> flat(Shape{1, 2, 2}, 3.0f);
  const auto m = visualize_latents(flat);
  CHECK(m.image.shape() == Shape{2, 2});
  for (float v : m.image.values()) CHECK(v == 0.5f);
}

TEST_CASE("fft2 matches the naive DFT") {
  Rng rng(2);
  for (auto [rows, cols] : {std::pair<std::size_t, std::size_t>{16, 16}, {8, 32}, {1, 4}}) {
    std::vector<std::complex<double>> x(rows * cols);
    for (auto& v : x) v = {uniform(rng, -1, 1), uniform(rng, -1, 1)};
    const auto ref = naive_dft(x, rows, cols);
    fft2(x, rows, cols);
    double err = 0;
    for (std::size_t i = 0; i < x.size(); ++i) err = std::max(err, std::abs(x[i] - ref[i]));
    CHECK(err < 1e-9);
  }
  std::vector<std::complex<double>> bad(12);
  CHECK_THROWS_AS(fft2(bad, 3, 4), std::invalid_argument);
}

TEST_CASE("spectrum matches the naive DFT route on 16x16") {
  Rng rng(3);
  const auto img = test::random_tensor<float>(rng, Shape{3, 16, 16}, 0.0, 1.0);
  std::vector<std::complex<double>> luma(256);
  for (std::size_t y = 0; y < 16; ++y)
    for (std::size_t x = 0; x < 16; ++x)
      luma[y * 16 + x] = 0.299 * img.at(0, y, x) + 0.587 * img.at(1, y, x) +
                         0.114 * img.at(2, y, x);
  const auto f = naive_dft(luma, 16, 16);
  std::vector<double> ref(256);
  double peak = 0;
  for (std::size_t u = 0; u < 16; ++u)
    for (std::size_t v = 0; v < 16; ++v) {
      const double m = std::log(1 + std::abs(f[u * 16 + v]));
      ref[((u + 8) % 16) * 16 + (v + 8) % 16] = m;
      peak = std::max(peak, m);
    }
  const auto s = spectrum(img);
  CHECK(s.shape() == Shape{16, 16});
  double err = 0;
  for (std::size_t i = 0; i < 256; ++i) err = std::max(err, std::abs(s[i] - ref[i] / peak));
  CHECK(err < 1e-6);
}

TEST_CASE("spectrum of a constant image is a single centred point") {
  const auto s = spectrum(gray(32, 16, 0.7f));
  CHECK(s.shape() == Shape{32, 16});
  for (std::size_t y = 0; y < 32; ++y)
    for (std::size_t x = 0; x < 16; ++x) {
      if (y == 16 && x == 8) {
        CHECK(s[y * 16 + x] == 1.0);
      } else {
        REQUIRE(s[y * 16 + x] < 1e-12);
      }
    }
}

TEST_CASE("horizontal sinusoid gives a symmetric pair on the horizontal axis") {
  const std::size_t n = 32, f = 5;
  Tensor<float> img(Shape{3, n, n});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x)
        img.at(c, y, x) = static_cast<float>(
            0.5 + 0.4 * std::cos(2 * std::numbers::pi * static_cast<double>(f * x) / n));
  const auto s = spectrum(img);
  const double left = s[16 * n + 16 - f], right = s[16 * n + 16 + f];
  CHECK(left == doctest::Approx(right).epsilon(1e-9));
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      if (y == 16 && (x == 16 || x == 16 - f || x == 16 + f)) continue;
      REQUIRE(s[y * n + x] < 0.01 * left);
    }
}

TEST_CASE("spectrum pads to powers of two") {
  CHECK(spectrum(gray(20, 33, 0.1f)).shape() == Shape{32, 64});
  CHECK(next_pow2(1) == 1);
  CHECK(next_pow2(17) == 32);
}
