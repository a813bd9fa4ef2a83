#include "doctest.h"
#include "flic/wavelet.hpp"
#include "flic_test.hpp"

using namespace flic;
using namespace flic::wavelet;
using flic::test::random_tensor;

namespace {
using V = Var<double>;

double sum_squares(const Tensor<double>& t) {
  double s = 0;
  for (double v : t.values()) s += v * v;
  return s;
}
}  // namespace

TEST_CASE("kernel coefficients") {
  const auto ll = haar_kernel(HaarBand::LL);
  const auto hh = haar_kernel(HaarBand::HH);
  CHECK(ll[0][0] == 0.5);
  CHECK(ll[1][1] == 0.5);
  CHECK(hh[0][0] == 0.5);
  CHECK(hh[0][1] == -0.5);
  CHECK(hh[1][0] == -0.5);
  CHECK(hh[1][1] == 0.5);
}

TEST_CASE("constant input through LL and HH") {
  for (double c : {-3.25, 0.0, 1.0, 7.5}) {
    auto x = V::constant(Tensor<double>(Shape{2, 6, 8}, c));
    const auto ll = haar_filter(x, HaarBand::LL).value();
    const auto hh = haar_filter(x, HaarBand::HH).value();
    CHECK(ll.shape() == Shape{2, 3, 4});
    for (double v : ll.values()) CHECK(v == 2 * c);
    for (double v : hh.values()) CHECK(v == 0.0);
  }
}

TEST_CASE("HH of the checkerboard block") {
  Tensor<double> x(Shape{1, 2, 2}, std::vector<double>{1, -1, -1, 1});
  CHECK(haar_filter(V::constant(x), HaarBand::HH).value().item() == 2.0);
}

TEST_CASE("odd dimensions replicate the trailing row and column") {
  Tensor<double> x(Shape{1, 3, 3}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9});
  const auto ll = haar_filter(V::constant(x), HaarBand::LL).value();
  REQUIRE(ll.shape() == Shape{1, 2, 2});
  CHECK(ll.at(0, 0, 0) == doctest::Approx(0.5 * (1 + 2 + 4 + 5)));
  CHECK(ll.at(0, 0, 1) == doctest::Approx(0.5 * (3 + 3 + 6 + 6)));
  CHECK(ll.at(0, 1, 0) == doctest::Approx(0.5 * (7 + 8 + 7 + 8)));
  CHECK(ll.at(0, 1, 1) == doctest::Approx(0.5 * (9 * 4)));
}

TEST_CASE("four-band round trip and energy preservation") {
  Rng rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t c = 1 + uniform_index(rng, 3);
    const std::size_t h = 2 * (1 + uniform_index(rng, 6)), w = 2 * (1 + uniform_index(rng, 6));
    const auto x = random_tensor(rng, {c, h, w}, -5, 5);
    const auto bands = haar_analysis4(x);
    CHECK(test::max_abs_diff(haar_synthesis4(bands), x) < 1e-6);
    const double e = sum_squares(bands.ll) + sum_squares(bands.lh) + sum_squares(bands.hl) +
                     sum_squares(bands.hh);
    CHECK(std::abs(e - sum_squares(x)) < 1e-6 * std::max(1.0, sum_squares(x)));
  }
}

TEST_CASE("analysis and synthesis argument checks") {
  CHECK_THROWS_AS(haar_analysis4(Tensor<double>(Shape{1, 3, 4})), std::invalid_argument);
  HaarBands b{Tensor<double>(Shape{1, 2, 2}), Tensor<double>(Shape{1, 2, 2}),
              Tensor<double>(Shape{1, 2, 3}), Tensor<double>(Shape{1, 2, 2})};
  CHECK_THROWS_AS(haar_synthesis4(b), std::invalid_argument);
}

TEST_CASE("HH vanishes exactly on blockwise constant input") {
  Rng rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t h = 2 * (1 + uniform_index(rng, 4)), w = 2 * (1 + uniform_index(rng, 4));
    Tensor<double> x(Shape{1, h, w});
    for (std::size_t i = 0; i < h / 2; ++i)
      for (std::size_t j = 0; j < w / 2; ++j) {
        const double v = uniform(rng, -4, 4);
        for (int a = 0; a < 2; ++a)
          for (int b = 0; b < 2; ++b) x.at(0, 2 * i + a, 2 * j + b) = v;
      }
    const auto hh = haar_filter(V::constant(x), HaarBand::HH).value();
    for (double v : hh.values()) CHECK(v == 0.0);
    // Breaking one block makes HH nonzero there.
    x.at(0, 0, 0) += 1.0;
    CHECK(haar_filter(V::constant(x), HaarBand::HH).value().at(0, 0, 0) != 0.0);
  }
}

TEST_CASE("haar_filter gradients") {
  Rng rng(4);
  for (auto band : {HaarBand::LL, HaarBand::LH, HaarBand::HL, HaarBand::HH}) {
    for (Shape s : {Shape{2, 4, 6}, Shape{1, 5, 3}}) {
      auto x = V::leaf(random_tensor(rng, s));
      auto out_shape = Shape{s[0], (s[1] + 1) / 2, (s[2] + 1) / 2};
      auto w = V::constant(random_tensor(rng, out_shape));
      CHECK(test::grad_check({x}, [&] { return sum(mul(haar_filter(x, band), w)); })
                .max_rel_error < 1e-4);
    }
  }
}
