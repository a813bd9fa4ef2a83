#include <doctest.h>

#include <filesystem>

#include "flic/errors.hpp"
#include "flic/image.hpp"
#include "flic_test.hpp"

using namespace flic;

namespace {

RgbImage random_image(Rng& rng, std::uint32_t w, std::uint32_t h) {
  RgbImage img(w, h);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng());
  return img;
}

std::vector<std::uint8_t> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

}  // namespace

TEST_CASE("tensor conversion is exact on every 8-bit level") {
  RgbImage img(256, 1);
  for (std::uint32_t x = 0; x < 256; ++x)
    for (int c = 0; c < 3; ++c) img.at(0, x, c) = static_cast<std::uint8_t>(x);
  const auto t = to_tensor(img);
  CHECK(t.shape() == Shape{3, 1, 256});
  CHECK(t.at(1, 0, 255) == 1.0f);
  CHECK(to_image(t) == img);
}

TEST_CASE("export clamps and rounds to nearest") {
  Tensor<float> t(Shape{3, 1, 4});
  const float vals[4] = {-0.3f, 1.7f, 0.5f, 10.4f / 255.0f};
  for (int c = 0; c < 3; ++c)
    for (int x = 0; x < 4; ++x) t.at(c, 0, x) = vals[x];
  const auto img = to_image(t);
  CHECK(img.at(0, 0, 0) == 0);
  CHECK(img.at(0, 1, 0) == 255);
  CHECK(img.at(0, 2, 0) == 128);  // 127.5 rounds away from zero
  CHECK(img.at(0, 3, 0) == 10);
  CHECK_THROWS_AS(to_image(Tensor<float>(Shape{1, 2, 2})), std::invalid_argument);
}

TEST_CASE("PPM encode and decode") {
  Rng rng(1);
  const auto img = random_image(rng, 7, 5);
  const auto bytes = encode_ppm(img);
  const std::string head = "P6\n7 5\n255\n";
  CHECK(std::equal(head.begin(), head.end(), bytes.begin()));
  CHECK(bytes.size() == head.size() + 7 * 5 * 3);
  CHECK(decode_ppm(bytes) == img);

  auto commented = bytes_of("P6 # made by hand\n2 1\n# depth\n255\n");
  for (std::uint8_t v : {1, 2, 3, 4, 5, 6}) commented.push_back(v);
  const auto small = decode_ppm(commented);
  CHECK(small.width == 2);
  CHECK(small.at(0, 1, 2) == 6);
}

TEST_CASE("PPM errors") {
  CHECK_THROWS_AS(decode_ppm(bytes_of("P3\n1 1\n255\n")), FormatError);
  CHECK_THROWS_WITH_AS(decode_ppm(bytes_of("P6\n1 1\n65535\n123456")),
                       doctest::Contains("maxval"), FormatError);
  CHECK_THROWS_AS(decode_ppm(bytes_of("P6\n2 2\n255\nabc")), FormatError);
  CHECK_THROWS_AS(decode_ppm(bytes_of("P6\n0 2\n255\n")), FormatError);
  CHECK_THROWS_AS(decode_ppm(bytes_of("P6\nx 2\n255\n")), FormatError);
}

TEST_CASE("PNG encode and decode") {
  Rng rng(2);
  const auto img = random_image(rng, 33, 17);
  const auto png = encode_png(img);
  CHECK(png[1] == 'P');
  CHECK(decode_png(png) == img);

  auto cut = png;
  cut.resize(png.size() / 2);
  CHECK_THROWS_AS(decode_png(cut), FormatError);
  CHECK_THROWS_AS(decode_png(bytes_of("not a png at all")), FormatError);
}

TEST_CASE("file round trip picks the format") {
  Rng rng(3);
  const auto img = random_image(rng, 9, 4);
  const auto dir = std::filesystem::temp_directory_path();
  const auto ppm = dir / "flic_test_image.ppm";
  const auto png = dir / "flic_test_image.PNG";
  write_image(ppm, img);
  write_image(png, img);
  CHECK(read_file(ppm)[0] == 'P');
  CHECK(read_file(png)[0] == 0x89);
  CHECK(read_image(ppm) == img);
  CHECK(read_image(png) == img);
  std::filesystem::remove(ppm);
  std::filesystem::remove(png);
  CHECK_THROWS_AS(read_image(dir / "flic_no_such_file.ppm"), std::runtime_error);
}
