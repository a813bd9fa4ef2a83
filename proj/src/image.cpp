#include "flic/image.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>

#include "flic/errors.hpp"

namespace flic {

namespace {

constexpr std::uint32_t kMaxDim = 1u << 16;

void check_dims(std::uint64_t w, std::uint64_t h, std::size_t offset) {
  if (w == 0 || h == 0 || w > kMaxDim || h > kMaxDim) {
    throw FormatError("image dimensions " + std::to_string(w) + "x" + std::to_string(h) +
                          " out of range",
                      offset);
  }
}

// Reads one whitespace-delimited header token, skipping '#' comments.
std::uint64_t ppm_number(std::span<const std::uint8_t> b, std::size_t& pos) {
  while (pos < b.size()) {
    if (b[pos] == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
    } else if (std::isspace(b[pos])) {
      ++pos;
    } else {
      break;
    }
  }
  const std::size_t start = pos;
  std::uint64_t v = 0;
  while (pos < b.size() && std::isdigit(b[pos])) {
    v = v * 10 + (b[pos] - '0');
    if (v > 0xffffffffull) throw FormatError("PPM header number too large", start);
    ++pos;
  }
  if (pos == start) throw FormatError("expected a number in PPM header", start);
  return v;
}

struct PngReadState {
  std::span<const std::uint8_t> data;
  std::size_t pos = 0;
};

// libpng reports errors by longjmp; the message is parked here and turned
// into an exception once control is back in C++ frames.
struct PngError {
  char message[256] = {0};
};

void png_fail(png_structp png, png_const_charp msg) {
  auto* err = static_cast<PngError*>(png_get_error_ptr(png));
  std::snprintf(err->message, sizeof err->message, "%s", msg);
  png_longjmp(png, 1);
}

void png_warn(png_structp, png_const_charp) {}

void png_read_fn(png_structp png, png_bytep out, png_size_t n) {
  auto* s = static_cast<PngReadState*>(png_get_io_ptr(png));
  if (n > s->data.size() - s->pos) png_error(png, "truncated data");
  std::memcpy(out, s->data.data() + s->pos, n);
  s->pos += n;
}

void png_write_fn(png_structp png, png_bytep in, png_size_t n) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), in, in + n);
}

void png_flush_fn(png_structp) {}

// Only trivially destructible locals live in the setjmp frames below.
bool png_write_rows(png_structp png, png_infop info, const RgbImage* img) {
  if (setjmp(png_jmpbuf(png))) return false;
  png_set_IHDR(png, info, img->width, img->height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::uint32_t y = 0; y < img->height; ++y) {
    png_write_row(png, img->pixels.data() + std::size_t{y} * img->width * 3);
  }
  png_write_end(png, nullptr);
  return true;
}

bool png_read_header(png_structp png, png_infop info, png_uint_32* w, png_uint_32* h,
                     std::size_t* rowbytes) {
  if (setjmp(png_jmpbuf(png))) return false;
  png_read_info(png, info);
  *w = png_get_image_width(png, info);
  *h = png_get_image_height(png, info);
  // Normalise every colour type and depth to 8-bit RGB.
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_set_interlace_handling(png);
  png_read_update_info(png, info);
  *rowbytes = png_get_rowbytes(png, info);
  return true;
}

bool png_read_rows(png_structp png, png_bytepp rows) {
  if (setjmp(png_jmpbuf(png))) return false;
  png_read_image(png, rows);
  png_read_end(png, nullptr);
  return true;
}

}  // namespace

Tensor<float> to_tensor(const RgbImage& img) {
  const std::size_t h = img.height, w = img.width;
  Tensor<float> t(Shape{3, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) t.at(c, y, x) = img.at(y, x, c) / 255.0f;
  return t;
}

RgbImage to_image(const Tensor<float>& t) {
  if (t.rank() != 3 || t.dim(0) != 3) {
    throw std::invalid_argument("to_image: expected [3,H,W], got " + shape_str(t.shape()));
  }
  RgbImage img(static_cast<std::uint32_t>(t.dim(2)), static_cast<std::uint32_t>(t.dim(1)));
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const float v = std::clamp(t.at(c, y, x), 0.0f, 1.0f);
        img.at(y, x, c) = static_cast<std::uint8_t>(std::lround(v * 255.0f));
      }
  return img;
}

std::vector<std::uint8_t> encode_ppm(const RgbImage& img) {
  const std::string head =
      "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(head.begin(), head.end());
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  return out;
}

RgbImage decode_ppm(std::span<const std::uint8_t> b) {
  if (b.size() < 2 || b[0] != 'P' || b[1] != '6') throw FormatError("not a binary PPM (P6)", 0);
  std::size_t pos = 2;
  const auto w = ppm_number(b, pos);
  const auto h = ppm_number(b, pos);
  const std::size_t maxval_at = pos;
  const auto maxval = ppm_number(b, pos);
  if (maxval != 255) {
    throw FormatError("PPM maxval " + std::to_string(maxval) + " unsupported (need 255)",
                      maxval_at);
  }
  if (pos >= b.size() || !std::isspace(b[pos])) {
    throw FormatError("missing whitespace after PPM header", pos);
  }
  ++pos;
  check_dims(w, h, 2);
  RgbImage img(static_cast<std::uint32_t>(w), static_cast<std::uint32_t>(h));
  if (b.size() - pos != img.pixels.size()) {
    throw FormatError("PPM pixel data is " + std::to_string(b.size() - pos) +
                          " bytes, expected " + std::to_string(img.pixels.size()),
                      pos);
  }
  std::copy(b.begin() + static_cast<long>(pos), b.end(), img.pixels.begin());
  return img;
}

std::vector<std::uint8_t> encode_png(const RgbImage& img) {
  check_dims(img.width, img.height, 0);
  std::vector<std::uint8_t> out;
  PngError err;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_fail, png_warn);
  if (!png) throw std::runtime_error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  bool ok = info != nullptr;
  if (ok) {
    png_set_write_fn(png, &out, png_write_fn, png_flush_fn);
    ok = png_write_rows(png, info, &img);
  }
  png_destroy_write_struct(&png, &info);
  if (!ok) throw std::runtime_error(std::string("PNG encode failed: ") + err.message);
  return out;
}

RgbImage decode_png(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) {
    throw FormatError("not a PNG file", 0);
  }
  PngReadState state{bytes, 0};
  PngError err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_fail, png_warn);
  if (!png) throw std::runtime_error("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("png_create_info_struct failed");
  }
  png_set_read_fn(png, &state, png_read_fn);
  png_uint_32 w = 0, h = 0;
  std::size_t rowbytes = 0;
  bool ok = png_read_header(png, info, &w, &h, &rowbytes);
  RgbImage img;
  std::string problem;
  if (ok) {
    if (w == 0 || h == 0 || w > kMaxDim || h > kMaxDim) {
      problem = "image dimensions " + std::to_string(w) + "x" + std::to_string(h) +
                " out of range";
    } else if (rowbytes != std::size_t{w} * 3) {
      problem = "PNG did not convert to 8-bit RGB";
    } else {
      img = RgbImage(w, h);
      std::vector<png_bytep> rows(h);
      for (std::uint32_t y = 0; y < h; ++y) rows[y] = img.pixels.data() + std::size_t{y} * w * 3;
      ok = png_read_rows(png, rows.data());
    }
  }
  png_destroy_read_struct(&png, &info, nullptr);
  if (!ok) throw FormatError(std::string("PNG: ") + err.message, state.pos);
  if (!problem.empty()) throw FormatError(problem, 16);
  return img;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

RgbImage decode_image_data(std::span<const std::uint8_t> bytes) {
  if (bytes.size() >= 8 && png_sig_cmp(bytes.data(), 0, 8) == 0) return decode_png(bytes);
  return decode_ppm(bytes);
}

RgbImage read_image(const std::filesystem::path& path) { return decode_image_data(read_file(path)); }

void write_image(const std::filesystem::path& path, const RgbImage& img) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) {
    return static_cast<char>(std::tolower(c));
  });
  write_file(path, ext == ".png" ? encode_png(img) : encode_ppm(img));
}

}  // namespace flic
