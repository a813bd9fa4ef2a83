#pragma once

// 8-bit RGB images, PPM (P6) and PNG codecs, and conversion to the [3,H,W]
// float tensors the network consumes.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "flic/tensor.hpp"

namespace flic {

/// Interleaved RGB, row-major, 3 bytes per pixel.
struct RgbImage {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::vector<std::uint8_t> pixels;

  RgbImage() = default;
  RgbImage(std::uint32_t w, std::uint32_t h, std::uint8_t fill = 0)
      : width(w), height(h), pixels(std::size_t{w} * h * 3, fill) {}

  std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c) {
    return pixels[(y * width + x) * 3 + c];
  }
  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels[(y * width + x) * 3 + c];
  }
  bool operator==(const RgbImage&) const = default;
};

/// Values scaled to [0,1].
Tensor<float> to_tensor(const RgbImage& img);

/// Clamps to [0,1] and rounds to the nearest 8-bit level.
RgbImage to_image(const Tensor<float>& t);

std::vector<std::uint8_t> encode_ppm(const RgbImage& img);
RgbImage decode_ppm(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_png(const RgbImage& img);
RgbImage decode_png(std::span<const std::uint8_t> bytes);

/// PNG or PPM, chosen by the PNG signature.
RgbImage decode_image_data(std::span<const std::uint8_t> bytes);

/// Format from the file contents (PNG signature or "P6").
RgbImage read_image(const std::filesystem::path& path);
/// Format from the extension: .png writes PNG, anything else PPM.
void write_image(const std::filesystem::path& path, const RgbImage& img);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace flic
