#pragma once

// Views for looking inside the codec: tiled latent channels and the
// log-magnitude Fourier spectrum of an image.

#include <complex>
#include <string>
#include <vector>

#include "flic/model.hpp"

namespace flic {

struct LatentMosaic {
  Tensor<float> image;  // [rows*h + rows-1, cols*w + cols-1], values in [0,1]
  std::size_t shown = 0;
  std::size_t rows = 0, cols = 0;
  std::string warning;  // set, with an empty image, when nothing could be shown
};

/// Tiles the non-zero channels of y [C,h,w] into a near-square grid with
/// a one-pixel gap. Each channel is min-max normalised; a constant channel
/// becomes 0.5. Gaps and unused cells are 0.
LatentMosaic visualize_latents(const Tensor<float>& y);
FrequencyPair<LatentMosaic> visualize_latents(const LatentPair& y);

/// In-place radix-2 FFT of a rows x cols row-major array; both sides must be
/// powers of two.
void fft2(std::vector<std::complex<double>>& data, std::size_t rows, std::size_t cols);

/// Luma of [3,H,W] (0.299, 0.587, 0.114), zero-padded to power-of-two
/// sides, transformed, shifted so DC sits at (rows/2, cols/2), then
/// log(1+|F|) scaled to a maximum of 1. Returns [rows, cols].
Tensor<double> spectrum(const Tensor<float>& rgb);

std::size_t next_pow2(std::size_t n);

}  // namespace flic
