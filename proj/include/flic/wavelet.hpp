#pragma once

#include <array>

#include "flic/autograd.hpp"

namespace flic::wavelet {

enum class HaarBand { LL, LH, HL, HH };

/// Fixed 2x2 Haar kernel, indexed [row][col]. All four share the 1/2 scale,
/// which makes the bank orthonormal.
constexpr std::array<std::array<double, 2>, 2> haar_kernel(HaarBand band) {
  switch (band) {
    case HaarBand::LL: return {{{0.5, 0.5}, {0.5, 0.5}}};
    case HaarBand::LH: return {{{0.5, 0.5}, {-0.5, -0.5}}};
    case HaarBand::HL: return {{{0.5, -0.5}, {0.5, -0.5}}};
    case HaarBand::HH: return {{{0.5, -0.5}, {-0.5, 0.5}}};
  }
  return {};
}

/// Depthwise 2x2 stride-2 filtering of x [C,H,W] -> [C,ceil(H/2),ceil(W/2)].
/// An odd trailing row/column is replicated before filtering.
template <typename T>
Var<T> haar_filter(const Var<T>& x, HaarBand band);

struct HaarBands {
  Tensor<double> ll, lh, hl, hh;
};

/// Full single-level 4-band analysis; H and W must be even.
HaarBands haar_analysis4(const Tensor<double>& x);

/// Inverse of haar_analysis4. Throws std::invalid_argument on band shape
/// mismatch.
Tensor<double> haar_synthesis4(const HaarBands& bands);

}  // namespace flic::wavelet
