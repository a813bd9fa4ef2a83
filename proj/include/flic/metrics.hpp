#pragma once

// Distortion metrics over [C,H,W] images in [0,1] and the Bjontegaard rate
// difference between two RD curves.

#include <vector>

#include "flic/autograd.hpp"

namespace flic {

inline constexpr double kPsnrCap = 100.0;

double mse(const Tensor<float>& a, const Tensor<float>& b);

/// 10 log10(1 / mse), or kPsnrCap when mse < 1e-10.
double psnr(const Tensor<float>& a, const Tensor<float>& b);

/// Multi-scale SSIM, averaged over channels. Five scales, Gaussian window
/// sigma 1.5 of width min(11, side) rounded down to odd. Needs H, W >= 16.
double ms_ssim(const Tensor<float>& a, const Tensor<float>& b);

/// Differentiable form of ms_ssim, used as a training distortion.
template <typename T>
Var<T> ms_ssim(const Var<T>& a, const Var<T>& b);

struct RdPoint {
  double rate = 0;     // bpp
  double quality = 0;  // PSNR or any quality where higher is better
};

/// Average rate difference of `b` against `a` in percent (negative means b
/// needs fewer bits), from cubic fits of log-rate over quality integrated on
/// the overlapping quality interval. Each curve needs at least 4 points.
double bd_rate(const std::vector<RdPoint>& a, const std::vector<RdPoint>& b);

}  // namespace flic
