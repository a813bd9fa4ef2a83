#include "flic/inspect.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace flic {

namespace {

// Iterative Cooley-Tukey over `n` elements spaced `stride` apart.
void fft1(std::complex<double>* x, std::size_t n, std::size_t stride) {
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(x[i * stride], x[j * stride]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
    for (std::size_t start = 0; start < n; start += len) {
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> w = std::polar(1.0, ang * static_cast<double>(k));
        auto& a = x[(start + k) * stride];
        auto& b = x[(start + k + len / 2) * stride];
        const auto t = w * b;
        b = a - t;
        a += t;
      }
    }
  }
}

bool is_pow2(std::size_t n) { return n && !(n & (n - 1)); }

}  // namespace

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

LatentMosaic visualize_latents(const Tensor<float>& y) {
  if (y.rank() != 3) {
    throw std::invalid_argument("visualize_latents: expected [C,h,w], got " +
                                shape_str(y.shape()));
  }
  const std::size_t c = y.dim(0), h = y.dim(1), w = y.dim(2), n = h * w;
  std::vector<std::size_t> keep;
  for (std::size_t ch = 0; ch < c; ++ch) {
    const float* p = y.data() + ch * n;
    if (std::any_of(p, p + n, [](float v) { return v != 0.0f; })) keep.push_back(ch);
  }
  LatentMosaic out;
  if (keep.empty()) {
    out.image = Tensor<float>();
    out.warning = "all " + std::to_string(c) + " latent channels are zero; nothing to show";
    return out;
  }
  out.shown = keep.size();
  out.cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(keep.size()))));
  out.rows = (keep.size() + out.cols - 1) / out.cols;
  const std::size_t H = out.rows * h + out.rows - 1, W = out.cols * w + out.cols - 1;
  out.image = Tensor<float>(Shape{H, W});
  for (std::size_t k = 0; k < keep.size(); ++k) {
    const float* p = y.data() + keep[k] * n;
    const auto [lo, hi] = std::minmax_element(p, p + n);
    const float range = *hi - *lo;
    const std::size_t oy = (k / out.cols) * (h + 1), ox = (k % out.cols) * (w + 1);
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        const float v = p[i * w + j];
        out.image[(oy + i) * W + ox + j] = range > 0 ? (v - *lo) / range : 0.5f;
      }
  }
  return out;
}

FrequencyPair<LatentMosaic> visualize_latents(const LatentPair& y) {
  return {visualize_latents(y.low), visualize_latents(y.high)};
}

void fft2(std::vector<std::complex<double>>& data, std::size_t rows, std::size_t cols) {
  if (!is_pow2(rows) || !is_pow2(cols) || data.size() != rows * cols) {
    throw std::invalid_argument("fft2: sides must be powers of two matching the data");
  }
  for (std::size_t r = 0; r < rows; ++r) fft1(data.data() + r * cols, cols, 1);
  for (std::size_t c = 0; c < cols; ++c) fft1(data.data() + c, rows, cols);
}

Tensor<double> spectrum(const Tensor<float>& rgb) {
  if (rgb.rank() != 3 || rgb.dim(0) != 3) {
    throw std::invalid_argument("spectrum: expected [3,H,W], got " + shape_str(rgb.shape()));
  }
  const std::size_t h = rgb.dim(1), w = rgb.dim(2);
  const std::size_t rows = next_pow2(h), cols = next_pow2(w);
  std::vector<std::complex<double>> f(rows * cols);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      f[y * cols + x] = 0.299 * rgb.at(0, y, x) + 0.587 * rgb.at(1, y, x) +
                        0.114 * rgb.at(2, y, x);
    }
  fft2(f, rows, cols);
  Tensor<double> out(Shape{rows, cols});
  double peak = 0;
  for (std::size_t y = 0; y < rows; ++y)
    for (std::size_t x = 0; x < cols; ++x) {
      const double v = std::log1p(std::abs(f[y * cols + x]));
      const std::size_t sy = (y + rows / 2) % rows, sx = (x + cols / 2) % cols;
      out[sy * cols + sx] = v;
      peak = std::max(peak, v);
    }
  if (peak > 0) {
    for (auto& v : out.values()) v /= peak;
  }
  return out;
}

}  // namespace flic
