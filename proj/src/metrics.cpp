#include "flic/metrics.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

namespace flic {

namespace {

constexpr std::array<double, 5> kScaleWeights{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;
constexpr double kSigma = 1.5;
constexpr std::size_t kMaxWindow = 11;
constexpr std::size_t kMinSide = 16;

void require_same(const Shape& a, const Shape& b, const char* what) {
  if (a != b) {
    throw std::invalid_argument(std::string(what) + ": shapes " + shape_str(a) + " and " +
                                shape_str(b) + " differ");
  }
}

template <typename T>
std::vector<T> gaussian_taps(std::size_t side) {
  std::size_t k = std::min(kMaxWindow, side);
  if (k % 2 == 0) --k;
  std::vector<double> w(k);
  const double c = static_cast<double>(k / 2);
  double total = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const double d = static_cast<double>(i) - c;
    w[i] = std::exp(-d * d / (2 * kSigma * kSigma));
    total += w[i];
  }
  std::vector<T> taps(k);
  for (std::size_t i = 0; i < k; ++i) taps[i] = static_cast<T>(w[i] / total);
  return taps;
}

// Per-channel spatial mean of [C,H,W] as [C,1,1].
template <typename T>
Var<T> channel_mean(const Var<T>& x) {
  const std::size_t c = x.shape()[0], n = x.shape()[1] * x.shape()[2];
  auto ones = Var<T>::constant(Tensor<T>(Shape{c, 1, n}, T(1)));
  return scale(channel_matmul(ones, reshape(x, Shape{c, n, 1})), T(1) / static_cast<T>(n));
}

std::array<double, 4> cubic_fit(const std::vector<RdPoint>& pts) {
  Eigen::MatrixXd a(pts.size(), 4);
  Eigen::VectorXd y(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (!(pts[i].rate > 0)) throw std::invalid_argument("bd_rate: rates must be positive");
    double q = 1;
    for (int j = 0; j < 4; ++j, q *= pts[i].quality) a(static_cast<Eigen::Index>(i), j) = q;
    y(static_cast<Eigen::Index>(i)) = std::log(pts[i].rate);
  }
  const Eigen::VectorXd p = a.colPivHouseholderQr().solve(y);
  return {p(0), p(1), p(2), p(3)};
}

// Integral of the cubic from lo to hi.
double integrate(const std::array<double, 4>& p, double lo, double hi) {
  auto prim = [&](double x) {
    return p[0] * x + p[1] * x * x / 2 + p[2] * x * x * x / 3 + p[3] * x * x * x * x / 4;
  };
  return prim(hi) - prim(lo);
}

}  // namespace

double mse(const Tensor<float>& a, const Tensor<float>& b) {
  require_same(a.shape(), b.shape(), "mse");
  if (a.empty()) throw std::invalid_argument("mse: empty input");
  double acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

double psnr(const Tensor<float>& a, const Tensor<float>& b) {
  const double m = mse(a, b);
  if (m < 1e-10) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / m));
}

template <typename T>
Var<T> ms_ssim(const Var<T>& a, const Var<T>& b) {
  require_same(a.shape(), b.shape(), "ms_ssim");
  if (a.shape().size() != 3 || a.shape()[1] < kMinSide || a.shape()[2] < kMinSide) {
    throw std::invalid_argument("ms_ssim: needs [C,H,W] with H, W >= 16, got " +
                                shape_str(a.shape()));
  }
  const T c1 = static_cast<T>(kC1), c2 = static_cast<T>(kC2);
  Var<T> x = a, y = b;
  Var<T> product;
  for (std::size_t s = 0; s < kScaleWeights.size(); ++s) {
    const auto taps = gaussian_taps<T>(std::min(x.shape()[1], x.shape()[2]));
    auto filt = [&](const Var<T>& v) { return separable_filter_valid(v, taps); };
    const auto mx = filt(x), my = filt(y);
    const auto mxx = square(mx), myy = square(my), mxy = mul(mx, my);
    const auto sxx = sub(filt(square(x)), mxx);
    const auto syy = sub(filt(square(y)), myy);
    const auto sxy = sub(filt(mul(x, y)), mxy);
    const auto cs_map = div(add_scalar(scale(sxy, T(2)), c2), add_scalar(add(sxx, syy), c2));
    Var<T> term;
    if (s + 1 < kScaleWeights.size()) {
      term = channel_mean(cs_map);
    } else {
      const auto l_map = div(add_scalar(scale(mxy, T(2)), c1), add_scalar(add(mxx, myy), c1));
      term = channel_mean(mul(l_map, cs_map));
    }
    // Negative contrast-structure values are clamped to zero.
    term = pow_scalar(term, static_cast<T>(kScaleWeights[s]));
    product = product.valid() ? mul(product, term) : term;
    if (s + 1 < kScaleWeights.size()) {
      x = avg_pool2(x);
      y = avg_pool2(y);
    }
  }
  return mean(product);
}

double ms_ssim(const Tensor<float>& a, const Tensor<float>& b) {
  require_same(a.shape(), b.shape(), "ms_ssim");
  const auto va = Var<double>::constant(a.cast<double>());
  const auto vb = Var<double>::constant(b.cast<double>());
  return ms_ssim(va, vb).value().item();
}

double bd_rate(const std::vector<RdPoint>& a, const std::vector<RdPoint>& b) {
  if (a.size() < 4 || b.size() < 4) {
    throw std::invalid_argument("bd_rate: each curve needs at least 4 points");
  }
  auto range = [](const std::vector<RdPoint>& c) {
    auto [lo, hi] = std::minmax_element(c.begin(), c.end(), [](auto& p, auto& q) {
      return p.quality < q.quality;
    });
    return std::pair{lo->quality, hi->quality};
  };
  const auto [alo, ahi] = range(a);
  const auto [blo, bhi] = range(b);
  const double lo = std::max(alo, blo), hi = std::min(ahi, bhi);
  if (!(hi > lo)) {
    throw std::invalid_argument("bd_rate: quality ranges [" + std::to_string(alo) + ", " +
                                std::to_string(ahi) + "] and [" + std::to_string(blo) + ", " +
                                std::to_string(bhi) + "] do not overlap");
  }
  const double avg = (integrate(cubic_fit(b), lo, hi) - integrate(cubic_fit(a), lo, hi)) /
                     (hi - lo);
  return (std::exp(avg) - 1.0) * 100.0;
}

template Var<float> ms_ssim<float>(const Var<float>&, const Var<float>&);
template Var<double> ms_ssim<double>(const Var<double>&, const Var<double>&);

}  // namespace flic
