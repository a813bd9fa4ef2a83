#include "flic/wavelet.hpp"

#include <stdexcept>

namespace flic::wavelet {

template <typename T>
Var<T> haar_filter(const Var<T>& x, HaarBand band) {
  if (x.value().rank() != 3) {
    throw std::invalid_argument("haar_filter: expected [C,H,W], got " +
                                shape_str(x.shape()));
  }
  const std::size_t c = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  const std::size_t h = (H + 1) / 2, w = (W + 1) / 2;
  const auto k = haar_kernel(band);
  const T k00 = T(k[0][0]), k01 = T(k[0][1]), k10 = T(k[1][0]), k11 = T(k[1][1]);
  const auto& xv = x.value();
  Tensor<T> out(Shape{c, h, w});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < h; ++i) {
      const std::size_t y0 = 2 * i, y1 = std::min(2 * i + 1, H - 1);
      for (std::size_t j = 0; j < w; ++j) {
        const std::size_t x0 = 2 * j, x1 = std::min(2 * j + 1, W - 1);
        out.at(ch, i, j) = k00 * xv.at(ch, y0, x0) + k01 * xv.at(ch, y0, x1) +
                           k10 * xv.at(ch, y1, x0) + k11 * xv.at(ch, y1, x1);
      }
    }
  }
  return detail::record<T>(
      std::move(out), {x}, [=](const Tensor<T>& g) {
        auto* t = x.node()->grad_target();
        if (!t) return;
        for (std::size_t ch = 0; ch < c; ++ch) {
          for (std::size_t i = 0; i < h; ++i) {
            const std::size_t y0 = 2 * i, y1 = std::min(2 * i + 1, H - 1);
            for (std::size_t j = 0; j < w; ++j) {
              const std::size_t x0 = 2 * j, x1 = std::min(2 * j + 1, W - 1);
              const T gv = g.at(ch, i, j);
              t->at(ch, y0, x0) += k00 * gv;
              t->at(ch, y0, x1) += k01 * gv;
              t->at(ch, y1, x0) += k10 * gv;
              t->at(ch, y1, x1) += k11 * gv;
            }
          }
        }
      });
}

template Var<float> haar_filter<float>(const Var<float>&, HaarBand);
template Var<double> haar_filter<double>(const Var<double>&, HaarBand);

HaarBands haar_analysis4(const Tensor<double>& x) {
  if (x.rank() != 3 || x.dim(1) % 2 || x.dim(2) % 2) {
    throw std::invalid_argument("haar_analysis4: expected [C,H,W] with even H, W; got " +
                                shape_str(x.shape()));
  }
  const auto in = Var<double>::constant(x);
  return {haar_filter(in, HaarBand::LL).value(), haar_filter(in, HaarBand::LH).value(),
          haar_filter(in, HaarBand::HL).value(), haar_filter(in, HaarBand::HH).value()};
}

Tensor<double> haar_synthesis4(const HaarBands& b) {
  const Shape& s = b.ll.shape();
  if (s.size() != 3 || b.lh.shape() != s || b.hl.shape() != s || b.hh.shape() != s) {
    throw std::invalid_argument("haar_synthesis4: band shapes disagree");
  }
  const std::size_t c = s[0], h = s[1], w = s[2];
  Tensor<double> out(Shape{c, 2 * h, 2 * w});
  const std::array<std::pair<const Tensor<double>*, HaarBand>, 4> bank{
      {{&b.ll, HaarBand::LL}, {&b.lh, HaarBand::LH}, {&b.hl, HaarBand::HL}, {&b.hh, HaarBand::HH}}};
  for (const auto& [band, tag] : bank) {
    const auto k = haar_kernel(tag);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
          const double v = band->at(ch, i, j);
          for (int a = 0; a < 2; ++a)
            for (int bb = 0; bb < 2; ++bb) out.at(ch, 2 * i + a, 2 * j + bb) += k[a][bb] * v;
        }
  }
  return out;
}

}  // namespace flic::wavelet
