#include "flic/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace flic {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

template <typename T>
Var<T> conv3(const Var<T>& x, const Parameter<T>& w, int stride = 1) {
  return conv2d(x, w.var, stride, 1);
}

template <typename T>
void require_pair(const FrequencyPair<Var<T>>& in, const char* op) {
  require(in.low.valid() && in.high.valid(), std::string(op) + ": both branches required");
  require(in.low.shape() == in.high.shape(),
          std::string(op) + ": branch shapes differ " + shape_str(in.low.shape()) +
              " vs " + shape_str(in.high.shape()));
}

template <typename T>
Var<T> gdn_norm(const Var<T>& x, const GdnParams<T>& p) {
  require(x.value().rank() == 3 && x.shape()[0] == p.channels(),
          "gdn: input " + shape_str(x.shape()) + " does not match " +
              std::to_string(p.channels()) + " channels");
  const std::size_t c = p.channels();
  auto gamma = reshape(gdn_gamma(p), Shape{c, c, 1, 1});
  auto norm = conv2d(square(x), gamma, 1, 0);
  return add_leading(norm, gdn_beta(p));
}

}  // namespace

template <typename T>
Var<T> gdn_beta(const GdnParams<T>& p) {
  return add_scalar(square(p.raw_beta.var), T(kGdnBetaFloor));
}

template <typename T>
Var<T> gdn_gamma(const GdnParams<T>& p) {
  return square(p.raw_gamma.var);
}

template <typename T>
Var<T> gdn(const Var<T>& x, const GdnParams<T>& p) {
  return mul(x, rsqrt(gdn_norm(x, p)));
}

template <typename T>
Var<T> igdn(const Var<T>& x, const GdnParams<T>& p) {
  return mul(x, sqrt(gdn_norm(x, p)));
}

template <typename T>
Var<T> conv3ps(const Var<T>& x, const Var<T>& weight) {
  require(weight.shape()[0] % 4 == 0, "conv3ps: weight output channels must be 4*Cout");
  return pixel_shuffle(conv2d(x, weight, 1, 1));
}

template <typename T>
Var<T> residual_block(const Var<T>& x, const ResidualBlockParams<T>& p, T slope) {
  require(x.value().rank() == 3 && x.shape()[0] == p.in_channels(),
          "residual_block: input " + shape_str(x.shape()) + " expects " +
              std::to_string(p.in_channels()) + " channels");
  if (p.direction == RbDirection::down) {
    auto main = leaky_relu(conv3(x, p.main_in, 2), slope);
    main = leaky_relu(conv3(main, p.main_out), slope);
    return add(main, conv2d(x, p.skip.var, 2, 0));
  }
  auto main = leaky_relu(conv3ps(x, p.main_in.var), slope);
  main = leaky_relu(conv3(main, p.main_out), slope);
  return add(main, conv3ps(x, p.skip.var));
}

template <typename T>
FrequencyPair<Var<T>> weoctconv(const FrequencyPair<Var<T>>& in,
                                const OctaveLayerParams<T>& p, T slope,
                                OctaveProbe<T>* probe) {
  require(p.boundary == Boundary::interior, "weoctconv: layer is not an interior layer");
  require_pair(in, "weoctconv");
  auto hh = wavelet::haar_filter(in.low, wavelet::HaarBand::HH);
  auto l_to_h = conv3(hh, *p.l_to_h);
  auto h_to_l = conv3(wavelet::haar_filter(in.high, wavelet::HaarBand::LL), *p.h_to_l);
  if (probe) {
    probe->hh_filtered.push_back(hh.value());
    probe->l_to_h_terms.push_back(l_to_h.value());
  }
  return {add(residual_block(in.low, *p.intra_l, slope), h_to_l),
          add(residual_block(in.high, p.intra_h, slope), l_to_h)};
}

template <typename T>
FrequencyPair<Var<T>> weoctconv_first(const Var<T>& x, const OctaveLayerParams<T>& p,
                                      T slope) {
  require(p.boundary == Boundary::first, "weoctconv_first: layer is not a first layer");
  auto low = conv3(wavelet::haar_filter(x, wavelet::HaarBand::LL), *p.h_to_l);
  return {low, residual_block(x, p.intra_h, slope)};
}

template <typename T>
FrequencyPair<Var<T>> tweoctconv(const FrequencyPair<Var<T>>& in,
                                 const OctaveLayerParams<T>& p, T slope) {
  require(p.boundary == Boundary::interior, "tweoctconv: layer is not an interior layer");
  require_pair(in, "tweoctconv");
  return {add(residual_block(in.low, *p.intra_l, slope), conv3ps(in.high, p.h_to_l->var)),
          add(residual_block(in.high, p.intra_h, slope), conv3ps(in.low, p.l_to_h->var))};
}

template <typename T>
Var<T> tweoctconv_last(const FrequencyPair<Var<T>>& in, const OctaveLayerParams<T>& p,
                       T slope) {
  require(p.boundary == Boundary::last, "tweoctconv_last: layer is not a last layer");
  require_pair(in, "tweoctconv_last");
  return add(residual_block(in.high, p.intra_h, slope), conv3ps(in.low, p.l_to_h->var));
}

constexpr double kSummedGain = 1.0 / 3.0;

template <typename T>
Parameter<T> make_conv_weight(std::string name, std::size_t cout, std::size_t cin,
                              std::size_t k, Rng& rng, double gain) {
  Tensor<T> w(Shape{cout, cin, k, k});
  const double stddev = std::sqrt(gain / static_cast<double>(cin * k * k));
  for (auto& v : w.values()) v = static_cast<T>(stddev * normal(rng));
  return Parameter<T>(std::move(name), std::move(w));
}

template <typename T>
GdnParams<T> make_gdn(const std::string& name, std::size_t channels) {
  Tensor<T> beta(Shape{channels}, T(1));
  // gamma = 0.1 on the diagonal; a small off-diagonal value keeps the squared
  // parameterisation away from its zero-gradient point.
  Tensor<T> gamma(Shape{channels, channels}, T(1e-3));
  for (std::size_t i = 0; i < channels; ++i) gamma[i * channels + i] = T(std::sqrt(0.1));
  return {Parameter<T>(name + ".beta", std::move(beta)),
          Parameter<T>(name + ".gamma", std::move(gamma))};
}

template <typename T>
ResidualBlockParams<T> make_residual_block(const std::string& name, RbDirection dir,
                                           std::size_t cin, std::size_t cout, Rng& rng) {
  ResidualBlockParams<T> rb;
  rb.direction = dir;
  const std::size_t first_out = dir == RbDirection::down ? cout : 4 * cout;
  rb.main_in = make_conv_weight<T>(name + ".main_in", first_out, cin, 3, rng);
  rb.main_out = make_conv_weight<T>(name + ".main_out", cout, cout, 3, rng, kSummedGain);
  rb.skip = dir == RbDirection::down
                ? make_conv_weight<T>(name + ".skip", cout, cin, 1, rng, kSummedGain)
                : make_conv_weight<T>(name + ".skip", 4 * cout, cin, 3, rng, kSummedGain);
  return rb;
}

template <typename T>
OctaveLayerParams<T> make_octave_layer(const std::string& name, RbDirection dir,
                                       Boundary boundary, std::size_t cin,
                                       std::size_t cout, Rng& rng) {
  require(!(dir == RbDirection::down && boundary == Boundary::last),
          "analysis layers have no `last` boundary");
  require(!(dir == RbDirection::up && boundary == Boundary::first),
          "synthesis layers have no `first` boundary");
  OctaveLayerParams<T> p;
  p.boundary = boundary;
  const std::size_t inter_out = dir == RbDirection::down ? cout : 4 * cout;
  p.intra_h = make_residual_block<T>(name + ".intra_h", dir, cin, cout, rng);
  if (boundary == Boundary::interior) {
    p.intra_l = make_residual_block<T>(name + ".intra_l", dir, cin, cout, rng);
  }
  if (boundary != Boundary::last) {
    p.h_to_l = make_conv_weight<T>(name + ".h_to_l", inter_out, cin, 3, rng, kSummedGain);
  }
  if (boundary != Boundary::first) {
    p.l_to_h = make_conv_weight<T>(name + ".l_to_h", inter_out, cin, 3, rng, kSummedGain);
  }
  return p;
}

#define FLIC_INSTANTIATE(T)                                                          \
  template Var<T> gdn_beta<T>(const GdnParams<T>&);                                  \
  template Var<T> gdn_gamma<T>(const GdnParams<T>&);                                 \
  template Var<T> gdn<T>(const Var<T>&, const GdnParams<T>&);                        \
  template Var<T> igdn<T>(const Var<T>&, const GdnParams<T>&);                       \
  template Var<T> conv3ps<T>(const Var<T>&, const Var<T>&);                          \
  template Var<T> residual_block<T>(const Var<T>&, const ResidualBlockParams<T>&, T); \
  template FrequencyPair<Var<T>> weoctconv<T>(const FrequencyPair<Var<T>>&,          \
                                              const OctaveLayerParams<T>&, T,        \
                                              OctaveProbe<T>*);                      \
  template FrequencyPair<Var<T>> weoctconv_first<T>(const Var<T>&,                   \
                                                    const OctaveLayerParams<T>&, T); \
  template FrequencyPair<Var<T>> tweoctconv<T>(const FrequencyPair<Var<T>>&,         \
                                               const OctaveLayerParams<T>&, T);      \
  template Var<T> tweoctconv_last<T>(const FrequencyPair<Var<T>>&,                   \
                                     const OctaveLayerParams<T>&, T);                \
  template Parameter<T> make_conv_weight<T>(std::string, std::size_t, std::size_t,   \
                                            std::size_t, Rng&, double);                \
  template GdnParams<T> make_gdn<T>(const std::string&, std::size_t);                \
  template ResidualBlockParams<T> make_residual_block<T>(                            \
      const std::string&, RbDirection, std::size_t, std::size_t, Rng&);              \
  template OctaveLayerParams<T> make_octave_layer<T>(                                \
      const std::string&, RbDirection, Boundary, std::size_t, std::size_t, Rng&);

FLIC_INSTANTIATE(float)
FLIC_INSTANTIATE(double)

#undef FLIC_INSTANTIATE

}  // namespace flic
