#pragma once

#include <optional>
#include <vector>

#include "flic/optim.hpp"
#include "flic/random.hpp"
#include "flic/wavelet.hpp"

namespace flic {

/// Low/high frequency branches, used for features and latents alike.
template <typename V>
struct FrequencyPair {
  V low;
  V high;
};

inline constexpr double kGdnBetaFloor = 1e-6;
inline constexpr double kDefaultLreluSlope = 0.01;

// Stored as raw values: beta = raw_beta^2 + 1e-6, gamma = raw_gamma^2.
template <typename T>
struct GdnParams {
  Parameter<T> raw_beta;   // [C]
  Parameter<T> raw_gamma;  // [C,C]

  std::size_t channels() const { return raw_beta.shape()[0]; }
};

enum class RbDirection { down, up };

/// down: main = Conv3s2, LReLU, Conv3, LReLU; skip = Conv1s2.
/// up:   Conv3PS takes the place of both Conv3s2 and Conv1s2.
template <typename T>
struct ResidualBlockParams {
  RbDirection direction = RbDirection::down;
  Parameter<T> main_in;
  Parameter<T> main_out;
  Parameter<T> skip;

  std::size_t in_channels() const { return main_in.shape()[1]; }
  std::size_t out_channels() const { return main_out.shape()[0]; }
};

enum class Boundary { interior, first, last };

/// Parameters of one WeOctConv (analysis) or TWeOctConv (synthesis) layer.
/// `first` has no L input, so intra_l and the L->H path are absent.
/// `last` has no L output, so intra_l and the H->L path are absent.
template <typename T>
struct OctaveLayerParams {
  Boundary boundary = Boundary::interior;
  ResidualBlockParams<T> intra_h;
  std::optional<ResidualBlockParams<T>> intra_l;
  std::optional<Parameter<T>> h_to_l;  // Conv3 after LL (analysis) or Conv3PS
  std::optional<Parameter<T>> l_to_h;  // Conv3 after HH (analysis) or Conv3PS
};

/// Optional instrumentation: receives every HH-filtered L-branch tensor
/// (analysis) in layer order.
template <typename T>
struct OctaveProbe {
  std::vector<Tensor<T>> hh_filtered;
  std::vector<Tensor<T>> l_to_h_terms;
};

template <typename T> Var<T> gdn_beta(const GdnParams<T>& p);
template <typename T> Var<T> gdn_gamma(const GdnParams<T>& p);

/// y_i = x_i / sqrt(beta_i + sum_j gamma_ij x_j^2), per spatial position.
template <typename T> Var<T> gdn(const Var<T>& x, const GdnParams<T>& p);
/// y_i = x_i * sqrt(beta_i + sum_j gamma_ij x_j^2).
template <typename T> Var<T> igdn(const Var<T>& x, const GdnParams<T>& p);

/// Conv3 producing 4*Cout channels followed by pixel_shuffle.
template <typename T> Var<T> conv3ps(const Var<T>& x, const Var<T>& weight);

template <typename T>
Var<T> residual_block(const Var<T>& x, const ResidualBlockParams<T>& p, T slope);

template <typename T>
FrequencyPair<Var<T>> weoctconv(const FrequencyPair<Var<T>>& in,
                                const OctaveLayerParams<T>& p, T slope,
                                OctaveProbe<T>* probe = nullptr);

/// First analysis layer: the image feeds the H input; L output = Conv3(LL(x)).
template <typename T>
FrequencyPair<Var<T>> weoctconv_first(const Var<T>& x, const OctaveLayerParams<T>& p,
                                      T slope);

template <typename T>
FrequencyPair<Var<T>> tweoctconv(const FrequencyPair<Var<T>>& in,
                                 const OctaveLayerParams<T>& p, T slope);

/// Last synthesis layer: single output = RB_up_H(high) + Conv3PS(low).
template <typename T>
Var<T> tweoctconv_last(const FrequencyPair<Var<T>>& in, const OctaveLayerParams<T>& p,
                       T slope);

// Initialisers. Convolution weights are N(0, gain / fan_in); gain 2 is He
// scaling. Convs whose outputs are summed with others (residual main/skip,
// cross-frequency) start at gain 1/3 so each octave output keeps unit scale.
template <typename T>
Parameter<T> make_conv_weight(std::string name, std::size_t cout, std::size_t cin,
                              std::size_t k, Rng& rng, double gain = 2.0);

template <typename T>
GdnParams<T> make_gdn(const std::string& name, std::size_t channels);

template <typename T>
ResidualBlockParams<T> make_residual_block(const std::string& name, RbDirection dir,
                                           std::size_t cin, std::size_t cout, Rng& rng);

template <typename T>
OctaveLayerParams<T> make_octave_layer(const std::string& name, RbDirection dir,
                                       Boundary boundary, std::size_t cin,
                                       std::size_t cout, Rng& rng);

}  // namespace flic
