#pragma once

// The full analysis/synthesis network: stages of WeOctConv followed by one
// GDN per branch, and the mirrored synthesis ending in a single RGB port.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "flic/entropy.hpp"
#include "flic/layers.hpp"

namespace flic {

struct FlicConfig {
  int stages = 4;
  std::vector<std::size_t> channels{32, 64, 96, 128};  // per-stage Cout, both branches
  double lrelu_slope = kDefaultLreluSlope;
  std::size_t image_channels = 3;

  std::size_t latent_channels() const { return channels.back(); }
  std::size_t downsampling() const { return std::size_t{1} << stages; }
  /// Throws std::invalid_argument describing the first violated constraint.
  void validate() const;

  static FlicConfig toy();
  /// Roughly 30M parameters.
  static FlicConfig large();

  bool operator==(const FlicConfig&) const = default;
};

template <typename T>
struct FlicModelT {
  FlicConfig config;
  std::vector<OctaveLayerParams<T>> analysis;
  GdnParams<T> gdn_low, gdn_high;
  Parameter<T> synth_in_low, synth_in_high;  // Conv3 ahead of each IGDN
  GdnParams<T> igdn_low, igdn_high;
  std::vector<OctaveLayerParams<T>> synthesis;
  entropy::FactorizedDensity<T> density_low, density_high;

  template <typename F>
  void for_each_parameter(F&& f);
  template <typename F>
  void for_each_parameter(F&& f) const;

  std::size_t parameter_count() const;

  /// Copies every parameter into U precision; optimiser state is dropped.
  template <typename U>
  FlicModelT<U> cast() const;
  /// Independent deep copy including optimiser state.
  FlicModelT clone() const;
};

using FlicModel = FlicModelT<float>;

using LatentPair = FrequencyPair<Tensor<float>>;

template <typename T>
FlicModelT<T> init_model(const FlicConfig& cfg, std::uint64_t seed);

/// Analysis transform: image [3,H,W] in [0,1] to the latent pair. H and W must be
/// at least 2^stages. `probe`, when given, records every L->H path.
template <typename T>
FrequencyPair<Var<T>> analyze(const Var<T>& x, const FlicModelT<T>& m,
                              OctaveProbe<T>* probe = nullptr);

/// Synthesis back to [3, out_h, out_w]. Zero means h * 2^stages. The output
/// is the top-left crop of the full-resolution reconstruction and is not
/// clamped.
template <typename T>
Var<T> synthesize(const FrequencyPair<Var<T>>& y, const FlicModelT<T>& m,
                  std::size_t out_h = 0, std::size_t out_w = 0);

/// Latent grid size for an image dimension.
std::size_t latent_extent(std::size_t image_extent, int stages);

using ModelId = std::array<std::uint8_t, 8>;

std::vector<std::uint8_t> serialize_weights(const FlicModel& m);
/// Throws FormatError on bad magic, version, dtype, truncation, or a tensor
/// set that does not match the stored configuration.
FlicModel parse_weights(std::span<const std::uint8_t> bytes);

void save_weights(const FlicModel& m, const std::filesystem::path& path);
FlicModel load_weights(const std::filesystem::path& path);

/// 64-bit FNV-1a of the serialized weight file, little-endian.
ModelId model_id(const FlicModel& m);
ModelId model_id_of_bytes(std::span<const std::uint8_t> bytes);
std::string model_id_hex(const ModelId& id);

// ---- implementation of the member templates ----

namespace detail {

template <typename T, typename F>
void visit_rb(ResidualBlockParams<T>& rb, F& f) {
  f(rb.main_in);
  f(rb.main_out);
  f(rb.skip);
}
template <typename T, typename F>
void visit_rb(const ResidualBlockParams<T>& rb, F& f) {
  f(rb.main_in);
  f(rb.main_out);
  f(rb.skip);
}

template <typename L, typename F>
void visit_layer(L& layer, F& f) {
  visit_rb(layer.intra_h, f);
  if (layer.intra_l) visit_rb(*layer.intra_l, f);
  if (layer.h_to_l) f(*layer.h_to_l);
  if (layer.l_to_h) f(*layer.l_to_h);
}

template <typename M, typename F>
void visit_model(M& m, F& f) {
  for (auto& layer : m.analysis) visit_layer(layer, f);
  f(m.gdn_low.raw_beta);
  f(m.gdn_low.raw_gamma);
  f(m.gdn_high.raw_beta);
  f(m.gdn_high.raw_gamma);
  f(m.synth_in_low);
  f(m.synth_in_high);
  f(m.igdn_low.raw_beta);
  f(m.igdn_low.raw_gamma);
  f(m.igdn_high.raw_beta);
  f(m.igdn_high.raw_gamma);
  for (auto& layer : m.synthesis) visit_layer(layer, f);
  m.density_low.for_each_parameter(f);
  m.density_high.for_each_parameter(f);
}

template <typename U, typename T, typename F>
OctaveLayerParams<U> map_layer(const OctaveLayerParams<T>& in, F& f) {
  auto rb = [&](const ResidualBlockParams<T>& r) {
    ResidualBlockParams<U> o;
    o.direction = r.direction;
    o.main_in = f(r.main_in);
    o.main_out = f(r.main_out);
    o.skip = f(r.skip);
    return o;
  };
  OctaveLayerParams<U> out;
  out.boundary = in.boundary;
  out.intra_h = rb(in.intra_h);
  if (in.intra_l) out.intra_l = rb(*in.intra_l);
  if (in.h_to_l) out.h_to_l = f(*in.h_to_l);
  if (in.l_to_h) out.l_to_h = f(*in.l_to_h);
  return out;
}

template <typename U, typename T, typename F>
entropy::FactorizedDensity<U> map_density(const entropy::FactorizedDensity<T>& in, F& f) {
  entropy::FactorizedDensity<U> out;
  for (std::size_t i = 0; i < in.matrices.size(); ++i) out.matrices[i] = f(in.matrices[i]);
  for (std::size_t i = 0; i < in.biases.size(); ++i) out.biases[i] = f(in.biases[i]);
  for (std::size_t i = 0; i < in.gates.size(); ++i) out.gates[i] = f(in.gates[i]);
  return out;
}

template <typename U, typename T, typename F>
FlicModelT<U> map_model(const FlicModelT<T>& m, F f) {
  FlicModelT<U> out;
  out.config = m.config;
  for (const auto& l : m.analysis) out.analysis.push_back(map_layer<U>(l, f));
  out.gdn_low = {f(m.gdn_low.raw_beta), f(m.gdn_low.raw_gamma)};
  out.gdn_high = {f(m.gdn_high.raw_beta), f(m.gdn_high.raw_gamma)};
  out.synth_in_low = f(m.synth_in_low);
  out.synth_in_high = f(m.synth_in_high);
  out.igdn_low = {f(m.igdn_low.raw_beta), f(m.igdn_low.raw_gamma)};
  out.igdn_high = {f(m.igdn_high.raw_beta), f(m.igdn_high.raw_gamma)};
  for (const auto& l : m.synthesis) out.synthesis.push_back(map_layer<U>(l, f));
  out.density_low = map_density<U>(m.density_low, f);
  out.density_high = map_density<U>(m.density_high, f);
  return out;
}

}  // namespace detail

template <typename T>
template <typename F>
void FlicModelT<T>::for_each_parameter(F&& f) {
  detail::visit_model(*this, f);
}

template <typename T>
template <typename F>
void FlicModelT<T>::for_each_parameter(F&& f) const {
  detail::visit_model(*this, f);
}

template <typename T>
std::size_t FlicModelT<T>::parameter_count() const {
  std::size_t n = 0;
  for_each_parameter([&](const Parameter<T>& p) { n += p.value().size(); });
  return n;
}

template <typename T>
template <typename U>
FlicModelT<U> FlicModelT<T>::cast() const {
  return detail::map_model<U>(*this, [](const Parameter<T>& p) { return p.template cast<U>(); });
}

template <typename T>
FlicModelT<T> FlicModelT<T>::clone() const {
  return detail::map_model<T>(*this, [](const Parameter<T>& p) { return p.detached_copy(); });
}

}  // namespace flic
