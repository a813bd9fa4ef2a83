#pragma once

// Factorized-prior density model, quantisation, and the rANS coder that
// turns quantised latents into bytes.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "flic/bytes.hpp"
#include "flic/optim.hpp"
#include "flic/random.hpp"

namespace flic::entropy {

inline constexpr int kPrecisionBits = 16;
inline constexpr std::uint32_t kPrecisionTotal = 1u << kPrecisionBits;
inline constexpr double kLikelihoodFloor = 1e-9;
inline constexpr double kTailMass = 1e-9;
// Tail widening never adds more than this many symbols on either side.
inline constexpr std::int32_t kMaxTailSymbols = 64;

/// Per-channel monotone CDF network c(x) = sigmoid(f(x)), where f chains
/// four affine stages of widths 1->3->3->3->1. Matrices pass through
/// softplus and gates through tanh, so f is nondecreasing for any raw
/// parameter values.
template <typename T>
struct FactorizedDensity {
  static constexpr std::array<std::size_t, 5> kWidths{1, 3, 3, 3, 1};
  static constexpr std::size_t kStages = 4;

  std::array<Parameter<T>, kStages> matrices;    // raw [C, out, in]
  std::array<Parameter<T>, kStages> biases;      // [C, out]
  std::array<Parameter<T>, kStages - 1> gates;   // raw [C, out]

  std::size_t channels() const { return matrices[0].shape()[0]; }

  template <typename F>
  void for_each_parameter(F&& f) {
    for (auto& p : matrices) f(p);
    for (auto& p : biases) f(p);
    for (auto& p : gates) f(p);
  }
  template <typename F>
  void for_each_parameter(F&& f) const {
    for (const auto& p : matrices) f(p);
    for (const auto& p : biases) f(p);
    for (const auto& p : gates) f(p);
  }

  template <typename U>
  FactorizedDensity<U> cast() const {
    FactorizedDensity<U> d;
    for (std::size_t i = 0; i < kStages; ++i) {
      d.matrices[i] = matrices[i].template cast<U>();
      d.biases[i] = biases[i].template cast<U>();
      if (i + 1 < kStages) d.gates[i] = gates[i].template cast<U>();
    }
    return d;
  }
};

template <typename T>
FactorizedDensity<T> make_density(const std::string& name, std::size_t channels, Rng& rng,
                                  double init_scale = 10.0);

/// f(x) for x of shape [C, ...]; the CDF is sigmoid of the result.
template <typename T>
Var<T> cdf_logits(const FactorizedDensity<T>& d, const Var<T>& x);

/// p(y) = c(y + 1/2) - c(y - 1/2), floored at kLikelihoodFloor.
template <typename T>
Var<T> likelihood(const Var<T>& y, const FactorizedDensity<T>& d);

/// Differentiable sum of -log2 p(y).
template <typename T>
Var<T> rate_bits(const Var<T>& y, const FactorizedDensity<T>& d);

template <typename T>
double estimate_bits(const Tensor<T>& y, const FactorizedDensity<T>& d);

enum class QuantizeMode { round, noise };

/// round: half away from zero. noise: y + U(-1/2, 1/2), gradient passes
/// straight through. Noise mode requires an rng.
template <typename T>
Var<T> quantize(const Var<T>& y, QuantizeMode mode, Rng* rng = nullptr);

template <typename T>
Tensor<T> round_half_away(const Tensor<T>& y);

/// Rounds to int32 symbols (half away from zero).
template <typename T>
IntTensor to_symbols(const Tensor<T>& y);

template <typename T>
Tensor<T> from_symbols(const IntTensor& s);

/// Maximum-likelihood fit of `d` to integer-valued samples [C, ...].
template <typename T>
void fit_density(FactorizedDensity<T>& d, const Tensor<T>& samples, int steps,
                 double lr = 0.01);

struct SymbolRange {
  std::int32_t min = 0;
  std::int32_t max = 0;
  std::int32_t count() const { return max - min + 1; }
  bool operator==(const SymbolRange&) const = default;
};

struct ChannelCdf {
  std::int32_t offset = 0;
  std::vector<std::uint32_t> cdf;  // symbols()+1 entries, 0 .. kPrecisionTotal
  std::size_t symbols() const { return cdf.size() - 1; }
  bool operator==(const ChannelCdf&) const = default;
};

using CdfTable = std::vector<ChannelCdf>;

/// Per-channel [min, max] of `symbols` ([C, ...]), widened towards the
/// density's kTailMass quantiles by at most kMaxTailSymbols each side.
template <typename T>
std::vector<SymbolRange> symbol_ranges(const IntTensor& symbols, const FactorizedDensity<T>& d);

/// Deterministic 16-bit quantisation of the model CDF over each range. Every
/// symbol in range receives a frequency of at least 1.
template <typename T>
CdfTable build_cdf_tables(const FactorizedDensity<T>& d, std::span<const SymbolRange> ranges);

/// Quantises an arbitrary pmf (need not be normalised) to a ChannelCdf.
ChannelCdf quantize_pmf(std::int32_t offset, std::span<const double> pmf);

struct CodedChunk {
  std::vector<SymbolRange> ranges;
  std::vector<std::uint8_t> payload;
  bool operator==(const CodedChunk&) const = default;
};

/// rANS: 32-bit state, byte-wise renormalisation, 16-bit frequencies.
/// Channel c of the [C, ...] tensor is coded with table[c].
CodedChunk ans_encode(const IntTensor& symbols, const CdfTable& table);

/// Throws FormatError when the payload is inconsistent with the table.
IntTensor ans_decode(const CodedChunk& chunk, const CdfTable& table, const Shape& shape);

template <typename T>
CodedChunk encode_latent(const IntTensor& symbols, const FactorizedDensity<T>& d);

template <typename T>
IntTensor decode_latent(const CodedChunk& chunk, const FactorizedDensity<T>& d,
                        const Shape& shape);

/// Channel count (u16), per-channel min/max (i16), payload length (u32),
/// payload bytes; little-endian.
void write_chunk(ByteWriter& out, const CodedChunk& chunk);
CodedChunk read_chunk(ByteReader& in);

std::size_t chunk_wire_size(const CodedChunk& chunk);

}  // namespace flic::entropy
