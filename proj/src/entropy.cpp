#include "flic/entropy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace flic::entropy {

namespace {

constexpr std::uint32_t kRansLow = 1u << 23;

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Probability mass between two CDF logits, evaluated on whichever side of the
// median avoids cancellation.
double mass_between(double lower_logit, double upper_logit) {
  const double p = (lower_logit + upper_logit > 0)
                       ? sigmoid(-lower_logit) - sigmoid(-upper_logit)
                       : sigmoid(upper_logit) - sigmoid(lower_logit);
  return std::max(p, 0.0);
}

}  // namespace

template <typename T>
FactorizedDensity<T> make_density(const std::string& name, std::size_t channels, Rng& rng,
                                  double init_scale) {
  using D = FactorizedDensity<T>;
  D d;
  const double scale = std::pow(init_scale, 1.0 / static_cast<double>(D::kStages));
  for (std::size_t i = 0; i < D::kStages; ++i) {
    const std::size_t in = D::kWidths[i], out = D::kWidths[i + 1];
    const double init = std::log(std::expm1(1.0 / scale / static_cast<double>(out)));
    d.matrices[i] = Parameter<T>(name + ".matrix" + std::to_string(i),
                                 Tensor<T>(Shape{channels, out, in}, static_cast<T>(init)));
    Tensor<T> bias(Shape{channels, out});
    for (auto& v : bias.values()) v = static_cast<T>(uniform(rng, -0.5, 0.5));
    d.biases[i] = Parameter<T>(name + ".bias" + std::to_string(i), std::move(bias));
    if (i + 1 < D::kStages) {
      d.gates[i] = Parameter<T>(name + ".gate" + std::to_string(i), Tensor<T>(Shape{channels, out}));
    }
  }
  return d;
}

template <typename T>
Var<T> cdf_logits(const FactorizedDensity<T>& d, const Var<T>& x) {
  const std::size_t c = d.channels();
  require(x.value().rank() >= 1 && x.shape()[0] == c,
          "density expects " + std::to_string(c) + " channels, got " + shape_str(x.shape()));
  const std::size_t n = x.value().size() / c;
  auto h = reshape(x, Shape{c, 1, n});
  for (std::size_t i = 0; i < FactorizedDensity<T>::kStages; ++i) {
    h = channel_matmul(softplus(d.matrices[i].var), h);
    h = add_leading(h, d.biases[i].var);
    if (i + 1 < FactorizedDensity<T>::kStages) {
      h = add(h, mul_leading(tanh(h), tanh(d.gates[i].var)));
    }
  }
  return reshape(h, x.shape());
}

template <typename T>
Var<T> likelihood(const Var<T>& y, const FactorizedDensity<T>& d) {
  auto lower = cdf_logits(d, add_scalar(y, T(-0.5)));
  auto upper = cdf_logits(d, add_scalar(y, T(0.5)));
  // Evaluate on the side of the median where the difference is well
  // conditioned; the sign itself carries no gradient.
  Tensor<T> sign(y.shape());
  for (std::size_t i = 0; i < sign.size(); ++i) {
    sign[i] = (lower.value()[i] + upper.value()[i] > T(0)) ? T(-1) : T(1);
  }
  auto s = Var<T>::constant(std::move(sign));
  auto p = abs(sub(sigmoid(mul(s, upper)), sigmoid(mul(s, lower))));
  return lower_bound(p, T(kLikelihoodFloor));
}

template <typename T>
Var<T> rate_bits(const Var<T>& y, const FactorizedDensity<T>& d) {
  return scale(sum(log(likelihood(y, d))), T(-1.0 / std::numbers::ln2));
}

template <typename T>
double estimate_bits(const Tensor<T>& y, const FactorizedDensity<T>& d) {
  return static_cast<double>(rate_bits(Var<T>::constant(y), d).value().item());
}

template <typename T>
Tensor<T> round_half_away(const Tensor<T>& y) {
  Tensor<T> out = y;
  for (auto& v : out.values()) v = std::round(v);
  return out;
}

template <typename T>
Var<T> quantize(const Var<T>& y, QuantizeMode mode, Rng* rng) {
  if (mode == QuantizeMode::round) return Var<T>::constant(round_half_away(y.value()));
  require(rng != nullptr, "quantize: noise mode requires an rng");
  Tensor<T> u(y.shape());
  for (auto& v : u.values()) v = static_cast<T>(uniform(*rng, -0.5, 0.5));
  return add(y, Var<T>::constant(std::move(u)));
}

template <typename T>
IntTensor to_symbols(const Tensor<T>& y) {
  IntTensor out(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double r = std::round(static_cast<double>(y[i]));
    require(std::isfinite(r) && std::abs(r) < 1e9, "to_symbols: value out of range");
    out[i] = static_cast<std::int32_t>(r);
  }
  return out;
}

template <typename T>
Tensor<T> from_symbols(const IntTensor& s) {
  return s.template cast<T>();
}

template <typename T>
void fit_density(FactorizedDensity<T>& d, const Tensor<T>& samples, int steps, double lr) {
  std::vector<Parameter<T>*> params;
  d.for_each_parameter([&](Parameter<T>& p) { params.push_back(&p); });
  const auto x = Var<T>::constant(samples);
  const T norm = T(1) / static_cast<T>(samples.size());
  AdamOptions opt;
  opt.lr = lr;
  for (int i = 0; i < steps; ++i) {
    backward(scale(rate_bits(x, d), norm));
    adam_step<T>(params, opt);
  }
}

template <typename T>
std::vector<SymbolRange> symbol_ranges(const IntTensor& symbols, const FactorizedDensity<T>& d) {
  const std::size_t c = d.channels();
  require(symbols.rank() >= 1 && symbols.dim(0) == c,
          "symbol_ranges: tensor " + shape_str(symbols.shape()) + " vs " + std::to_string(c) +
              " channels");
  const std::size_t n = symbols.size() / c;
  std::vector<SymbolRange> ranges(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const auto* s = symbols.data() + ch * n;
    const auto [lo, hi] = std::minmax_element(s, s + n);
    ranges[ch] = {*lo, *hi};
  }

  // Bisection on the monotone logits for the tail quantiles of every channel.
  const auto dd = d.template cast<double>();
  const double tail_logit = std::log(kTailMass / (1.0 - kTailMass));
  auto quantile = [&](double target) {
    std::vector<double> lo(c, -32768.0), hi(c, 32767.0);
    for (int it = 0; it < 48; ++it) {
      Tensor<double> mid(Shape{c});
      for (std::size_t ch = 0; ch < c; ++ch) mid[ch] = 0.5 * (lo[ch] + hi[ch]);
      const auto f = cdf_logits(dd, Var<double>::constant(mid)).value();
      for (std::size_t ch = 0; ch < c; ++ch) (f[ch] < target ? lo[ch] : hi[ch]) = mid[ch];
    }
    return lo;
  };
  const auto qlo = quantile(tail_logit);
  const auto qhi = quantile(-tail_logit);
  for (std::size_t ch = 0; ch < c; ++ch) {
    auto& r = ranges[ch];
    require(r.min >= std::numeric_limits<std::int16_t>::min() &&
                r.max <= std::numeric_limits<std::int16_t>::max() &&
                r.count() <= static_cast<std::int32_t>(kPrecisionTotal),
            "symbol_ranges: channel " + std::to_string(ch) + " spans [" +
                std::to_string(r.min) + ", " + std::to_string(r.max) +
                "], outside the codable range");
    const auto tail_lo = static_cast<std::int32_t>(std::floor(qlo[ch]));
    const auto tail_hi = static_cast<std::int32_t>(std::ceil(qhi[ch]));
    std::int32_t new_min = std::max({std::min(r.min, tail_lo), r.min - kMaxTailSymbols,
                                     std::int32_t{std::numeric_limits<std::int16_t>::min()}});
    std::int32_t new_max = std::min({std::max(r.max, tail_hi), r.max + kMaxTailSymbols,
                                     std::int32_t{std::numeric_limits<std::int16_t>::max()}});
    if (new_max - new_min + 1 <= static_cast<std::int32_t>(kPrecisionTotal)) {
      r = {new_min, new_max};
    }
  }
  return ranges;
}

ChannelCdf quantize_pmf(std::int32_t offset, std::span<const double> pmf) {
  const std::size_t n = pmf.size();
  require(n >= 1 && n <= kPrecisionTotal, "quantize_pmf: unsupported alphabet size");
  double total = 0;
  for (double p : pmf) total += (std::isfinite(p) && p > 0) ? p : 0.0;
  const double spare = static_cast<double>(kPrecisionTotal - n);
  std::vector<std::uint32_t> freq(n, 1);
  std::size_t best = 0;
  std::uint32_t used = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = (std::isfinite(pmf[i]) && pmf[i] > 0) ? pmf[i] : 0.0;
    if (total > 0) freq[i] += static_cast<std::uint32_t>(std::floor(p / total * spare));
    if (p > pmf[best] || !(pmf[best] > 0)) best = p > 0 ? i : best;
    used += freq[i];
  }
  freq[best] += kPrecisionTotal - used;
  ChannelCdf out;
  out.offset = offset;
  out.cdf.resize(n + 1);
  for (std::size_t i = 0; i < n; ++i) out.cdf[i + 1] = out.cdf[i] + freq[i];
  return out;
}

template <typename T>
CdfTable build_cdf_tables(const FactorizedDensity<T>& d, std::span<const SymbolRange> ranges) {
  const std::size_t c = d.channels();
  require(ranges.size() == c, "build_cdf_tables: expected " + std::to_string(c) + " ranges");
  std::size_t widest = 0;
  for (const auto& r : ranges) {
    require(r.min <= r.max && r.count() <= static_cast<std::int32_t>(kPrecisionTotal),
            "build_cdf_tables: invalid symbol range");
    widest = std::max<std::size_t>(widest, static_cast<std::size_t>(r.count()));
  }
  // Logits at every bin edge, all channels in one pass; short rows are padded.
  Tensor<double> edges(Shape{c, widest + 1});
  for (std::size_t ch = 0; ch < c; ++ch) {
    const auto count = static_cast<std::size_t>(ranges[ch].count());
    for (std::size_t k = 0; k <= widest; ++k) {
      edges[ch * (widest + 1) + k] = ranges[ch].min - 0.5 + static_cast<double>(std::min(k, count));
    }
  }
  const auto logits = cdf_logits(d.template cast<double>(), Var<double>::constant(edges)).value();
  CdfTable table(c);
  std::vector<double> pmf;
  for (std::size_t ch = 0; ch < c; ++ch) {
    const auto count = static_cast<std::size_t>(ranges[ch].count());
    pmf.assign(count, 0.0);
    const double* l = logits.data() + ch * (widest + 1);
    for (std::size_t k = 0; k < count; ++k) pmf[k] = mass_between(l[k], l[k + 1]);
    table[ch] = quantize_pmf(ranges[ch].min, pmf);
  }
  return table;
}

CodedChunk ans_encode(const IntTensor& symbols, const CdfTable& table) {
  const std::size_t c = table.size();
  require(symbols.rank() >= 1 && symbols.dim(0) == c,
          "ans_encode: tensor " + shape_str(symbols.shape()) + " vs table of " +
              std::to_string(c) + " channels");
  const std::size_t n = symbols.size() / c;
  std::vector<std::uint8_t> out;
  out.reserve(symbols.size() / 2 + 16);
  std::uint32_t state = kRansLow;
  for (std::size_t idx = symbols.size(); idx-- > 0;) {
    const auto& t = table[idx / n];
    const std::int64_t s = static_cast<std::int64_t>(symbols[idx]) - t.offset;
    if (s < 0 || s >= static_cast<std::int64_t>(t.symbols())) {
      throw std::invalid_argument("ans_encode: symbol " + std::to_string(symbols[idx]) +
                                  " outside channel range [" + std::to_string(t.offset) + ", " +
                                  std::to_string(t.offset + static_cast<std::int64_t>(t.symbols()) - 1) + "]");
    }
    const std::uint32_t start = t.cdf[s];
    const std::uint32_t freq = t.cdf[s + 1] - start;
    const std::uint64_t limit = static_cast<std::uint64_t>((kRansLow >> kPrecisionBits) << 8) * freq;
    while (state >= limit) {
      out.push_back(static_cast<std::uint8_t>(state & 0xff));
      state >>= 8;
    }
    state = ((state / freq) << kPrecisionBits) + (state % freq) + start;
  }
  for (int i = 3; i >= 0; --i) out.push_back(static_cast<std::uint8_t>(state >> (8 * i)));
  std::reverse(out.begin(), out.end());

  CodedChunk chunk;
  chunk.ranges.reserve(c);
  for (const auto& t : table) {
    chunk.ranges.push_back({t.offset, t.offset + static_cast<std::int32_t>(t.symbols()) - 1});
  }
  chunk.payload = std::move(out);
  return chunk;
}

IntTensor ans_decode(const CodedChunk& chunk, const CdfTable& table, const Shape& shape) {
  const std::size_t c = table.size();
  require(!shape.empty() && shape[0] == c,
          "ans_decode: shape " + shape_str(shape) + " vs table of " + std::to_string(c) +
              " channels");
  const auto& buf = chunk.payload;
  if (buf.size() < 4) throw FormatError("ans payload shorter than coder state", buf.size());
  std::size_t pos = 0;
  std::uint32_t state = 0;
  for (; pos < 4; ++pos) state |= static_cast<std::uint32_t>(buf[pos]) << (8 * pos);

  IntTensor out(shape);
  const std::size_t n = out.size() / c;
  constexpr std::uint32_t mask = kPrecisionTotal - 1;
  for (std::size_t idx = 0; idx < out.size(); ++idx) {
    const auto& t = table[idx / n];
    const std::uint32_t cum = state & mask;
    const auto it = std::upper_bound(t.cdf.begin(), t.cdf.end(), cum);
    const auto s = static_cast<std::size_t>(it - t.cdf.begin()) - 1;
    if (s >= t.symbols()) throw FormatError("ans payload decodes outside the table", pos);
    const std::uint32_t start = t.cdf[s];
    const std::uint32_t freq = t.cdf[s + 1] - start;
    state = freq * (state >> kPrecisionBits) + cum - start;
    while (state < kRansLow) {
      if (pos >= buf.size()) throw FormatError("ans payload exhausted", pos);
      state = (state << 8) | buf[pos++];
    }
    out[idx] = t.offset + static_cast<std::int32_t>(s);
  }
  if (state != kRansLow || pos != buf.size()) {
    throw FormatError("ans payload failed final state check", pos);
  }
  return out;
}

template <typename T>
CodedChunk encode_latent(const IntTensor& symbols, const FactorizedDensity<T>& d) {
  const auto ranges = symbol_ranges(symbols, d);
  return ans_encode(symbols, build_cdf_tables(d, ranges));
}

template <typename T>
IntTensor decode_latent(const CodedChunk& chunk, const FactorizedDensity<T>& d,
                        const Shape& shape) {
  if (chunk.ranges.size() != d.channels()) {
    throw FormatError("chunk has " + std::to_string(chunk.ranges.size()) +
                          " channels, density has " + std::to_string(d.channels()),
                      0);
  }
  return ans_decode(chunk, build_cdf_tables(d, chunk.ranges), shape);
}

void write_chunk(ByteWriter& out, const CodedChunk& chunk) {
  require(chunk.ranges.size() <= 0xffff, "write_chunk: too many channels");
  require(chunk.payload.size() <= 0xffffffffu, "write_chunk: payload too large");
  out.u16(static_cast<std::uint16_t>(chunk.ranges.size()));
  for (const auto& r : chunk.ranges) {
    require(r.min >= std::numeric_limits<std::int16_t>::min() &&
                r.max <= std::numeric_limits<std::int16_t>::max(),
            "write_chunk: range outside int16");
    out.i16(static_cast<std::int16_t>(r.min));
    out.i16(static_cast<std::int16_t>(r.max));
  }
  out.u32(static_cast<std::uint32_t>(chunk.payload.size()));
  out.bytes(chunk.payload);
}

CodedChunk read_chunk(ByteReader& in) {
  CodedChunk chunk;
  const std::size_t channels = in.u16();
  chunk.ranges.reserve(channels);
  for (std::size_t i = 0; i < channels; ++i) {
    const std::size_t at = in.offset();
    const std::int32_t lo = in.i16();
    const std::int32_t hi = in.i16();
    if (lo > hi) throw FormatError("chunk symbol range has min > max", at);
    chunk.ranges.push_back({lo, hi});
  }
  const std::uint32_t len = in.u32();
  const auto payload = in.bytes(len);
  chunk.payload.assign(payload.begin(), payload.end());
  return chunk;
}

std::size_t chunk_wire_size(const CodedChunk& chunk) {
  return 2 + 4 * chunk.ranges.size() + 4 + chunk.payload.size();
}

#define FLIC_INSTANTIATE(T)                                                                 \
  template FactorizedDensity<T> make_density<T>(const std::string&, std::size_t, Rng&,     \
                                                double);                                   \
  template Var<T> cdf_logits<T>(const FactorizedDensity<T>&, const Var<T>&);                \
  template Var<T> likelihood<T>(const Var<T>&, const FactorizedDensity<T>&);                \
  template Var<T> rate_bits<T>(const Var<T>&, const FactorizedDensity<T>&);                 \
  template double estimate_bits<T>(const Tensor<T>&, const FactorizedDensity<T>&);          \
  template Var<T> quantize<T>(const Var<T>&, QuantizeMode, Rng*);                           \
  template Tensor<T> round_half_away<T>(const Tensor<T>&);                                  \
  template IntTensor to_symbols<T>(const Tensor<T>&);                                       \
  template Tensor<T> from_symbols<T>(const IntTensor&);                                     \
  template void fit_density<T>(FactorizedDensity<T>&, const Tensor<T>&, int, double);       \
  template std::vector<SymbolRange> symbol_ranges<T>(const IntTensor&,                      \
                                                     const FactorizedDensity<T>&);          \
  template CdfTable build_cdf_tables<T>(const FactorizedDensity<T>&,                        \
                                        std::span<const SymbolRange>);                      \
  template CodedChunk encode_latent<T>(const IntTensor&, const FactorizedDensity<T>&);      \
  template IntTensor decode_latent<T>(const CodedChunk&, const FactorizedDensity<T>&,       \
                                      const Shape&);

FLIC_INSTANTIATE(float)
FLIC_INSTANTIATE(double)

#undef FLIC_INSTANTIATE

}  // namespace flic::entropy
