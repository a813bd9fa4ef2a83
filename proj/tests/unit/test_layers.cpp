#include "doctest.h"
#include "flic/layers.hpp"
#include "flic_test.hpp"

using namespace flic;
using flic::test::grad_check;
using flic::test::random_tensor;

namespace {
using V = Var<double>;
using P = Parameter<double>;

void zero(P& p) { p.var.mutable_value().fill(0.0); }

std::vector<V> leaves_of(const ResidualBlockParams<double>& rb) {
  return {rb.main_in.var, rb.main_out.var, rb.skip.var};
}

std::vector<V> leaves_of(const OctaveLayerParams<double>& p) {
  auto out = leaves_of(p.intra_h);
  if (p.intra_l) {
    for (auto& v : leaves_of(*p.intra_l)) out.push_back(v);
  }
  if (p.h_to_l) out.push_back(p.h_to_l->var);
  if (p.l_to_h) out.push_back(p.l_to_h->var);
  return out;
}

V weighted_sum(const V& y, Rng& rng) {
  return sum(mul(y, V::constant(random_tensor(rng, y.shape()))));
}
}  // namespace

TEST_CASE("gdn with zero gamma and unit beta is the identity") {
  auto p = make_gdn<double>("g", 3);
  zero(p.raw_gamma);
  p.raw_beta.var.mutable_value().fill(std::sqrt(1.0 - kGdnBetaFloor));
  Rng rng(1);
  auto x = V::constant(random_tensor(rng, {3, 4, 5}, -3, 3));
  CHECK(test::max_abs_diff(gdn(x, p).value(), x.value()) < 1e-12);
}

TEST_CASE("gdn with identity gamma and floored beta") {
  GdnParams<double> p{P("b", Tensor<double>(Shape{1}, 0.0)),
                      P("g", Tensor<double>(Shape{1, 1}, 1.0))};
  auto x = V::constant(Tensor<double>(Shape{1, 1, 1}, 3.0));
  CHECK(gdn(x, p).value().item() == doctest::Approx(3.0 / std::sqrt(1e-6 + 9.0)).epsilon(1e-12));
  CHECK(gdn(x, p).value().item() == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("igdn inverts gdn when gamma is zero") {
  Rng rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    auto p = make_gdn<double>("g", 4);
    zero(p.raw_gamma);
    for (auto& v : p.raw_beta.var.mutable_value().values()) v = uniform(rng, 0.1, 3.0);
    auto x = V::constant(random_tensor(rng, {4, 3, 3}, -5, 5));
    CHECK(test::max_abs_diff(igdn(gdn(x, p), p).value(), x.value()) < 1e-6);
  }
}

TEST_CASE("gdn stays finite and rejects channel mismatch") {
  auto p = make_gdn<double>("g", 2);
  zero(p.raw_beta);
  auto x = V::constant(Tensor<double>(Shape{2, 2, 2}, 0.0));
  for (double v : gdn(x, p).value().values()) CHECK(std::isfinite(v));
  CHECK_THROWS_AS(gdn(V::constant(Tensor<double>(Shape{3, 2, 2})), p), std::invalid_argument);
}

TEST_CASE("gdn and igdn gradients") {
  Rng rng(3);
  auto p = make_gdn<double>("g", 3);
  for (auto& v : p.raw_gamma.var.mutable_value().values()) v = uniform(rng, 0.1, 0.6);
  auto x = V::leaf(random_tensor(rng, {3, 4, 4}));
  auto leaves = std::vector<V>{x, p.raw_beta.var, p.raw_gamma.var};
  CHECK(grad_check(leaves, [&] { Rng r(5); return weighted_sum(gdn(x, p), r); }).max_rel_error < 1e-4);
  CHECK(grad_check(leaves, [&] { Rng r(6); return weighted_sum(igdn(x, p), r); }).max_rel_error < 1e-4);
}

TEST_CASE("residual block shapes and additive skip") {
  Rng rng(4);
  auto down = make_residual_block<double>("d", RbDirection::down, 8, 8, rng);
  auto up = make_residual_block<double>("u", RbDirection::up, 8, 8, rng);
  auto x16 = V::constant(random_tensor(rng, {8, 16, 16}));
  auto x8 = V::constant(random_tensor(rng, {8, 8, 8}));
  CHECK(residual_block(x16, down, 0.01).shape() == Shape{8, 8, 8});
  CHECK(residual_block(x8, up, 0.01).shape() == Shape{8, 16, 16});

  zero(down.main_in);
  CHECK(residual_block(x16, down, 0.01).value() == conv2d(x16, down.skip.var, 2, 0).value());
  zero(up.main_out);
  CHECK(residual_block(x8, up, 0.01).value() == conv3ps(x8, up.skip.var).value());

  CHECK_THROWS_AS(residual_block(V::constant(Tensor<double>(Shape{3, 8, 8})), down, 0.01),
                  std::invalid_argument);
}

TEST_CASE("residual block gradients") {
  Rng rng(5);
  for (auto dir : {RbDirection::down, RbDirection::up}) {
    auto rb = make_residual_block<double>("rb", dir, 3, 4, rng);
    auto x = V::leaf(random_tensor(rng, {3, 6, 6}));
    auto leaves = leaves_of(rb);
    leaves.push_back(x);
    CHECK(grad_check(leaves, [&] { Rng r(1); return weighted_sum(residual_block(x, rb, 0.01), r); })
              .max_rel_error < 1e-4);
  }
}

TEST_CASE("weoctconv shapes and inter-frequency routing") {
  Rng rng(6);
  auto p = make_octave_layer<double>("a1", RbDirection::down, Boundary::interior, 16, 24, rng);
  FrequencyPair<V> in{V::constant(random_tensor(rng, {16, 32, 32})),
                      V::constant(random_tensor(rng, {16, 32, 32}))};
  auto out = weoctconv(in, p, 0.01);
  CHECK(out.low.shape() == Shape{24, 16, 16});
  CHECK(out.high.shape() == Shape{24, 16, 16});

  // With the inter-frequency convolutions zeroed each branch ignores the other.
  zero(*p.l_to_h);
  zero(*p.h_to_l);
  const auto base = weoctconv(in, p, 0.01);
  FrequencyPair<V> perturbed{V::constant(random_tensor(rng, {16, 32, 32})), in.high};
  CHECK(weoctconv(perturbed, p, 0.01).high.value() == base.high.value());
  FrequencyPair<V> perturbed_h{in.low, V::constant(random_tensor(rng, {16, 32, 32}))};
  CHECK(weoctconv(perturbed_h, p, 0.01).low.value() == base.low.value());

  FrequencyPair<V> mismatched{V::constant(Tensor<double>(Shape{16, 16, 16})), in.high};
  CHECK_THROWS_AS(weoctconv(mismatched, p, 0.01), std::invalid_argument);
}

TEST_CASE("constant low branch contributes nothing to the high branch") {
  Rng rng(7);
  auto p = make_octave_layer<double>("a2", RbDirection::down, Boundary::interior, 4, 4, rng);
  FrequencyPair<V> in{V::constant(Tensor<double>(Shape{4, 8, 8}, 0.37)),
                      V::constant(random_tensor(rng, {4, 8, 8}))};
  OctaveProbe<double> probe;
  const auto out = weoctconv(in, p, 0.01, &probe);
  REQUIRE(probe.l_to_h_terms.size() == 1);
  for (double v : probe.hh_filtered[0].values()) CHECK(v == 0.0);
  for (double v : probe.l_to_h_terms[0].values()) CHECK(v == 0.0);
  CHECK(out.high.value() == residual_block(in.high, p.intra_h, 0.01).value());
}

TEST_CASE("first analysis layer routing") {
  Rng rng(8);
  auto p = make_octave_layer<double>("a0", RbDirection::down, Boundary::first, 3, 8, rng);
  CHECK_FALSE(p.intra_l.has_value());
  CHECK_FALSE(p.l_to_h.has_value());
  auto x = V::constant(random_tensor(rng, {3, 16, 16}));
  auto out = weoctconv_first(x, p, 0.01);
  CHECK(out.low.shape() == Shape{8, 8, 8});
  CHECK(out.high.shape() == Shape{8, 8, 8});
  CHECK(out.low.value() ==
        conv2d(wavelet::haar_filter(x, wavelet::HaarBand::LL), p.h_to_l->var, 1, 1).value());
  CHECK(out.high.value() == residual_block(x, p.intra_h, 0.01).value());
}

TEST_CASE("tweoctconv shapes and last-layer port") {
  Rng rng(9);
  auto p = make_octave_layer<double>("s1", RbDirection::up, Boundary::interior, 32, 16, rng);
  FrequencyPair<V> in{V::constant(random_tensor(rng, {32, 8, 8})),
                      V::constant(random_tensor(rng, {32, 8, 8}))};
  auto out = tweoctconv(in, p, 0.01);
  CHECK(out.low.shape() == Shape{16, 16, 16});
  CHECK(out.high.shape() == Shape{16, 16, 16});

  zero(*p.l_to_h);
  zero(*p.h_to_l);
  const auto base = tweoctconv(in, p, 0.01);
  FrequencyPair<V> perturbed{V::constant(random_tensor(rng, {32, 8, 8})), in.high};
  CHECK(tweoctconv(perturbed, p, 0.01).high.value() == base.high.value());

  auto last = make_octave_layer<double>("s4", RbDirection::up, Boundary::last, 32, 3, rng);
  CHECK_FALSE(last.intra_l.has_value());
  CHECK_FALSE(last.h_to_l.has_value());
  CHECK(tweoctconv_last(in, last, 0.01).shape() == Shape{3, 16, 16});
  CHECK_THROWS_AS(tweoctconv(in, last, 0.01), std::invalid_argument);
}

TEST_CASE("boundary construction rules") {
  Rng rng(10);
  CHECK_THROWS_AS(make_octave_layer<double>("x", RbDirection::down, Boundary::last, 3, 3, rng),
                  std::invalid_argument);
  CHECK_THROWS_AS(make_octave_layer<double>("x", RbDirection::up, Boundary::first, 3, 3, rng),
                  std::invalid_argument);
}

TEST_CASE("octave layer gradients") {
  Rng rng(11);
  auto a = make_octave_layer<double>("a", RbDirection::down, Boundary::interior, 3, 4, rng);
  auto l = V::leaf(random_tensor(rng, {3, 6, 6}));
  auto h = V::leaf(random_tensor(rng, {3, 6, 6}));
  auto leaves = leaves_of(a);
  leaves.push_back(l);
  leaves.push_back(h);
  CHECK(grad_check(leaves, [&] {
          Rng r(2);
          auto o = weoctconv<double>({l, h}, a, 0.01);
          return add(weighted_sum(o.low, r), weighted_sum(o.high, r));
        }).max_rel_error < 1e-4);

  auto f = make_octave_layer<double>("f", RbDirection::down, Boundary::first, 3, 4, rng);
  auto x = V::leaf(random_tensor(rng, {3, 6, 6}));
  auto fl = leaves_of(f);
  fl.push_back(x);
  CHECK(grad_check(fl, [&] {
          Rng r(3);
          auto o = weoctconv_first(x, f, 0.01);
          return add(weighted_sum(o.low, r), weighted_sum(o.high, r));
        }).max_rel_error < 1e-4);

  auto s = make_octave_layer<double>("s", RbDirection::up, Boundary::interior, 4, 3, rng);
  auto sl = V::leaf(random_tensor(rng, {4, 3, 3}));
  auto sh = V::leaf(random_tensor(rng, {4, 3, 3}));
  auto sleaves = leaves_of(s);
  sleaves.push_back(sl);
  sleaves.push_back(sh);
  CHECK(grad_check(sleaves, [&] {
          Rng r(4);
          auto o = tweoctconv<double>({sl, sh}, s, 0.01);
          return add(weighted_sum(o.low, r), weighted_sum(o.high, r));
        }).max_rel_error < 1e-4);

  auto t = make_octave_layer<double>("t", RbDirection::up, Boundary::last, 4, 3, rng);
  auto tleaves = leaves_of(t);
  tleaves.push_back(sl);
  tleaves.push_back(sh);
  CHECK(grad_check(tleaves, [&] {
          Rng r(5);
          return weighted_sum(tweoctconv_last<double>({sl, sh}, t, 0.01), r);
        }).max_rel_error < 1e-4);
}
