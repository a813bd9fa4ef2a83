#include "doctest.h"
#include "flic/optim.hpp"
#include "flic_test.hpp"

using namespace flic;
using flic::test::grad_check;
using flic::test::random_tensor;

namespace {
using V = Var<double>;
}

TEST_CASE("tensor shape bookkeeping") {
  Tensor<float> t(Shape{2, 3, 4});
  CHECK(t.size() == 24);
  CHECK(t.rank() == 3);
  CHECK_THROWS_AS(Tensor<float>(Shape{2, 0}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor<float>(Shape{2, 2}, std::vector<float>(3)), std::invalid_argument);
  CHECK_THROWS_AS(t.reshaped(Shape{5, 5}), std::invalid_argument);
  CHECK(Tensor<double>::scalar(2.5).item() == 2.5);
}

TEST_CASE("conv2d identity 1x1 kernel") {
  auto x = V::constant(Tensor<double>(Shape{1, 4, 4}, 1.0));
  auto w = V::constant(Tensor<double>(Shape{1, 1, 1, 1}, 1.0));
  CHECK(conv2d(x, w, 1, 0).value() == x.value());

  Rng rng(3);
  auto xr = V::constant(random_tensor(rng, {5, 7, 9}));
  Tensor<double> eye(Shape{5, 5, 1, 1});
  for (std::size_t i = 0; i < 5; ++i) eye[i * 5 + i] = 1.0;
  CHECK(conv2d(xr, V::constant(eye), 1, 0).value() == xr.value());
}

TEST_CASE("conv2d shapes and hand-summed receptive field") {
  auto x = V::constant(Tensor<double>(Shape{3, 8, 8}, 0.5));
  auto w = V::constant(Tensor<double>(Shape{16, 3, 3, 3}, 0.1));
  CHECK(conv2d(x, w, 2, 1).shape() == Shape{16, 4, 4});
  // Odd input with stride 2 rounds up.
  auto xo = V::constant(Tensor<double>(Shape{3, 9, 7}, 0.5));
  CHECK(conv2d(xo, w, 2, 1).shape() == Shape{16, 5, 4});

  auto c = V::constant(Tensor<double>(Shape{1, 5, 5}, 2.0));
  auto ones = V::constant(Tensor<double>(Shape{1, 1, 3, 3}, 1.0));
  const auto y = conv2d(c, ones, 1, 1).value();
  CHECK(y.at(0, 2, 2) == 18.0);
  CHECK(y.at(0, 1, 1) == 18.0);
  CHECK(y.at(0, 0, 0) == 8.0);
  CHECK(y.at(0, 4, 4) == 8.0);
  CHECK(y.at(0, 0, 2) == 12.0);

  CHECK_THROWS_AS(conv2d(x, V::constant(Tensor<double>(Shape{4, 2, 3, 3})), 1, 1),
                  std::invalid_argument);
}

TEST_CASE("conv2d matches a direct loop") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t cin = 1 + uniform_index(rng, 4), cout = 1 + uniform_index(rng, 4);
    const std::size_t h = 1 + uniform_index(rng, 9), w = 1 + uniform_index(rng, 9);
    const int k = uniform_index(rng, 2) ? 3 : 1;
    const int stride = 1 + static_cast<int>(uniform_index(rng, 2));
    const int pad = k / 2;
    auto x = random_tensor(rng, {cin, h, w});
    auto wt = random_tensor(rng, {cout, cin, std::size_t(k), std::size_t(k)});
    const auto y = conv2d(V::constant(x), V::constant(wt), stride, pad).value();
    const std::size_t oh = (h + 2 * pad - k) / stride + 1, ow = (w + 2 * pad - k) / stride + 1;
    REQUIRE(y.shape() == Shape{cout, oh, ow});
    double worst = 0;
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double acc = 0;
          for (std::size_t c = 0; c < cin; ++c)
            for (int a = 0; a < k; ++a)
              for (int b = 0; b < k; ++b) {
                const long yy = long(i * stride) + a - pad, xx = long(j * stride) + b - pad;
                if (yy < 0 || xx < 0 || yy >= long(h) || xx >= long(w)) continue;
                acc += x.at(c, yy, xx) * wt[((o * cin + c) * k + a) * k + b];
              }
          worst = std::max(worst, std::abs(acc - y.at(o, i, j)));
        }
    CHECK(worst < 1e-12);
  }
}

TEST_CASE("pixel_shuffle index formula and inverse") {
  Tensor<double> x(Shape{4, 2, 2});
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t i = 0; i < 4; ++i) x[c * 4 + i] = double(c);
  const auto y = pixel_shuffle(V::constant(x)).value();
  REQUIRE(y.shape() == Shape{1, 4, 4});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) CHECK(y.at(0, i, j) == double(2 * (i % 2) + (j % 2)));

  Rng rng(5);
  auto r = random_tensor(rng, {8, 3, 5});
  CHECK(pixel_unshuffle(pixel_shuffle(V::constant(r))).value() == r);
  CHECK_THROWS_AS(pixel_shuffle(V::constant(Tensor<double>(Shape{6, 2, 2}))), std::invalid_argument);
}

TEST_CASE("leaky_relu definition") {
  auto x = V::leaf(Tensor<double>(Shape{3}, std::vector<double>{-1, 0, 2}));
  auto y = leaky_relu(x, 0.01);
  CHECK(y.value()[0] == doctest::Approx(-0.01));
  CHECK(y.value()[1] == 0.0);
  CHECK(y.value()[2] == 2.0);
  CHECK_THROWS_AS(leaky_relu(x, 1.5), std::invalid_argument);

  auto z = V::leaf(Tensor<double>(Shape{2}, std::vector<double>{-3, 0}));
  backward(sum(leaky_relu(z, 0.01)));
  CHECK(z.grad()[0] == doctest::Approx(0.01));
  CHECK(z.grad()[1] == 1.0);
}

TEST_CASE("backward on linear loss and repeated use") {
  Rng rng(1);
  auto xv = random_tensor(rng, {6});
  auto w = V::leaf(random_tensor(rng, {6}));
  backward(sum(mul(w, V::constant(xv))));
  CHECK(w.grad() == xv);

  auto p = V::leaf(Tensor<double>(Shape{1}, 3.0));
  backward(sum(add(scale(p, 2.0), mul(p, p))));  // d/dp (2p + p^2) = 2 + 2p
  CHECK(p.grad()[0] == doctest::Approx(8.0));

  CHECK_THROWS_AS(backward(w), std::invalid_argument);
}

TEST_CASE("gradient accumulates across backward calls until zeroed") {
  auto p = V::leaf(Tensor<double>(Shape{2}, 1.0));
  backward(sum(p));
  backward(sum(p));
  CHECK(p.grad()[0] == 2.0);
  p.zero_grad();
  CHECK(p.grad()[0] == 0.0);
}

TEST_CASE("finite-difference check of mean squared conv residual") {
  Rng rng(21);
  auto x = V::leaf(random_tensor(rng, {1, 6, 6}));
  auto w = V::leaf(random_tensor(rng, {2, 1, 3, 3}));
  auto t = V::constant(random_tensor(rng, {2, 6, 6}));
  const auto r = grad_check({x, w}, [&] { return mean(square(sub(conv2d(x, w, 1, 1), t))); });
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("elementwise op gradients") {
  Rng rng(8);
  auto a = V::leaf(random_tensor(rng, {2, 3, 4}, 0.2, 2.0));
  auto b = V::leaf(random_tensor(rng, {2, 3, 4}, -2.0, 2.0));
  const std::vector<std::pair<const char*, std::function<V()>>> cases{
      {"sqrt", [&] { return sum(sqrt(a)); }},
      {"rsqrt", [&] { return sum(rsqrt(a)); }},
      {"log", [&] { return sum(log(a)); }},
      {"exp", [&] { return sum(exp(b)); }},
      {"tanh", [&] { return sum(tanh(b)); }},
      {"sigmoid", [&] { return sum(sigmoid(b)); }},
      {"softplus", [&] { return sum(softplus(b)); }},
      {"abs", [&] { return sum(abs(b)); }},
      {"mul", [&] { return sum(mul(a, b)); }},
      {"div", [&] { return sum(div(b, a)); }},
      {"pow", [&] { return sum(pow_scalar(a, 0.2856)); }},
      {"sub", [&] { return mean(square(sub(a, b))); }},
      {"lrelu", [&] { return sum(mul(leaky_relu(b, 0.01), b)); }},
      {"lower_bound", [&] { return sum(lower_bound(b, 0.3)); }},
  };
  for (const auto& [name, f] : cases) {
    CAPTURE(name);
    CHECK(grad_check({a, b}, f).max_rel_error < 1e-4);
  }
}

TEST_CASE("structural op gradients") {
  Rng rng(9);
  auto x = V::leaf(random_tensor(rng, {8, 3, 5}));
  auto wx = V::constant(random_tensor(rng, {2, 6, 10}));
  CHECK(grad_check({x}, [&] { return sum(mul(pixel_shuffle(x), wx)); }).max_rel_error < 1e-4);

  auto y = V::leaf(random_tensor(rng, {2, 6, 10}));
  auto wy = V::constant(random_tensor(rng, {8, 3, 5}));
  CHECK(grad_check({y}, [&] { return sum(mul(pixel_unshuffle(y), wy)); }).max_rel_error < 1e-4);

  auto z = V::leaf(random_tensor(rng, {3, 7, 9}));
  auto wz = V::constant(random_tensor(rng, {3, 5, 6}));
  CHECK(grad_check({z}, [&] { return sum(mul(crop(z, 5, 6), wz)); }).max_rel_error < 1e-4);
  auto wp = V::constant(random_tensor(rng, {3, 3, 4}));
  CHECK(grad_check({z}, [&] { return sum(mul(avg_pool2(z), wp)); }).max_rel_error < 1e-4);
  auto wf = V::constant(random_tensor(rng, {3, 5, 7}));
  const std::vector<double> taps{0.25, 0.5, 0.25};
  CHECK(grad_check({z}, [&] { return sum(mul(separable_filter_valid(z, taps), wf)); })
            .max_rel_error < 1e-4);

  auto m = V::leaf(random_tensor(rng, {3, 2, 4}));
  auto v = V::leaf(random_tensor(rng, {3, 4, 5}));
  auto c = V::leaf(random_tensor(rng, {3, 2}));
  CHECK(grad_check({m, v, c}, [&] {
          auto p = channel_matmul(m, v);
          return sum(square(add_leading(mul_leading(p, c), c)));
        }).max_rel_error < 1e-4);

  for (int stride : {1, 2}) {
    auto xi = V::leaf(random_tensor(rng, {3, 7, 6}));
    auto w3 = V::leaf(random_tensor(rng, {4, 3, 3, 3}));
    auto w1 = V::leaf(random_tensor(rng, {4, 3, 1, 1}));
    CHECK(grad_check({xi, w3, w1}, [&] {
            return sum(square(add(conv2d(xi, w3, stride, 1), conv2d(xi, w1, stride, 0))));
          }).max_rel_error < 1e-4);
  }
}

TEST_CASE("forward ops stay finite on extreme finite input") {
  Tensor<double> big(Shape{4}, std::vector<double>{-800, -1e-300, 1e-300, 800});
  auto x = V::constant(big);
  for (const auto& y : {sigmoid(x), softplus(x), tanh(x), leaky_relu(x, 0.01)}) {
    for (double v : y.value().values()) CHECK(std::isfinite(v));
  }
}

TEST_CASE("adam first step and zero gradient") {
  Parameter<double> p("p", Tensor<double>(Shape{1}, 0.0));
  p.var.mutable_grad()[0] = 1.0;
  Parameter<double>* ps[] = {&p};
  AdamOptions opt;
  adam_step<double>(ps, opt);
  // m_hat = 1, v_hat = 1 -> step = lr / (1 + eps).
  CHECK(p.value()[0] == doctest::Approx(-1e-4 / (1 + 1e-8)).epsilon(1e-12));
  CHECK(p.var.grad()[0] == 0.0);

  Parameter<double> q("q", Tensor<double>(Shape{3}, 0.7));
  Parameter<double>* qs[] = {&q};
  adam_step<double>(qs, opt);
  CHECK(q.value() == Tensor<double>(Shape{3}, 0.7));
}

TEST_CASE("adam defaults") {
  AdamOptions opt;
  CHECK(opt.lr == 1e-4);
  CHECK(opt.beta1 == 0.9);
  CHECK(opt.beta2 == 0.999);
  CHECK(opt.eps == 1e-8);
}
