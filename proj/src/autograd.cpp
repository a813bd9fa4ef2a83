#include "flic/autograd.hpp"

#include <Eigen/Core>
#include <cmath>
#include <string>
#include <unordered_set>

namespace flic {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                      shape_str(a.shape()) + " vs " +
                                      shape_str(b.shape()));
}

template <typename T>
void require_rank(const Var<T>& a, std::size_t rank, const char* op) {
  require(a.value().rank() == rank, std::string(op) + ": expected rank " +
                                        std::to_string(rank) + ", got shape " +
                                        shape_str(a.shape()));
}

// Elementwise map with a derivative expressed through the input value.
template <typename T, typename F, typename D>
Var<T> unary(const Var<T>& a, F f, D dfdx) {
  const auto& av = a.value();
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  return detail::record<T>(std::move(out), {a}, [a, dfdx](const Tensor<T>& g) {
    if (auto* ga = a.node()->grad_target()) {
      const auto& x = a.value();
      for (std::size_t i = 0; i < x.size(); ++i) (*ga)[i] += g[i] * dfdx(x[i]);
    }
  });
}

template <typename T>
std::size_t trailing_count(const Var<T>& x, const Var<T>& b, const char* op) {
  const auto& xs = x.shape();
  const auto& bs = b.shape();
  bool prefix = bs.size() <= xs.size() &&
                std::equal(bs.begin(), bs.end(), xs.begin());
  require(prefix, std::string(op) + ": " + shape_str(bs) +
                      " is not a leading prefix of " + shape_str(xs));
  return x.value().size() / b.value().size();
}

template <typename T>
void im2col(const T* x, std::size_t channels, std::size_t h, std::size_t w,
            int k, int stride, int pad, std::size_t ho, std::size_t wo, T* cols) {
  const std::size_t plane = ho * wo;
  for (std::size_t c = 0; c < channels; ++c) {
    const T* xc = x + c * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = cols + ((c * k + ky) * k + kx) * plane;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long iy = static_cast<long>(oy) * stride - pad + ky;
          T* dst = row + oy * wo;
          if (iy < 0 || iy >= static_cast<long>(h)) {
            std::fill(dst, dst + wo, T(0));
            continue;
          }
          const T* src = xc + iy * w;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const long ix = static_cast<long>(ox) * stride - pad + kx;
            dst[ox] = (ix < 0 || ix >= static_cast<long>(w)) ? T(0) : src[ix];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, std::size_t channels, std::size_t h, std::size_t w,
            int k, int stride, int pad, std::size_t ho, std::size_t wo, T* x) {
  const std::size_t plane = ho * wo;
  for (std::size_t c = 0; c < channels; ++c) {
    T* xc = x + c * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = cols + ((c * k + ky) * k + kx) * plane;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long iy = static_cast<long>(oy) * stride - pad + ky;
          if (iy < 0 || iy >= static_cast<long>(h)) continue;
          const T* src = row + oy * wo;
          T* dst = xc + iy * w;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const long ix = static_cast<long>(ox) * stride - pad + kx;
            if (ix >= 0 && ix < static_cast<long>(w)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
void backward(const Var<T>& loss) {
  require(loss.valid() && loss.value().size() == 1,
          "backward: loss must be a scalar, got shape " +
              (loss.valid() ? shape_str(loss.shape()) : std::string("<null>")));
  if (!loss.requires_grad()) return;

  using Node = GraphNode<T>;
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (n->backward) n->grad = Tensor<T>();
  }
  (*loss.node()->grad_target())[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->backward) continue;
    if (n->grad.size() == n->value.size()) n->backward(n->grad);
    n->grad = Tensor<T>();
  }
}

template <typename T>
Var<T> detach(const Var<T>& a) {
  return Var<T>::constant(a.value());
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "add");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return detail::record<T>(std::move(out), {a, b}, [a, b](const Tensor<T>& g) {
    for (const auto* v : {&a, &b}) {
      if (auto* t = v->node()->grad_target()) {
        for (std::size_t i = 0; i < g.size(); ++i) (*t)[i] += g[i];
      }
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "sub");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return detail::record<T>(std::move(out), {a, b}, [a, b](const Tensor<T>& g) {
    if (auto* t = a.node()->grad_target()) {
      for (std::size_t i = 0; i < g.size(); ++i) (*t)[i] += g[i];
    }
    if (auto* t = b.node()->grad_target()) {
      for (std::size_t i = 0; i < g.size(); ++i) (*t)[i] -= g[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "mul");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return detail::record<T>(std::move(out), {a, b}, [a, b](const Tensor<T>& g) {
    if (auto* t = a.node()->grad_target()) {
      const auto& bv = b.value();
      for (std::size_t i = 0; i < g.size(); ++i) (*t)[i] += g[i] * bv[i];
    }
    if (auto* t = b.node()->grad_target()) {
      const auto& av = a.value();
      for (std::size_t i = 0; i < g.size(); ++i) (*t)[i] += g[i] * av[i];
    }
  });
}

template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "div");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= bv[i];
  return detail::record<T>(std::move(out), {a, b}, [a, b](const Tensor<T>& g) {
    const auto& av = a.value();
    const auto& bv = b.value();
    if (auto* t = a.node()->grad_target()) {
      for (std::size_t i = 0; i < g.size(); ++i) (*t)[i] += g[i] / bv[i];
    }
    if (auto* t = b.node()->grad_target()) {
      for (std::size_t i = 0; i < g.size(); ++i) (*t)[i] -= g[i] * av[i] / (bv[i] * bv[i]);
    }
  });
}

template <typename T>
Var<T> pow_scalar(const Var<T>& a, T p) {
  require(p > T(0), "pow_scalar: exponent must be positive");
  return unary(
      a, [p](T x) { return x > T(0) ? std::pow(x, p) : T(0); },
      [p](T x) { return x > T(0) ? p * std::pow(x, p - T(1)) : T(0); });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T s) {
  return unary(a, [s](T x) { return x + s; }, [](T) { return T(1); });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  return unary(a, [s](T x) { return x * s; }, [s](T) { return s; });
}

template <typename T>
Var<T> square(const Var<T>& a) {
  return unary(a, [](T x) { return x * x; }, [](T x) { return T(2) * x; });
}

template <typename T>
Var<T> sqrt(const Var<T>& a) {
  return unary(
      a, [](T x) { return std::sqrt(x); },
      [](T x) { return T(0.5) / std::sqrt(x); });
}

template <typename T>
Var<T> rsqrt(const Var<T>& a) {
  return unary(
      a, [](T x) { return T(1) / std::sqrt(x); },
      [](T x) { return T(-0.5) / (x * std::sqrt(x)); });
}

template <typename T>
Var<T> abs(const Var<T>& a) {
  return unary(
      a, [](T x) { return std::abs(x); },
      [](T x) { return x < T(0) ? T(-1) : T(1); });
}

template <typename T>
Var<T> exp(const Var<T>& a) {
  return unary(
      a, [](T x) { return std::exp(x); }, [](T x) { return std::exp(x); });
}

template <typename T>
Var<T> log(const Var<T>& a) {
  return unary(a, [](T x) { return std::log(x); }, [](T x) { return T(1) / x; });
}

template <typename T>
Var<T> tanh(const Var<T>& a) {
  return unary(
      a, [](T x) { return std::tanh(x); },
      [](T x) {
        const T t = std::tanh(x);
        return T(1) - t * t;
      });
}

namespace {
template <typename T>
T stable_sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
T stable_softplus(T x) {
  return x > T(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}
}  // namespace

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  return unary(a, stable_sigmoid<T>, [](T x) {
    const T s = stable_sigmoid(x);
    return s * (T(1) - s);
  });
}

template <typename T>
Var<T> softplus(const Var<T>& a) {
  return unary(a, stable_softplus<T>, stable_sigmoid<T>);
}

template <typename T>
Var<T> leaky_relu(const Var<T>& a, T slope) {
  require(slope > T(0) && slope < T(1), "leaky_relu: slope must be in (0,1)");
  return unary(
      a, [slope](T x) { return x >= T(0) ? x : slope * x; },
      [slope](T x) { return x >= T(0) ? T(1) : slope; });
}

template <typename T>
Var<T> lower_bound(const Var<T>& a, T floor) {
  return unary(
      a, [floor](T x) { return x < floor ? floor : x; },
      [floor](T x) { return x < floor ? T(0) : T(1); });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  T total = 0;
  for (T v : a.value().values()) total += v;
  return detail::record<T>(Tensor<T>::scalar(total), {a},
                           [a](const Tensor<T>& g) {
                             if (auto* t = a.node()->grad_target()) {
                               const T gv = g[0];
                               for (auto& v : t->values()) v += gv;
                             }
                           });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.value().size()));
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  Tensor<T> out = a.value().reshaped(std::move(shape));
  return detail::record<T>(std::move(out), {a}, [a](const Tensor<T>& g) {
    if (auto* t = a.node()->grad_target()) {
      for (std::size_t i = 0; i < g.size(); ++i) (*t)[i] += g[i];
    }
  });
}

template <typename T>
Var<T> add_leading(const Var<T>& x, const Var<T>& b) {
  const std::size_t inner = trailing_count(x, b, "add_leading");
  Tensor<T> out = x.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i / inner];
  return detail::record<T>(
      std::move(out), {x, b}, [x, b, inner](const Tensor<T>& g) {
        if (auto* t = x.node()->grad_target()) {
          for (std::size_t i = 0; i < g.size(); ++i) (*t)[i] += g[i];
        }
        if (auto* t = b.node()->grad_target()) {
          for (std::size_t i = 0; i < g.size(); ++i) (*t)[i / inner] += g[i];
        }
      });
}

template <typename T>
Var<T> mul_leading(const Var<T>& x, const Var<T>& b) {
  const std::size_t inner = trailing_count(x, b, "mul_leading");
  Tensor<T> out = x.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i / inner];
  return detail::record<T>(
      std::move(out), {x, b}, [x, b, inner](const Tensor<T>& g) {
        if (auto* t = x.node()->grad_target()) {
          const auto& bv = b.value();
          for (std::size_t i = 0; i < g.size(); ++i) (*t)[i] += g[i] * bv[i / inner];
        }
        if (auto* t = b.node()->grad_target()) {
          const auto& xv = x.value();
          for (std::size_t i = 0; i < g.size(); ++i) (*t)[i / inner] += g[i] * xv[i];
        }
      });
}

template <typename T>
Var<T> channel_matmul(const Var<T>& w, const Var<T>& x) {
  require_rank(w, 3, "channel_matmul");
  require_rank(x, 3, "channel_matmul");
  const std::size_t C = w.shape()[0], O = w.shape()[1], I = w.shape()[2];
  const std::size_t N = x.shape()[2];
  require(x.shape()[0] == C && x.shape()[1] == I,
          "channel_matmul: weight " + shape_str(w.shape()) +
              " incompatible with input " + shape_str(x.shape()));
  Tensor<T> out(Shape{C, O, N});
  const auto& wv = w.value();
  const auto& xv = x.value();
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t o = 0; o < O; ++o) {
      T* dst = out.data() + (c * O + o) * N;
      for (std::size_t i = 0; i < I; ++i) {
        const T wi = wv[(c * O + o) * I + i];
        const T* src = xv.data() + (c * I + i) * N;
        for (std::size_t n = 0; n < N; ++n) dst[n] += wi * src[n];
      }
    }
  }
  return detail::record<T>(
      std::move(out), {w, x}, [w, x, C, O, I, N](const Tensor<T>& g) {
        const auto& wv = w.value();
        const auto& xv = x.value();
        auto* gw = w.node()->grad_target();
        auto* gx = x.node()->grad_target();
        for (std::size_t c = 0; c < C; ++c) {
          for (std::size_t o = 0; o < O; ++o) {
            const T* go = g.data() + (c * O + o) * N;
            for (std::size_t i = 0; i < I; ++i) {
              const std::size_t wi = (c * O + o) * I + i;
              const T* xs = xv.data() + (c * I + i) * N;
              if (gw) {
                T acc = 0;
                for (std::size_t n = 0; n < N; ++n) acc += go[n] * xs[n];
                (*gw)[wi] += acc;
              }
              if (gx) {
                T* gxs = gx->data() + (c * I + i) * N;
                for (std::size_t n = 0; n < N; ++n) gxs[n] += wv[wi] * go[n];
              }
            }
          }
        }
      });
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, int stride, int padding) {
  require_rank(x, 3, "conv2d");
  require_rank(w, 4, "conv2d");
  const std::size_t cin = x.shape()[0], h = x.shape()[1], wd = x.shape()[2];
  const std::size_t cout = w.shape()[0];
  const int k = static_cast<int>(w.shape()[2]);
  require(w.shape()[1] == cin,
          "conv2d: input has " + std::to_string(cin) +
              " channels but weight expects " + std::to_string(w.shape()[1]));
  require(w.shape()[3] == w.shape()[2], "conv2d: kernel must be square");
  require(stride >= 1 && padding >= 0, "conv2d: invalid stride/padding");
  const long ho_l = (static_cast<long>(h) + 2 * padding - k) / stride + 1;
  const long wo_l = (static_cast<long>(wd) + 2 * padding - k) / stride + 1;
  require(ho_l > 0 && wo_l > 0, "conv2d: input smaller than kernel");
  const auto ho = static_cast<std::size_t>(ho_l);
  const auto wo = static_cast<std::size_t>(wo_l);
  const std::size_t kk = cin * k * k;
  const std::size_t plane = ho * wo;
  const bool direct = (k == 1 && stride == 1 && padding == 0);

  using Map = Eigen::Map<RowMat<T>>;
  using CMap = Eigen::Map<const RowMat<T>>;

  Tensor<T> out(Shape{cout, ho, wo});
  {
    std::vector<T> cols;
    const T* colp = x.value().data();
    if (!direct) {
      cols.resize(kk * plane);
      im2col(x.value().data(), cin, h, wd, k, stride, padding, ho, wo, cols.data());
      colp = cols.data();
    }
    CMap wm(w.value().data(), cout, kk);
    CMap cm(colp, kk, plane);
    Map om(out.data(), cout, plane);
    om.noalias() = wm * cm;
  }

  return detail::record<T>(
      std::move(out), {x, w},
      [=](const Tensor<T>& g) {
        CMap gm(g.data(), cout, plane);
        auto* gw = w.node()->grad_target();
        auto* gx = x.node()->grad_target();
        if (gw) {
          std::vector<T> cols;
          const T* colp = x.value().data();
          if (!direct) {
            cols.resize(kk * plane);
            im2col(x.value().data(), cin, h, wd, k, stride, padding, ho, wo,
                   cols.data());
            colp = cols.data();
          }
          Map gwm(gw->data(), cout, kk);
          gwm.noalias() += gm * CMap(colp, kk, plane).transpose();
        }
        if (gx) {
          CMap wm(w.value().data(), cout, kk);
          if (direct) {
            Map gxm(gx->data(), kk, plane);
            gxm.noalias() += wm.transpose() * gm;
          } else {
            std::vector<T> gcols(kk * plane);
            Map gcm(gcols.data(), kk, plane);
            gcm.noalias() = wm.transpose() * gm;
            col2im(gcols.data(), cin, h, wd, k, stride, padding, ho, wo,
                   gx->data());
          }
        }
      });
}

template <typename T>
Var<T> pixel_shuffle(const Var<T>& x) {
  require_rank(x, 3, "pixel_shuffle");
  const std::size_t c4 = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  require(c4 % 4 == 0, "pixel_shuffle: channel count " + std::to_string(c4) +
                           " not divisible by 4");
  const std::size_t c = c4 / 4;
  const auto& xv = x.value();
  Tensor<T> out(Shape{c, 2 * h, 2 * w});
  for (std::size_t oc = 0; oc < c; ++oc)
    for (std::size_t a = 0; a < 2; ++a)
      for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t i = 0; i < h; ++i)
          for (std::size_t j = 0; j < w; ++j)
            out.at(oc, 2 * i + a, 2 * j + b) = xv.at(4 * oc + 2 * a + b, i, j);
  return detail::record<T>(std::move(out), {x}, [x, c, h, w](const Tensor<T>& g) {
    if (auto* t = x.node()->grad_target()) {
      for (std::size_t oc = 0; oc < c; ++oc)
        for (std::size_t a = 0; a < 2; ++a)
          for (std::size_t b = 0; b < 2; ++b)
            for (std::size_t i = 0; i < h; ++i)
              for (std::size_t j = 0; j < w; ++j)
                t->at(4 * oc + 2 * a + b, i, j) += g.at(oc, 2 * i + a, 2 * j + b);
    }
  });
}

template <typename T>
Var<T> pixel_unshuffle(const Var<T>& x) {
  require_rank(x, 3, "pixel_unshuffle");
  const std::size_t c = x.shape()[0], h2 = x.shape()[1], w2 = x.shape()[2];
  require(h2 % 2 == 0 && w2 % 2 == 0, "pixel_unshuffle: spatial dims must be even");
  const std::size_t h = h2 / 2, w = w2 / 2;
  const auto& xv = x.value();
  Tensor<T> out(Shape{4 * c, h, w});
  for (std::size_t oc = 0; oc < c; ++oc)
    for (std::size_t a = 0; a < 2; ++a)
      for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t i = 0; i < h; ++i)
          for (std::size_t j = 0; j < w; ++j)
            out.at(4 * oc + 2 * a + b, i, j) = xv.at(oc, 2 * i + a, 2 * j + b);
  return detail::record<T>(std::move(out), {x}, [x, c, h, w](const Tensor<T>& g) {
    if (auto* t = x.node()->grad_target()) {
      for (std::size_t oc = 0; oc < c; ++oc)
        for (std::size_t a = 0; a < 2; ++a)
          for (std::size_t b = 0; b < 2; ++b)
            for (std::size_t i = 0; i < h; ++i)
              for (std::size_t j = 0; j < w; ++j)
                t->at(oc, 2 * i + a, 2 * j + b) += g.at(4 * oc + 2 * a + b, i, j);
    }
  });
}

template <typename T>
Var<T> crop(const Var<T>& x, std::size_t h, std::size_t w) {
  require_rank(x, 3, "crop");
  const std::size_t c = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  require(h >= 1 && w >= 1 && h <= H && w <= W,
          "crop: window exceeds input " + shape_str(x.shape()));
  if (h == H && w == W) return x;
  const auto& xv = x.value();
  Tensor<T> out(Shape{c, h, w});
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t y = 0; y < h; ++y)
      std::copy_n(&xv.at(k, y, 0), w, &out.at(k, y, 0));
  return detail::record<T>(std::move(out), {x}, [x, c, h, w](const Tensor<T>& g) {
    if (auto* t = x.node()->grad_target()) {
      for (std::size_t k = 0; k < c; ++k)
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t i = 0; i < w; ++i) t->at(k, y, i) += g.at(k, y, i);
    }
  });
}

template <typename T>
Var<T> avg_pool2(const Var<T>& x) {
  require_rank(x, 3, "avg_pool2");
  const std::size_t c = x.shape()[0], h = x.shape()[1] / 2, w = x.shape()[2] / 2;
  require(h >= 1 && w >= 1, "avg_pool2: input too small");
  const auto& xv = x.value();
  Tensor<T> out(Shape{c, h, w});
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j)
        out.at(k, i, j) = T(0.25) * (xv.at(k, 2 * i, 2 * j) + xv.at(k, 2 * i, 2 * j + 1) +
                                     xv.at(k, 2 * i + 1, 2 * j) +
                                     xv.at(k, 2 * i + 1, 2 * j + 1));
  return detail::record<T>(std::move(out), {x}, [x, c, h, w](const Tensor<T>& g) {
    if (auto* t = x.node()->grad_target()) {
      for (std::size_t k = 0; k < c; ++k)
        for (std::size_t i = 0; i < h; ++i)
          for (std::size_t j = 0; j < w; ++j) {
            const T q = T(0.25) * g.at(k, i, j);
            t->at(k, 2 * i, 2 * j) += q;
            t->at(k, 2 * i, 2 * j + 1) += q;
            t->at(k, 2 * i + 1, 2 * j) += q;
            t->at(k, 2 * i + 1, 2 * j + 1) += q;
          }
    }
  });
}

template <typename T>
Var<T> separable_filter_valid(const Var<T>& x, const std::vector<T>& taps) {
  require_rank(x, 3, "separable_filter_valid");
  const std::size_t c = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  const std::size_t k = taps.size();
  require(k >= 1 && k <= H && k <= W, "separable_filter_valid: filter larger than input");
  const std::size_t ho = H - k + 1, wo = W - k + 1;
  const auto& xv = x.value();
  // Horizontal pass into [c, H, wo], then vertical into [c, ho, wo].
  Tensor<T> mid(Shape{c, H, wo});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t j = 0; j < wo; ++j) {
        T acc = 0;
        for (std::size_t u = 0; u < k; ++u) acc += taps[u] * xv.at(ch, y, j + u);
        mid.at(ch, y, j) = acc;
      }
  Tensor<T> out(Shape{c, ho, wo});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < ho; ++i)
      for (std::size_t u = 0; u < k; ++u) {
        const T t = taps[u];
        const T* src = &mid.at(ch, i + u, 0);
        T* dst = &out.at(ch, i, 0);
        for (std::size_t j = 0; j < wo; ++j) dst[j] += t * src[j];
      }
  return detail::record<T>(
      std::move(out), {x}, [x, taps, c, H, W, k, ho, wo](const Tensor<T>& g) {
        auto* t = x.node()->grad_target();
        if (!t) return;
        Tensor<T> gmid(Shape{c, H, wo});
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t i = 0; i < ho; ++i)
            for (std::size_t u = 0; u < k; ++u)
              for (std::size_t j = 0; j < wo; ++j)
                gmid.at(ch, i + u, j) += taps[u] * g.at(ch, i, j);
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t y = 0; y < H; ++y)
            for (std::size_t j = 0; j < wo; ++j)
              for (std::size_t u = 0; u < k; ++u)
                t->at(ch, y, j + u) += taps[u] * gmid.at(ch, y, j);
      });
}

#define FLIC_INSTANTIATE(T)                                                   \
  template void backward<T>(const Var<T>&);                                   \
  template Var<T> detach<T>(const Var<T>&);                                   \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                       \
  template Var<T> sub<T>(const Var<T>&, const Var<T>&);                       \
  template Var<T> mul<T>(const Var<T>&, const Var<T>&);                       \
  template Var<T> div<T>(const Var<T>&, const Var<T>&);                       \
  template Var<T> pow_scalar<T>(const Var<T>&, T);                            \
  template Var<T> add_scalar<T>(const Var<T>&, T);                            \
  template Var<T> scale<T>(const Var<T>&, T);                                 \
  template Var<T> square<T>(const Var<T>&);                                   \
  template Var<T> sqrt<T>(const Var<T>&);                                     \
  template Var<T> rsqrt<T>(const Var<T>&);                                    \
  template Var<T> abs<T>(const Var<T>&);                                      \
  template Var<T> exp<T>(const Var<T>&);                                      \
  template Var<T> log<T>(const Var<T>&);                                      \
  template Var<T> tanh<T>(const Var<T>&);                                     \
  template Var<T> sigmoid<T>(const Var<T>&);                                  \
  template Var<T> softplus<T>(const Var<T>&);                                 \
  template Var<T> leaky_relu<T>(const Var<T>&, T);                            \
  template Var<T> lower_bound<T>(const Var<T>&, T);                           \
  template Var<T> sum<T>(const Var<T>&);                                      \
  template Var<T> mean<T>(const Var<T>&);                                     \
  template Var<T> reshape<T>(const Var<T>&, Shape);                           \
  template Var<T> add_leading<T>(const Var<T>&, const Var<T>&);               \
  template Var<T> mul_leading<T>(const Var<T>&, const Var<T>&);               \
  template Var<T> channel_matmul<T>(const Var<T>&, const Var<T>&);            \
  template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, int, int);          \
  template Var<T> pixel_shuffle<T>(const Var<T>&);                            \
  template Var<T> pixel_unshuffle<T>(const Var<T>&);                          \
  template Var<T> crop<T>(const Var<T>&, std::size_t, std::size_t);           \
  template Var<T> avg_pool2<T>(const Var<T>&);                                \
  template Var<T> separable_filter_valid<T>(const Var<T>&, const std::vector<T>&);

FLIC_INSTANTIATE(float)
FLIC_INSTANTIATE(double)

#undef FLIC_INSTANTIATE

}  // namespace flic
