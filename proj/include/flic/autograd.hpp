#pragma once

// Reverse-mode differentiation over the small operation set the codec uses.
// A Var is a shared handle to a graph node; copying a Var aliases the node.
// Nodes that do not depend on any leaf with requires_grad keep no history.

#include <functional>
#include <memory>
#include <vector>

#include "flic/tensor.hpp"

namespace flic {

template <typename T>
struct GraphNode {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<GraphNode>> inputs;
  std::function<void(const Tensor<T>&)> backward;

  // Zero-initialised gradient buffer, or nullptr when no gradient is wanted.
  Tensor<T>* grad_target() {
    if (!requires_grad) return nullptr;
    if (grad.size() != value.size()) grad = Tensor<T>(value.shape());
    return &grad;
  }
};

template <typename T>
class Var {
 public:
  using Node = GraphNode<T>;

  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Var constant(Tensor<T> value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    return Var(std::move(n));
  }

  static Var leaf(Tensor<T> value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = true;
    return Var(std::move(n));
  }

  bool valid() const noexcept { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  // Gradient accumulated so far; zeros if backward never reached this node.
  Tensor<T> grad() const {
    return has_grad() ? node_->grad : Tensor<T>(node_->value.shape());
  }
  Tensor<T>& mutable_grad() { return *node_->grad_target(); }
  void zero_grad() {
    if (has_grad()) node_->grad.fill(T(0));
  }

  const std::shared_ptr<Node>& node() const noexcept { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

namespace detail {

// Creates an op result. `fn` receives dLoss/dOutput and must accumulate into
// the inputs' grad_target() buffers. History is only kept when needed.
template <typename T>
Var<T> record(Tensor<T> value, std::vector<Var<T>> inputs,
              std::function<void(const Tensor<T>&)> fn) {
  auto n = std::make_shared<GraphNode<T>>();
  n->value = std::move(value);
  for (const auto& in : inputs) {
    if (in.requires_grad()) n->requires_grad = true;
  }
  if (n->requires_grad) {
    n->inputs.reserve(inputs.size());
    for (auto& in : inputs) n->inputs.push_back(in.node());
    n->backward = std::move(fn);
  }
  return Var<T>(std::move(n));
}

}  // namespace detail

/// Fills d(loss)/d(leaf) into every reachable leaf, summing over repeated
/// uses and across calls. Throws std::invalid_argument unless loss is scalar.
template <typename T>
void backward(const Var<T>& loss);

template <typename T> Var<T> detach(const Var<T>& a);

// Elementwise, identical shapes.
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> div(const Var<T>& a, const Var<T>& b);

template <typename T> Var<T> add_scalar(const Var<T>& a, T s);
template <typename T> Var<T> scale(const Var<T>& a, T s);
template <typename T> Var<T> square(const Var<T>& a);
template <typename T> Var<T> sqrt(const Var<T>& a);
template <typename T> Var<T> rsqrt(const Var<T>& a);
template <typename T> Var<T> abs(const Var<T>& a);
template <typename T> Var<T> exp(const Var<T>& a);
template <typename T> Var<T> log(const Var<T>& a);
template <typename T> Var<T> tanh(const Var<T>& a);
template <typename T> Var<T> sigmoid(const Var<T>& a);
template <typename T> Var<T> softplus(const Var<T>& a);

/// max(x, 0)^p for p > 0. No gradient flows where x <= 0.
template <typename T> Var<T> pow_scalar(const Var<T>& a, T p);

/// y = x for x >= 0, slope * x otherwise. The derivative at 0 is 1.
template <typename T> Var<T> leaky_relu(const Var<T>& a, T slope);

/// max(x, floor); no gradient flows where the floor is active.
template <typename T> Var<T> lower_bound(const Var<T>& a, T floor);

template <typename T> Var<T> sum(const Var<T>& a);
template <typename T> Var<T> mean(const Var<T>& a);
template <typename T> Var<T> reshape(const Var<T>& a, Shape shape);

// `b`'s shape must be a prefix of `x`'s; b is broadcast over the remaining
// trailing dimensions.
template <typename T> Var<T> add_leading(const Var<T>& x, const Var<T>& b);
template <typename T> Var<T> mul_leading(const Var<T>& x, const Var<T>& b);

/// Per-channel matrix product: w [C,O,I] times x [C,I,N] -> [C,O,N].
template <typename T> Var<T> channel_matmul(const Var<T>& w, const Var<T>& x);

/// 2-D convolution without bias. x [Cin,H,W], w [Cout,Cin,k,k], symmetric
/// zero padding. Output is [Cout, (H+2p-k)/s+1, (W+2p-k)/s+1].
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, int stride, int padding);

/// [4C,H,W] -> [C,2H,2W] with out[c,2i+a,2j+b] = in[4c+2a+b,i,j].
template <typename T> Var<T> pixel_shuffle(const Var<T>& x);
template <typename T> Var<T> pixel_unshuffle(const Var<T>& x);

/// Keeps the top-left [C,h,w] window of a [C,H,W] tensor.
template <typename T> Var<T> crop(const Var<T>& x, std::size_t h, std::size_t w);

/// 2x2 mean pooling, stride 2; a trailing odd row/column is dropped.
template <typename T> Var<T> avg_pool2(const Var<T>& x);

/// Separable per-channel filtering with no padding ("valid" output).
template <typename T>
Var<T> separable_filter_valid(const Var<T>& x, const std::vector<T>& taps);

}  // namespace flic
