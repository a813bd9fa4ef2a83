#pragma once

#include <cmath>
#include <span>
#include <string>

#include "flic/autograd.hpp"

namespace flic {

template <typename T>
struct AdamState {
  Tensor<T> first_moment;
  Tensor<T> second_moment;
  long step = 0;
};

/// A named trainable tensor. Copies alias the same graph leaf; use
/// detached_copy() for an independent parameter.
template <typename T>
struct Parameter {
  std::string name;
  Var<T> var;
  AdamState<T> adam;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> value)
      : name(std::move(n)), var(Var<T>::leaf(std::move(value))) {}

  const Tensor<T>& value() const { return var.value(); }
  const Shape& shape() const { return var.shape(); }

  Parameter detached_copy() const {
    Parameter p(name, var.value());
    p.adam = adam;
    return p;
  }

  template <typename U>
  Parameter<U> cast() const {
    return Parameter<U>(name, var.value().template cast<U>());
  }
};

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update for every parameter, then zeroes the grads.
template <typename T>
void adam_step(std::span<Parameter<T>* const> params, const AdamOptions& opt) {
  for (Parameter<T>* p : params) {
    auto& st = p->adam;
    auto& value = p->var.mutable_value();
    if (st.first_moment.size() != value.size()) {
      st.first_moment = Tensor<T>(value.shape());
      st.second_moment = Tensor<T>(value.shape());
      st.step = 0;
    }
    ++st.step;
    const Tensor<T> grad = p->var.grad();
    const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(st.step));
    const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(st.step));
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = grad[i];
      const double m = opt.beta1 * st.first_moment[i] + (1.0 - opt.beta1) * g;
      const double v = opt.beta2 * st.second_moment[i] + (1.0 - opt.beta2) * g * g;
      st.first_moment[i] = static_cast<T>(m);
      st.second_moment[i] = static_cast<T>(v);
      const double update = opt.lr * (m / c1) / (std::sqrt(v / c2) + opt.eps);
      value[i] = static_cast<T>(value[i] - update);
    }
    p->var.zero_grad();
  }
}

}  // namespace flic
