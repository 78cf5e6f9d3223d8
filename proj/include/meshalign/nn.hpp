#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "meshalign/ops.hpp"
#include "meshalign/rng.hpp"

namespace meshalign {

// Flat ordered list of named trainable tensors; the order is the canonical
// order for optimizer state, gradient merging and checkpoints.
template <typename T>
class ParamRegistry {
 public:
  Tensor<T>& add(const std::string& name, Tensor<T> t) {
    for (const auto& p : params_)
      MA_CHECK(p.name() != name, "params: duplicate name '" << name << "'");
    t.set_name(name).set_requires_grad(true);
    params_.push_back(t);
    return params_.back();
  }
  std::vector<Tensor<T>>& all() { return params_; }
  const std::vector<Tensor<T>>& all() const { return params_; }
  Index total_numel() const {
    Index n = 0;
    for (const auto& p : params_) n += p.numel();
    return n;
  }
  Tensor<T>* find(const std::string& name) {
    for (auto& p : params_)
      if (p.name() == name) return &p;
    return nullptr;
  }
  void zero_grads() {
    for (auto& p : params_) p.zero_grad();
  }

 private:
  std::vector<Tensor<T>> params_;
};

namespace init {

// He-style fan-in init; draws in double so float/double builds share the
// same stream consumption.
template <typename T>
Tensor<T> normal_fan_in(Shape shape, Index fan_in, Rng& rng, double gain = 1.0) {
  const double std = gain * std::sqrt(2.0 / static_cast<double>(fan_in));
  Tensor<T> t = Tensor<T>::zeros(std::move(shape));
  for (Index i = 0; i < t.numel(); ++i) t.data()[i] = static_cast<T>(rng.normal() * std);
  return t;
}

}  // namespace init

template <typename T>
struct Linear {
  Tensor<T> w;  // (out, in)
  Tensor<T> b;  // (out)

  Linear() = default;
  Linear(ParamRegistry<T>& reg, const std::string& name, Index in, Index out, Rng& rng,
         double gain = 1.0) {
    w = reg.add(name + ".w", init::normal_fan_in<T>({out, in}, in, rng, gain));
    b = reg.add(name + ".b", Tensor<T>::zeros({out}));
  }

  // (in) -> (out)
  Tensor<T> operator()(const Tensor<T>& x) const {
    MA_CHECK(x.numel() == w.dim(1), "linear: input size " << x.numel() << " wants " << w.dim(1));
    Tensor<T> col = reshape(x, {x.numel(), 1});
    Tensor<T> y = matmul(w, col);
    return add(reshape(y, {w.dim(0)}), b);
  }
};

template <typename T>
struct Conv2d {
  Tensor<T> w;  // (Cout, Cin, k, k)
  Tensor<T> b;  // (Cout)
  Index stride = 1;
  Index pad = 0;

  Conv2d() = default;
  Conv2d(ParamRegistry<T>& reg, const std::string& name, Index cin, Index cout, Index k,
         Index stride_, Index pad_, Rng& rng)
      : stride(stride_), pad(pad_) {
    w = reg.add(name + ".w", init::normal_fan_in<T>({cout, cin, k, k}, cin * k * k, rng));
    b = reg.add(name + ".b", Tensor<T>::zeros({cout}));
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, w, b, stride, pad); }
};

}  // namespace meshalign
