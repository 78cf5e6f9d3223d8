#pragma once

#include <cmath>
#include <vector>

#include "meshalign/tensor.hpp"

namespace meshalign {

template <typename T>
struct AdamConfig {
  T lr = static_cast<T>(1e-4);
  T beta1 = static_cast<T>(0.9);
  T beta2 = static_cast<T>(0.999);
  T eps = static_cast<T>(1e-8);
};

// Standard Adam with bias correction; moments are kept parallel to the
// parameter list handed to init().
template <typename T>
class AdamState {
 public:
  AdamState() = default;
  explicit AdamState(AdamConfig<T> cfg) : cfg_(cfg) {}

  void init(const std::vector<Tensor<T>>& params) {
    m_.clear();
    v_.clear();
    for (const auto& p : params) {
      m_.emplace_back(static_cast<std::size_t>(p.numel()), T(0));
      v_.emplace_back(static_cast<std::size_t>(p.numel()), T(0));
    }
    step_ = 0;
  }

  bool initialized() const { return !m_.empty(); }
  Index step_count() const { return step_; }
  AdamConfig<T>& config() { return cfg_; }
  const AdamConfig<T>& config() const { return cfg_; }
  std::vector<std::vector<T>>& moments1() { return m_; }
  std::vector<std::vector<T>>& moments2() { return v_; }
  void set_step_count(Index s) { step_ = s; }

  // In-place update from params[i].grad(); grads must be populated.
  void step_update(std::vector<Tensor<T>>& params) {
    MA_CHECK(params.size() == m_.size(), "adam: state built for " << m_.size()
                                                                  << " params, got " << params.size());
    MA_CHECK(cfg_.lr > T(0), "adam: learning rate must be positive");
    ++step_;
    const T bc1 = T(1) - std::pow(cfg_.beta1, static_cast<T>(step_));
    const T bc2 = T(1) - std::pow(cfg_.beta2, static_cast<T>(step_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& p = params[k];
      const std::vector<T> g = p.grad_or_zeros();
      MA_CHECK(all_finite(g), "adam: non-finite gradient for parameter '" << p.name() << "'");
      T* pm = m_[k].data();
      T* pv = v_[k].data();
      T* pp = p.data();
      const Index n = p.numel();
      for (Index i = 0; i < n; ++i) {
        pm[i] = cfg_.beta1 * pm[i] + (T(1) - cfg_.beta1) * g[i];
        pv[i] = cfg_.beta2 * pv[i] + (T(1) - cfg_.beta2) * g[i] * g[i];
        const T mhat = pm[i] / bc1;
        const T vhat = pv[i] / bc2;
        pp[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

 private:
  AdamConfig<T> cfg_;
  std::vector<std::vector<T>> m_, v_;
  Index step_ = 0;
};

}  // namespace meshalign
