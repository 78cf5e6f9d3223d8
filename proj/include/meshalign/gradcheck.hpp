#pragma once

#include <functional>
#include <string>
#include <vector>

#include "meshalign/ops.hpp"

namespace meshalign {

struct GradcheckReport {
  double max_rel_err = 0.0;
  Index checked = 0;
  std::string worst;  // "input 2, element 5"

  bool pass(double tol) const { return checked > 0 && max_rel_err <= tol; }
};

// Central-difference check of reverse-mode gradients. `fn` must be a
// deterministic scalar function of the given inputs; inputs flagged
// requires_grad are the ones checked. FD evaluations run without a tape.
template <typename T>
GradcheckReport gradcheck(const std::function<Tensor<T>(std::vector<Tensor<T>>&)>& fn,
                          std::vector<Tensor<T>> inputs, T eps = static_cast<T>(1e-6)) {
  std::vector<std::vector<T>> autodiff;
  {
    Tape<T> tape;
    Tensor<T> loss = fn(inputs);
    MA_CHECK(loss.numel() == 1, "gradcheck: fn must be scalar-valued");
    tape.backward(loss);
    for (auto& in : inputs)
      autodiff.push_back(in.requires_grad() ? in.grad_or_zeros() : std::vector<T>());
  }

  GradcheckReport rep;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    if (!inputs[k].requires_grad()) continue;
    auto& x = inputs[k];
    for (Index i = 0; i < x.numel(); ++i) {
      const T saved = x.data()[i];
      x.data()[i] = saved + eps;
      const double fp = static_cast<double>(fn(inputs).value());
      x.data()[i] = saved - eps;
      const double fm = static_cast<double>(fn(inputs).value());
      x.data()[i] = saved;
      const double fd = (fp - fm) / (2.0 * static_cast<double>(eps));
      const double ad = static_cast<double>(autodiff[k][static_cast<std::size_t>(i)]);
      const double denom = std::max({std::fabs(ad), std::fabs(fd), 1e-3});
      const double rel = std::fabs(ad - fd) / denom;
      ++rep.checked;
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst = "input " + std::to_string(k) + ", element " + std::to_string(i);
      }
    }
  }
  return rep;
}

}  // namespace meshalign
