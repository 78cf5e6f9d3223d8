#pragma once

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <vector>

#include "meshalign/tape.hpp"

// Reverse-mode differentiable ops on Tensor<T>. Free functions; the result
// records a backward closure on the thread's active Tape when any input
// requires gradients. With no active tape they evaluate eagerly, so the
// same code serves training and plain data generation.
namespace meshalign {

namespace detail {

template <typename T>
Tensor<T> op_output(Shape shape, std::initializer_list<const Tensor<T>*> inputs) {
  Tensor<T> out = Tensor<T>::zeros(std::move(shape));
  Tape<T>* tape = Tape<T>::active();
  if (tape == nullptr) return out;
  bool rg = false;
  for (const Tensor<T>* in : inputs) rg = rg || in->requires_grad();
  if (!rg) return out;
  out.set_requires_grad(true);
  out.mark_op_output();
  for (const Tensor<T>* in : inputs)
    if (in->requires_grad() && !in->is_op_output()) tape->note_leaf(*in);
  return out;
}

template <typename T>
bool recording(const Tensor<T>& out) {
  return out.requires_grad() && Tape<T>::active() != nullptr;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise binary

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  const bool bcast_b = b.numel() == 1 && a.numel() != 1;
  const bool bcast_a = a.numel() == 1 && b.numel() != 1;
  MA_CHECK(bcast_a || bcast_b || same_shape(a, b),
           "add: shape mismatch " << shape_str(a.shape()) << " vs " << shape_str(b.shape()));
  const Tensor<T>& big = bcast_a ? b : a;
  Tensor<T> out = detail::op_output<T>(big.shape(), {&a, &b});
  const Index n = out.numel();
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  if (bcast_a)
    for (Index i = 0; i < n; ++i) po[i] = pa[0] + pb[i];
  else if (bcast_b)
    for (Index i = 0; i < n; ++i) po[i] = pa[i] + pb[0];
  else
    for (Index i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  if (detail::recording(out)) {
    Tape<T>* tape = Tape<T>::active();
    Tensor<T> ca = a, cb = b, co = out;
    tape->record("add", [tape, ca, cb, co, bcast_a, bcast_b, n]() mutable {
      const T* g = detail::grad_if_any(co);
      if (g == nullptr) return;
      if (ca.requires_grad()) {
        if (bcast_a) {
          T s = 0;
          for (Index i = 0; i < n; ++i) s += g[i];
          detail::accumulate(tape, ca, &s, 1);
        } else {
          detail::accumulate(tape, ca, g, n);
        }
      }
      if (cb.requires_grad()) {
        if (bcast_b) {
          T s = 0;
          for (Index i = 0; i < n; ++i) s += g[i];
          detail::accumulate(tape, cb, &s, 1);
        } else {
          detail::accumulate(tape, cb, g, n);
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  const bool bcast_b = b.numel() == 1 && a.numel() != 1;
  MA_CHECK(bcast_b || same_shape(a, b),
           "sub: shape mismatch " << shape_str(a.shape()) << " vs " << shape_str(b.shape()));
  Tensor<T> out = detail::op_output<T>(a.shape(), {&a, &b});
  const Index n = out.numel();
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  if (bcast_b)
    for (Index i = 0; i < n; ++i) po[i] = pa[i] - pb[0];
  else
    for (Index i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
  if (detail::recording(out)) {
    Tape<T>* tape = Tape<T>::active();
    Tensor<T> ca = a, cb = b, co = out;
    tape->record("sub", [tape, ca, cb, co, bcast_b, n]() mutable {
      const T* g = detail::grad_if_any(co);
      if (g == nullptr) return;
      if (ca.requires_grad()) detail::accumulate(tape, ca, g, n);
      if (cb.requires_grad()) {
        if (bcast_b) {
          T s = 0;
          for (Index i = 0; i < n; ++i) s += g[i];
          s = -s;
          detail::accumulate(tape, cb, &s, 1);
        } else {
          std::vector<T> gb(static_cast<std::size_t>(n));
          for (Index i = 0; i < n; ++i) gb[i] = -g[i];
          detail::accumulate(tape, cb, gb.data(), n);
        }
      }
    });
  }
  return out;
}

// Elementwise product; either side may be a 1-element tensor (scalar-tensor
// broadcast, the only broadcast the engine supports).
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  const bool bcast_b = b.numel() == 1 && a.numel() != 1;
  const bool bcast_a = a.numel() == 1 && b.numel() != 1;
  MA_CHECK(bcast_a || bcast_b || same_shape(a, b),
           "mul: shape mismatch " << shape_str(a.shape()) << " vs " << shape_str(b.shape()));
  const Tensor<T>& big = bcast_a ? b : a;
  Tensor<T> out = detail::op_output<T>(big.shape(), {&a, &b});
  const Index n = out.numel();
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  if (bcast_a)
    for (Index i = 0; i < n; ++i) po[i] = pa[0] * pb[i];
  else if (bcast_b)
    for (Index i = 0; i < n; ++i) po[i] = pa[i] * pb[0];
  else
    for (Index i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  if (detail::recording(out)) {
    Tape<T>* tape = Tape<T>::active();
    Tensor<T> ca = a, cb = b, co = out;
    tape->record("mul", [tape, ca, cb, co, bcast_a, bcast_b, n]() mutable {
      const T* g = detail::grad_if_any(co);
      if (g == nullptr) return;
      const T* pa = ca.data();
      const T* pb = cb.data();
      if (ca.requires_grad()) {
        if (bcast_a) {
          T s = 0;
          for (Index i = 0; i < n; ++i) s += g[i] * pb[i];
          detail::accumulate(tape, ca, &s, 1);
        } else {
          std::vector<T> ga(static_cast<std::size_t>(n));
          if (bcast_b)
            for (Index i = 0; i < n; ++i) ga[i] = g[i] * pb[0];
          else
            for (Index i = 0; i < n; ++i) ga[i] = g[i] * pb[i];
          detail::accumulate(tape, ca, ga.data(), n);
        }
      }
      if (cb.requires_grad()) {
        if (bcast_b) {
          T s = 0;
          for (Index i = 0; i < n; ++i) s += g[i] * pa[i];
          detail::accumulate(tape, cb, &s, 1);
        } else {
          std::vector<T> gb(static_cast<std::size_t>(n));
          if (bcast_a)
            for (Index i = 0; i < n; ++i) gb[i] = g[i] * pa[0];
          else
            for (Index i = 0; i < n; ++i) gb[i] = g[i] * pa[i];
          detail::accumulate(tape, cb, gb.data(), n);
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// elementwise with host constants

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  Tensor<T> out = detail::op_output<T>(a.shape(), {&a});
  const Index n = out.numel();
  for (Index i = 0; i < n; ++i) out.data()[i] = c * a.data()[i];
  if (detail::recording(out)) {
    Tape<T>* tape = Tape<T>::active();
    Tensor<T> ca = a, co = out;
    tape->record("scale", [tape, ca, co, c, n]() mutable {
      const T* g = detail::grad_if_any(co);
      if (g == nullptr) return;
      std::vector<T> ga(static_cast<std::size_t>(n));
      for (Index i = 0; i < n; ++i) ga[i] = c * g[i];
      detail::accumulate(tape, ca, ga.data(), n);
    });
  }
  return out;
}

template <typename T>
Tensor<T> add_const(const Tensor<T>& a, T c) {
  Tensor<T> out = detail::op_output<T>(a.shape(), {&a});
  const Index n = out.numel();
  for (Index i = 0; i < n; ++i) out.data()[i] = a.data()[i] + c;
  if (detail::recording(out)) {
    Tape<T>* tape = Tape<T>::active();
    Tensor<T> ca = a, co = out;
    tape->record("add_const", [tape, ca, co, n]() mutable {
      const T* g = detail::grad_if_any(co);
      if (g != nullptr) detail::accumulate(tape, ca, g, n);
    });
  }
  return out;
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
  return scale(a, static_cast<T>(-1));
}

// ---------------------------------------------------------------------------
// elementwise unary

namespace detail {

// f(x) with gradient g * df(x, f(x)).
template <typename T, typename F, typename D>
Tensor<T> unary(const char* name, const Tensor<T>& a, F f, D df) {
  Tensor<T> out = op_output<T>(a.shape(), {&a});
  const Index n = out.numel();
  for (Index i = 0; i < n; ++i) out.data()[i] = f(a.data()[i]);
  if (recording(out)) {
    Tape<T>* tape = Tape<T>::active();
    Tensor<T> ca = a, co = out;
    tape->record(name, [tape, ca, co, df, n]() mutable {
      const T* g = grad_if_any(co);
      if (g == nullptr) return;
      std::vector<T> ga(static_cast<std::size_t>(n));
      for (Index i = 0; i < n; ++i) ga[i] = g[i] * df(ca.data()[i], co.data()[i]);
      accumulate(tape, ca, ga.data(), n);
    });
  }
  return out;
}

}  // namespace detail

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return detail::unary(
      "relu", a, [](T x) { return x > T(0) ? x : T(0); },
      [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& a) {
  return detail::unary(
      "abs", a, [](T x) { return x < T(0) ? -x : x; },
      [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  return detail::unary(
      "log", a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  return detail::unary(
      "exp", a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& a) {
  return detail::unary(
      "sqrt", a, [](T x) { return std::sqrt(x); },
      [](T, T y) { return T(0.5) / y; });
}

template <typename T>
Tensor<T> reciprocal(const Tensor<T>& a) {
  return detail::unary(
      "reciprocal", a, [](T x) { return T(1) / x; },
      [](T, T y) { return -y * y; });
}

// sin(sqrt(t))/sqrt(t), analytic in t; series below the switch point keeps
// the value and derivative smooth through t = 0 (Rodrigues' A coefficient).
template <typename T>
Tensor<T> sinc_sqrt(const Tensor<T>& t) {
  constexpr T kTaylor = static_cast<T>(1e-4);
  return detail::unary(
      "sinc_sqrt", t,
      [](T x) {
        if (x < kTaylor)
          return T(1) - x / T(6) + x * x / T(120) - x * x * x / T(5040);
        const T s = std::sqrt(x);
        return std::sin(s) / s;
      },
      [](T x, T) {
        if (x < kTaylor) return -T(1) / T(6) + x / T(60) - x * x / T(840);
        const T s = std::sqrt(x);
        return (s * std::cos(s) - std::sin(s)) / (T(2) * x * s);
      });
}

// (1 - cos(sqrt(t)))/t, analytic in t (Rodrigues' B coefficient).
template <typename T>
Tensor<T> versine_ratio(const Tensor<T>& t) {
  constexpr T kTaylor = static_cast<T>(1e-4);
  return detail::unary(
      "versine_ratio", t,
      [](T x) {
        if (x < kTaylor)
          return T(0.5) - x / T(24) + x * x / T(720) - x * x * x / T(40320);
        return (T(1) - std::cos(std::sqrt(x))) / x;
      },
      [](T x, T) {
        if (x < kTaylor) return -T(1) / T(24) + x / T(360) - x * x / T(13440);
        const T s = std::sqrt(x);
        return (s * std::sin(s) - T(2) * (T(1) - std::cos(s))) / (T(2) * x * x);
      });
}

// ---------------------------------------------------------------------------
// reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  Tensor<T> out = detail::op_output<T>({1}, {&a});
  T s = 0;
  const Index n = a.numel();
  for (Index i = 0; i < n; ++i) s += a.data()[i];
  out.data()[0] = s;
  if (detail::recording(out)) {
    Tape<T>* tape = Tape<T>::active();
    Tensor<T> ca = a, co = out;
    tape->record("sum", [tape, ca, co, n]() mutable {
      const T* g = detail::grad_if_any(co);
      if (g == nullptr) return;
      std::vector<T> ga(static_cast<std::size_t>(n), g[0]);
      detail::accumulate(tape, ca, ga.data(), n);
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  MA_CHECK(a.numel() > 0, "mean: empty tensor");
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

// ---------------------------------------------------------------------------
// linear algebra

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  MA_CHECK(a.ndim() == 2 && b.ndim() == 2,
           "matmul: expects 2-d operands, got " << shape_str(a.shape()) << " and "
                                                << shape_str(b.shape()));
  const Index m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  MA_CHECK(k == k2, "matmul: inner dimensions differ, " << shape_str(a.shape()) << " x "
                                                        << shape_str(b.shape()));
  Tensor<T> out = detail::op_output<T>({m, n}, {&a, &b});
  out.as_matrix(m, n).noalias() = a.as_matrix(m, k) * b.as_matrix(k, n);
  if (detail::recording(out)) {
    Tape<T>* tape = Tape<T>::active();
    Tensor<T> ca = a, cb = b, co = out;
    tape->record("matmul", [tape, ca, cb, co, m, k, n]() mutable {
      const T* g = detail::grad_if_any(co);
      if (g == nullptr) return;
      ConstMatMap<T> gm(g, m, n);
      if (ca.requires_grad()) {
        std::vector<T> ga(static_cast<std::size_t>(m * k));
        MatMap<T>(ga.data(), m, k).noalias() = gm * cb.as_matrix(k, n).transpose();
        detail::accumulate(tape, ca, ga.data(), m * k);
      }
      if (cb.requires_grad()) {
        std::vector<T> gb(static_cast<std::size_t>(k * n));
        MatMap<T>(gb.data(), k, n).noalias() = ca.as_matrix(m, k).transpose() * gm;
        detail::accumulate(tape, cb, gb.data(), k * n);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& a) {
  MA_CHECK(a.ndim() == 2, "transpose2d: expects 2-d, got " << shape_str(a.shape()));
  const Index m = a.dim(0), n = a.dim(1);
  Tensor<T> out = detail::op_output<T>({n, m}, {&a});
  out.as_matrix(n, m) = a.as_matrix(m, n).transpose();
  if (detail::recording(out)) {
    Tape<T>* tape = Tape<T>::active();
    Tensor<T> ca = a, co = out;
    tape->record("transpose2d", [tape, ca, co, m, n]() mutable {
      const T* g = detail::grad_if_any(co);
      if (g == nullptr) return;
      std::vector<T> ga(static_cast<std::size_t>(m * n));
      MatMap<T>(ga.data(), m, n) = ConstMatMap<T>(g, n, m).transpose();
      detail::accumulate(tape, ca, ga.data(), m * n);
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// shape ops

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  MA_CHECK(shape_numel(shape) == a.numel(), "reshape: cannot view " << shape_str(a.shape())
                                                                    << " as " << shape_str(shape));
  Tensor<T> out = detail::op_output<T>(std::move(shape), {&a});
  std::copy(a.data(), a.data() + a.numel(), out.data());
  if (detail::recording(out)) {
    Tape<T>* tape = Tape<T>::active();
    Tensor<T> ca = a, co = out;
    const Index n = a.numel();
    tape->record("reshape", [tape, ca, co, n]() mutable {
      const T* g = detail::grad_if_any(co);
      if (g != nullptr) detail::accumulate(tape, ca, g, n);
    });
  }
  return out;
}

namespace detail {

template <typename T>
void axis_blocks(const Tensor<T>& a, Index axis, Index& outer, Index& axis_len, Index& inner) {
  outer = 1;
  inner = 1;
  for (Index i = 0; i < axis; ++i) outer *= a.dim(static_cast<std::size_t>(i));
  axis_len = a.dim(static_cast<std::size_t>(axis));
  for (Index i = axis + 1; i < a.ndim(); ++i) inner *= a.dim(static_cast<std::size_t>(i));
}

}  // namespace detail

template <typename T>
Tensor<T> slice(const Tensor<T>& a, Index axis, Index start, Index len) {
  MA_CHECK(axis >= 0 && axis < a.ndim(),
           "slice: axis " << axis << " out of range for " << shape_str(a.shape()));
  MA_CHECK(start >= 0 && len > 0 && start + len <= a.dim(static_cast<std::size_t>(axis)),
           "slice: range [" << start << ", " << start + len << ") invalid for axis " << axis
                            << " of " << shape_str(a.shape()));
  Index outer, alen, inner;
  detail::axis_blocks(a, axis, outer, alen, inner);
  Shape oshape = a.shape();
  oshape[static_cast<std::size_t>(axis)] = len;
  Tensor<T> out = detail::op_output<T>(oshape, {&a});
  for (Index o = 0; o < outer; ++o) {
    const T* src = a.data() + (o * alen + start) * inner;
    T* dst = out.data() + o * len * inner;
    std::copy(src, src + len * inner, dst);
  }
  if (detail::recording(out)) {
    Tape<T>* tape = Tape<T>::active();
    Tensor<T> ca = a, co = out;
    tape->record("slice", [tape, ca, co, outer, alen, inner, start, len]() mutable {
      const T* g = detail::grad_if_any(co);
      if (g == nullptr) return;
      std::vector<T> ga(static_cast<std::size_t>(ca.numel()), T(0));
      for (Index o = 0; o < outer; ++o) {
        T* dst = ga.data() + (o * alen + start) * inner;
        const T* src = g + o * len * inner;
        for (Index i = 0; i < len * inner; ++i) dst[i] += src[i];
      }
      detail::accumulate(tape, ca, ga.data(), ca.numel());
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, Index axis) {
  MA_CHECK(!xs.empty(), "concat: no inputs");
  const Index nd = xs[0].ndim();
  MA_CHECK(axis >= 0 && axis < nd, "concat: axis " << axis << " out of range");
  Index total = 0;
  for (const auto& x : xs) {
    MA_CHECK(x.ndim() == nd, "concat: rank mismatch " << shape_str(x.shape()) << " vs "
                                                      << shape_str(xs[0].shape()));
    for (Index d = 0; d < nd; ++d)
      MA_CHECK(d == axis || x.dim(static_cast<std::size_t>(d)) ==
                                xs[0].dim(static_cast<std::size_t>(d)),
               "concat: shape mismatch " << shape_str(x.shape()) << " vs "
                                         << shape_str(xs[0].shape()));
    total += x.dim(static_cast<std::size_t>(axis));
  }
  Shape oshape = xs[0].shape();
  oshape[static_cast<std::size_t>(axis)] = total;
  std::vector<const Tensor<T>*> ptrs;
  for (const auto& x : xs) ptrs.push_back(&x);
  Tensor<T> out = Tensor<T>::zeros(oshape);
  {
    // op_output with a dynamic input list
    Tape<T>* tape = Tape<T>::active();
    if (tape != nullptr) {
      bool rg = false;
      for (const auto& x : xs) rg = rg || x.requires_grad();
      if (rg) {
        out.set_requires_grad(true);
        out.mark_op_output();
        for (const auto& x : xs)
          if (x.requires_grad() && !x.is_op_output()) tape->note_leaf(x);
      }
    }
  }
  Index outer, alen_o, inner;
  detail::axis_blocks(out, axis, outer, alen_o, inner);
  Index offset = 0;
  for (const auto& x : xs) {
    const Index alen = x.dim(static_cast<std::size_t>(axis));
    for (Index o = 0; o < outer; ++o) {
      const T* src = x.data() + o * alen * inner;
      T* dst = out.data() + (o * alen_o + offset) * inner;
      std::copy(src, src + alen * inner, dst);
    }
    offset += alen;
  }
  if (detail::recording(out)) {
    Tape<T>* tape = Tape<T>::active();
    std::vector<Tensor<T>> cs = xs;
    Tensor<T> co = out;
    tape->record("concat", [tape, cs, co, axis, outer, alen_o, inner]() mutable {
      const T* g = detail::grad_if_any(co);
      if (g == nullptr) return;
      Index offset = 0;
      for (auto& x : cs) {
        const Index alen = x.dim(static_cast<std::size_t>(axis));
        if (x.requires_grad()) {
          std::vector<T> gx(static_cast<std::size_t>(x.numel()));
          for (Index o = 0; o < outer; ++o) {
            const T* src = g + (o * alen_o + offset) * inner;
            T* dst = gx.data() + o * alen * inner;
            std::copy(src, src + alen * inner, dst);
          }
          detail::accumulate(tape, x, gx.data(), x.numel());
        }
        offset += alen;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// indexed ops

// Rows of `a` (leading axis) selected by `idx`; duplicates allowed.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& a, const std::vector<Index>& idx) {
  MA_CHECK(a.ndim() >= 1, "gather_rows: scalar input");
  const Index rows = a.dim(0);
  const Index rowlen = a.numel() / rows;
  for (Index i : idx)
    MA_CHECK(i >= 0 && i < rows,
             "gather_rows: index " << i << " out of range for " << shape_str(a.shape()));
  Shape oshape = a.shape();
  oshape[0] = static_cast<Index>(idx.size());
  Tensor<T> out = detail::op_output<T>(oshape, {&a});
  for (std::size_t k = 0; k < idx.size(); ++k)
    std::copy(a.data() + idx[k] * rowlen, a.data() + (idx[k] + 1) * rowlen,
              out.data() + static_cast<Index>(k) * rowlen);
  if (detail::recording(out)) {
    Tape<T>* tape = Tape<T>::active();
    Tensor<T> ca = a, co = out;
    std::vector<Index> cidx = idx;
    tape->record("gather_rows", [tape, ca, co, cidx, rowlen]() mutable {
      const T* g = detail::grad_if_any(co);
      if (g == nullptr) return;
      std::vector<T> ga(static_cast<std::size_t>(ca.numel()), T(0));
      for (std::size_t k = 0; k < cidx.size(); ++k) {
        T* dst = ga.data() + cidx[k] * rowlen;
        const T* src = g + static_cast<Index>(k) * rowlen;
        for (Index i = 0; i < rowlen; ++i) dst[i] += src[i];
      }
      detail::accumulate(tape, ca, ga.data(), ca.numel());
    });
  }
  return out;
}

// Inverse of gather_rows: out has `out_rows` rows, row idx[k] accumulates
// row k of `a` (duplicates add, in k order).
template <typename T>
Tensor<T> scatter_rows(const Tensor<T>& a, const std::vector<Index>& idx, Index out_rows) {
  MA_CHECK(a.ndim() >= 1, "scatter_rows: scalar input");
  MA_CHECK(a.dim(0) == static_cast<Index>(idx.size()),
           "scatter_rows: " << idx.size() << " indices for " << a.dim(0) << " rows");
  const Index rowlen = a.numel() / std::max<Index>(a.dim(0), 1);
  for (Index i : idx)
    MA_CHECK(i >= 0 && i < out_rows, "scatter_rows: index " << i << " out of range 0.." << out_rows);
  Shape oshape = a.shape();
  oshape[0] = out_rows;
  Tensor<T> out = detail::op_output<T>(oshape, {&a});
  for (std::size_t k = 0; k < idx.size(); ++k) {
    T* dst = out.data() + idx[k] * rowlen;
    const T* src = a.data() + static_cast<Index>(k) * rowlen;
    for (Index i = 0; i < rowlen; ++i) dst[i] += src[i];
  }
  if (detail::recording(out)) {
    Tape<T>* tape = Tape<T>::active();
    Tensor<T> ca = a, co = out;
    std::vector<Index> cidx = idx;
    tape->record("scatter_rows", [tape, ca, co, cidx, rowlen]() mutable {
      const T* g = detail::grad_if_any(co);
      if (g == nullptr) return;
      std::vector<T> ga(static_cast<std::size_t>(ca.numel()));
      for (std::size_t k = 0; k < cidx.size(); ++k)
        std::copy(g + cidx[k] * rowlen, g + (cidx[k] + 1) * rowlen,
                  ga.data() + static_cast<Index>(k) * rowlen);
      detail::accumulate(tape, ca, ga.data(), ca.numel());
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// detach

// Value copy that blocks gradient flow.
template <typename T>
Tensor<T> detach(const Tensor<T>& a) {
  return Tensor<T>::from(a.shape(), a.values());
}

// ---------------------------------------------------------------------------
// spatial ops (C,H,W)

template <typename T>
Tensor<T> avgpool2d(const Tensor<T>& a, Index kh, Index kw, Index sh, Index sw) {
  MA_CHECK(a.ndim() == 3, "avgpool2d: expects (C,H,W), got " << shape_str(a.shape()));
  const Index C = a.dim(0), H = a.dim(1), W = a.dim(2);
  MA_CHECK(kh >= 1 && kw >= 1 && sh >= 1 && sw >= 1 && kh <= H && kw <= W,
           "avgpool2d: window " << kh << "x" << kw << " stride " << sh << "x" << sw
                                << " invalid for " << shape_str(a.shape()));
  const Index OH = (H - kh) / sh + 1, OW = (W - kw) / sw + 1;
  Tensor<T> out = detail::op_output<T>({C, OH, OW}, {&a});
  const T inv = T(1) / static_cast<T>(kh * kw);
  for (Index c = 0; c < C; ++c)
    for (Index oy = 0; oy < OH; ++oy)
      for (Index ox = 0; ox < OW; ++ox) {
        T s = 0;
        for (Index ky = 0; ky < kh; ++ky) {
          const T* row = a.data() + (c * H + oy * sh + ky) * W + ox * sw;
          for (Index kx = 0; kx < kw; ++kx) s += row[kx];
        }
        out.data()[(c * OH + oy) * OW + ox] = s * inv;
      }
  if (detail::recording(out)) {
    Tape<T>* tape = Tape<T>::active();
    Tensor<T> ca = a, co = out;
    tape->record("avgpool2d", [tape, ca, co, C, H, W, OH, OW, kh, kw, sh, sw, inv]() mutable {
      const T* g = detail::grad_if_any(co);
      if (g == nullptr) return;
      std::vector<T> ga(static_cast<std::size_t>(ca.numel()), T(0));
      for (Index c = 0; c < C; ++c)
        for (Index oy = 0; oy < OH; ++oy)
          for (Index ox = 0; ox < OW; ++ox) {
            const T gv = g[(c * OH + oy) * OW + ox] * inv;
            for (Index ky = 0; ky < kh; ++ky) {
              T* row = ga.data() + (c * H + oy * sh + ky) * W + ox * sw;
              for (Index kx = 0; kx < kw; ++kx) row[kx] += gv;
            }
          }
      detail::accumulate(tape, ca, ga.data(), ca.numel());
    });
  }
  return out;
}

// (C,H,W) -> (C); average over the spatial grid.
template <typename T>
Tensor<T> global_avgpool(const Tensor<T>& a) {
  MA_CHECK(a.ndim() == 3, "global_avgpool: expects (C,H,W), got " << shape_str(a.shape()));
  return reshape(avgpool2d(a, a.dim(1), a.dim(2), Index(1), Index(1)), {a.dim(0)});
}

// Direct-loop 2-d convolution, (Cin,H,W) * (Cout,Cin,kh,kw) -> (Cout,OH,OW).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, Index stride,
                 Index pad) {
  MA_CHECK(x.ndim() == 3, "conv2d: input expects (C,H,W), got " << shape_str(x.shape()));
  MA_CHECK(w.ndim() == 4, "conv2d: weight expects (Cout,Cin,kh,kw), got " << shape_str(w.shape()));
  const Index Cin = x.dim(0), H = x.dim(1), W = x.dim(2);
  const Index Cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  MA_CHECK(w.dim(1) == Cin, "conv2d: channel mismatch, input " << shape_str(x.shape())
                                                               << " weight " << shape_str(w.shape()));
  MA_CHECK(b.numel() == Cout, "conv2d: bias shape " << shape_str(b.shape()) << " wants ["
                                                    << Cout << "]");
  MA_CHECK(stride >= 1 && pad >= 0, "conv2d: bad stride/pad");
  const Index OH = (H + 2 * pad - kh) / stride + 1;
  const Index OW = (W + 2 * pad - kw) / stride + 1;
  MA_CHECK(OH >= 1 && OW >= 1, "conv2d: kernel larger than padded input");
  Tensor<T> out = detail::op_output<T>({Cout, OH, OW}, {&x, &w, &b});

  // output positions o with 0 <= o*stride - pad + k < limit
  auto bounds = [&](Index k, Index limit, Index cap, Index& lo, Index& hi) {
    const Index num = pad - k;
    lo = num <= 0 ? 0 : (num + stride - 1) / stride;
    hi = std::min<Index>((limit - 1 + pad - k) / stride, cap - 1);
  };

  for (Index co = 0; co < Cout; ++co) {
    T* oplane = out.data() + co * OH * OW;
    const T bias = b.data()[co];
    for (Index i = 0; i < OH * OW; ++i) oplane[i] = bias;
    for (Index ci = 0; ci < Cin; ++ci) {
      const T* xplane = x.data() + ci * H * W;
      for (Index ky = 0; ky < kh; ++ky)
        for (Index kx = 0; kx < kw; ++kx) {
          const T wv = w.data()[((co * Cin + ci) * kh + ky) * kw + kx];
          Index oy_lo, oy_hi, ox_lo, ox_hi;
          bounds(ky, H, OH, oy_lo, oy_hi);
          bounds(kx, W, OW, ox_lo, ox_hi);
          for (Index oy = oy_lo; oy <= oy_hi; ++oy) {
            const Index iy = oy * stride - pad + ky;
            const T* xrow = xplane + iy * W - pad + kx;
            T* orow = oplane + oy * OW;
            for (Index ox = ox_lo; ox <= ox_hi; ++ox) orow[ox] += wv * xrow[ox * stride];
          }
        }
    }
  }

  if (detail::recording(out)) {
    Tape<T>* tape = Tape<T>::active();
    Tensor<T> cx = x, cw = w, cb = b, co_t = out;
    tape->record("conv2d", [tape, cx, cw, cb, co_t, Cin, H, W, Cout, kh, kw, OH, OW, stride,
                            pad]() mutable {
      const T* g = detail::grad_if_any(co_t);
      if (g == nullptr) return;
      const bool need_x = cx.requires_grad();
      const bool need_w = cw.requires_grad();
      const bool need_b = cb.requires_grad();
      std::vector<T> gx(need_x ? static_cast<std::size_t>(cx.numel()) : 0, T(0));
      std::vector<T> gw(need_w ? static_cast<std::size_t>(cw.numel()) : 0, T(0));
      std::vector<T> gb(need_b ? static_cast<std::size_t>(Cout) : 0, T(0));

      auto bounds = [&](Index k, Index limit, Index cap, Index& lo, Index& hi) {
        const Index num = pad - k;
        lo = num <= 0 ? 0 : (num + stride - 1) / stride;
        hi = std::min<Index>((limit - 1 + pad - k) / stride, cap - 1);
      };

      for (Index co = 0; co < Cout; ++co) {
        const T* gplane = g + co * OH * OW;
        if (need_b) {
          T s = 0;
          for (Index i = 0; i < OH * OW; ++i) s += gplane[i];
          gb[co] += s;
        }
        for (Index ci = 0; ci < Cin; ++ci) {
          const T* xplane = cx.data() + ci * H * W;
          T* gxplane = need_x ? gx.data() + ci * H * W : nullptr;
          for (Index ky = 0; ky < kh; ++ky)
            for (Index kx = 0; kx < kw; ++kx) {
              const T wv = cw.data()[((co * Cin + ci) * kh + ky) * kw + kx];
              Index oy_lo, oy_hi, ox_lo, ox_hi;
              bounds(ky, H, OH, oy_lo, oy_hi);
              bounds(kx, W, OW, ox_lo, ox_hi);
              T acc = 0;
              for (Index oy = oy_lo; oy <= oy_hi; ++oy) {
                const Index iy = oy * stride - pad + ky;
                const T* xrow = xplane + iy * W - pad + kx;
                T* gxrow = need_x ? gxplane + iy * W - pad + kx : nullptr;
                const T* grow = gplane + oy * OW;
                for (Index ox = ox_lo; ox <= ox_hi; ++ox) {
                  const T gv = grow[ox];
                  acc += gv * xrow[ox * stride];
                  if (need_x) gxrow[ox * stride] += wv * gv;
                }
              }
              if (need_w) gw[((co * Cin + ci) * kh + ky) * kw + kx] += acc;
            }
        }
      }
      if (need_x) detail::accumulate(tape, cx, gx.data(), cx.numel());
      if (need_w) detail::accumulate(tape, cw, gw.data(), cw.numel());
      if (need_b) detail::accumulate(tape, cb, gb.data(), Cout);
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// composite conveniences

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
  return mul(a, a);
}

// mean((a-b)^2) over all elements.
template <typename T>
Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b) {
  MA_CHECK(same_shape(a, b),
           "mse: shape mismatch " << shape_str(a.shape()) << " vs " << shape_str(b.shape()));
  return mean(square(sub(a, b)));
}

}  // namespace meshalign
