#pragma once

#include <Eigen/Dense>

#include "meshalign/ops.hpp"

namespace meshalign {

namespace detail {

template <typename T>
const Tensor<T>& skew_basis() {
  // (9,3) map from an axis vector to its flattened cross-product matrix
  static const Tensor<T> s = [] {
    Tensor<T> m = Tensor<T>::zeros({9, 3});
    auto set = [&m](Index r, Index c, T v) { m.data()[r * 3 + c] = v; };
    set(1, 2, T(-1));
    set(2, 1, T(1));
    set(3, 2, T(1));
    set(5, 0, T(-1));
    set(6, 1, T(-1));
    set(7, 0, T(1));
    return m;
  }();
  return s;
}

template <typename T>
const Tensor<T>& identity3() {
  static const Tensor<T> i3 = Tensor<T>::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  return i3;
}

}  // namespace detail

// Rodrigues rotation from an axis-angle 3-vector, differentiable through
// the zero-angle limit: R = I + A(t) K + B(t) K^2 with t = |aa|^2,
// A = sin|aa|/|aa|, B = (1-cos|aa|)/|aa|^2 (both analytic in t).
template <typename T>
Tensor<T> axis_angle_to_matrix(const Tensor<T>& aa) {
  MA_CHECK(aa.numel() == 3, "axis_angle_to_matrix: wants 3 values, got "
                                << shape_str(aa.shape()));
  MA_CHECK(aa.finite(), "axis_angle_to_matrix: non-finite input");
  Tensor<T> t = sum(mul(aa, aa));
  Tensor<T> a_coef = sinc_sqrt(t);
  Tensor<T> b_coef = versine_ratio(t);
  Tensor<T> k = reshape(matmul(detail::skew_basis<T>(), reshape(aa, {3, 1})), {3, 3});
  Tensor<T> k2 = matmul(k, k);
  return add(add(detail::identity3<T>(), mul(k, a_coef)), mul(k2, b_coef));
}

// Continuous 6-d rotation: Gram-Schmidt of two 3-vectors plus their cross
// product; columns of the result are the orthonormalized frame.
template <typename T>
Tensor<T> rot6d_to_matrix(const Tensor<T>& r6) {
  MA_CHECK(r6.numel() == 6, "rot6d_to_matrix: wants 6 values, got " << shape_str(r6.shape()));
  Tensor<T> a1 = reshape(slice(reshape(r6, {6}), 0, 0, 3), {3});
  Tensor<T> a2 = reshape(slice(reshape(r6, {6}), 0, 3, 3), {3});
  Tensor<T> n1sq = sum(mul(a1, a1));
  MA_CHECK(std::sqrt(static_cast<double>(n1sq.value())) >= 1e-8,
           "rot6d_to_matrix: first column norm below 1e-8");
  Tensor<T> b1 = mul(a1, reciprocal(sqrt(n1sq)));
  Tensor<T> d = sum(mul(b1, a2));
  Tensor<T> u2 = sub(a2, mul(b1, d));
  Tensor<T> n2sq = sum(mul(u2, u2));
  MA_CHECK(std::sqrt(static_cast<double>(n2sq.value())) >= 1e-8,
           "rot6d_to_matrix: columns are collinear");
  Tensor<T> b2 = mul(u2, reciprocal(sqrt(n2sq)));
  auto comp = [](const Tensor<T>& v, Index i) { return slice(v, 0, i, 1); };
  auto cross_comp = [&](Index i, Index j, const Tensor<T>& u, const Tensor<T>& v) {
    return sub(mul(comp(u, i), comp(v, j)), mul(comp(u, j), comp(v, i)));
  };
  Tensor<T> b3 = concat<T>({cross_comp(1, 2, b1, b2), cross_comp(2, 0, b1, b2),
                            cross_comp(0, 1, b1, b2)},
                           0);
  Tensor<T> rows = concat<T>({reshape(b1, {1, 3}), reshape(b2, {1, 3}), reshape(b3, {1, 3})}, 0);
  return transpose2d(rows);  // columns b1 b2 b3
}

// First two columns of R, flattened: the inverse of rot6d_to_matrix on SO(3).
template <typename T>
Tensor<T> matrix_to_rot6d(const Tensor<T>& r) {
  MA_CHECK(r.numel() == 9, "matrix_to_rot6d: wants 3x3");
  const T* p = r.data();
  return Tensor<T>::from({6}, {p[0], p[3], p[6], p[1], p[4], p[7]});
}

// Plain Eigen Rodrigues; used by oracles and non-graph paths.
template <typename T>
Eigen::Matrix<T, 3, 3> rodrigues_plain(const Eigen::Matrix<T, 3, 1>& aa) {
  using Mat3 = Eigen::Matrix<T, 3, 3>;
  const T angle = aa.norm();
  if (angle < static_cast<T>(1e-12)) return Mat3::Identity();
  const Eigen::Matrix<T, 3, 1> axis = aa / angle;
  return Eigen::AngleAxis<T>(angle, axis).toRotationMatrix();
}

}  // namespace meshalign
