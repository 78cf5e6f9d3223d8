#pragma once

#include <Eigen/Dense>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "meshalign/common.hpp"

namespace meshalign {

template <typename T>
using MatrixX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using VectorX = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <typename T>
using MatMap = Eigen::Map<MatrixX<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const MatrixX<T>>;
template <typename T>
using VecMap = Eigen::Map<VectorX<T>>;
template <typename T>
using ConstVecMap = Eigen::Map<const VectorX<T>>;

// Dense row-major n-d array with an optional gradient buffer. Tensors are
// cheap shared handles; ops produce fresh storage (no aliasing views).
template <typename T>
class Tensor {
 public:
  struct Data {
    Shape shape;
    std::vector<T> values;
    std::vector<T> grad;  // empty until backward touches this tensor
    bool requires_grad = false;
    bool op_output = false;  // produced by a recorded op (not a leaf)
    std::string name;
  };

  Tensor() = default;

  static Tensor zeros(Shape shape) {
    return filled(std::move(shape), static_cast<T>(0));
  }

  static Tensor filled(Shape shape, T value) {
    Tensor t;
    t.d_ = std::make_shared<Data>();
    t.d_->shape = std::move(shape);
    t.d_->values.assign(static_cast<std::size_t>(shape_numel(t.d_->shape)), value);
    return t;
  }

  static Tensor from(Shape shape, std::vector<T> values) {
    MA_CHECK(static_cast<Index>(values.size()) == shape_numel(shape),
             "tensor: " << values.size() << " values do not fill shape " << shape_str(shape));
    Tensor t;
    t.d_ = std::make_shared<Data>();
    t.d_->shape = std::move(shape);
    t.d_->values = std::move(values);
    return t;
  }

  static Tensor scalar(T value) { return from({1}, {value}); }

  bool defined() const { return d_ != nullptr; }
  const Shape& shape() const { return d_->shape; }
  Index dim(std::size_t i) const { return d_->shape.at(i); }
  Index ndim() const { return static_cast<Index>(d_->shape.size()); }
  Index numel() const { return static_cast<Index>(d_->values.size()); }

  T* data() { return d_->values.data(); }
  const T* data() const { return d_->values.data(); }
  std::vector<T>& values() { return d_->values; }
  const std::vector<T>& values() const { return d_->values; }
  T value() const {
    MA_CHECK(numel() == 1, "tensor: value() on non-scalar " << shape_str(shape()));
    return d_->values[0];
  }
  T at(Index i) const { return d_->values[static_cast<std::size_t>(i)]; }

  bool requires_grad() const { return d_ && d_->requires_grad; }
  Tensor& set_requires_grad(bool on = true) {
    d_->requires_grad = on;
    return *this;
  }
  bool is_op_output() const { return d_->op_output; }
  void mark_op_output() { d_->op_output = true; }

  const std::string& name() const { return d_->name; }
  Tensor& set_name(std::string n) {
    d_->name = std::move(n);
    return *this;
  }

  bool has_grad() const { return d_ && !d_->grad.empty(); }
  std::vector<T>& grad() {
    MA_CHECK(has_grad(), "tensor: gradient not populated for '" << d_->name << "'");
    return d_->grad;
  }
  const std::vector<T>& grad() const {
    MA_CHECK(has_grad(), "tensor: gradient not populated for '" << d_->name << "'");
    return d_->grad;
  }
  void ensure_grad() {
    if (d_->grad.empty()) d_->grad.assign(d_->values.size(), static_cast<T>(0));
  }
  void zero_grad() {
    if (!d_->grad.empty()) std::fill(d_->grad.begin(), d_->grad.end(), static_cast<T>(0));
  }
  // Gradient as a copy, zeros if backward never reached this tensor.
  std::vector<T> grad_or_zeros() const {
    if (has_grad()) return d_->grad;
    return std::vector<T>(d_->values.size(), static_cast<T>(0));
  }

  bool finite() const { return all_finite(d_->values); }

  // Deep copy of values (fresh leaf, no grad, no flags).
  Tensor clone_values() const {
    Tensor t = from(d_->shape, d_->values);
    t.d_->name = d_->name;
    return t;
  }

  Data* raw() const { return d_.get(); }

  // Eigen views over the flat buffer.
  MatMap<T> as_matrix(Index rows, Index cols) {
    MA_CHECK(rows * cols == numel(), "tensor: cannot view " << shape_str(shape()) << " as "
                                                            << rows << "x" << cols);
    return MatMap<T>(data(), rows, cols);
  }
  ConstMatMap<T> as_matrix(Index rows, Index cols) const {
    MA_CHECK(rows * cols == numel(), "tensor: cannot view " << shape_str(shape()) << " as "
                                                            << rows << "x" << cols);
    return ConstMatMap<T>(data(), rows, cols);
  }
  VecMap<T> as_vector() { return VecMap<T>(data(), numel()); }
  ConstVecMap<T> as_vector() const { return ConstVecMap<T>(data(), numel()); }

 private:
  std::shared_ptr<Data> d_;
};

template <typename T>
bool same_shape(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() == b.shape();
}

}  // namespace meshalign
