#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace pasfuse {

using Index = std::int64_t;
using Shape = std::vector<Index>;

template <typename Scalar>
using Buffer = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Raised for any shape or argument contract violation in tensor code.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

Index numel(const Shape& shape);
std::string to_string(const Shape& shape);

template <typename Scalar>
struct TensorImpl {
  Shape shape;
  Buffer<Scalar> data;
  Buffer<Scalar> grad;  // empty until something accumulates into it
  bool requires_grad = false;

  void accumulate_grad(const Buffer<Scalar>& g) {
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
};

/// Dense row-major tensor handle.
///
/// Copies share storage (like a reference-counted array); use clone() for a
/// deep copy. Autograd state (requires_grad, grad) lives with the storage so
/// every handle to a parameter sees the same gradient.
template <typename Scalar>
class Tensor {
 public:
  using Impl = TensorImpl<Scalar>;

  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, Buffer<Scalar> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, Scalar value);
  static Tensor ones(Shape shape) { return full(std::move(shape), Scalar(1)); }
  static Tensor from(Shape shape, std::initializer_list<Scalar> values);
  static Tensor scalar(Scalar value) { return full({}, value); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  /// Extent of axis i; negative i counts from the back.
  Index dim(int i) const;
  Index size() const { return static_cast<Index>(impl_->data.size()); }

  Buffer<Scalar>& data() { return impl_->data; }
  const Buffer<Scalar>& data() const { return impl_->data; }
  Scalar* ptr() { return impl_->data.data(); }
  const Scalar* ptr() const { return impl_->data.data(); }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool value) {
    impl_->requires_grad = value;
    return *this;
  }
  bool has_grad() const { return impl_->grad.size() != 0; }
  Buffer<Scalar>& grad() { return impl_->grad; }
  const Buffer<Scalar>& grad() const { return impl_->grad; }
  /// Allocates grad as zeros (so unreached parameters read as zero).
  void zero_grad() { impl_->grad = Buffer<Scalar>::Zero(impl_->data.size()); }
  void clear_grad() { impl_->grad.resize(0); }

  Scalar item() const;
  Scalar at(std::initializer_list<Index> index) const;

  Tensor clone() const;
  /// Deep copy that does not participate in autograd.
  Tensor detach() const;

  template <typename To>
  Tensor<To> cast() const {
    return Tensor<To>(shape(), data().template cast<To>());
  }

  const std::shared_ptr<Impl>& impl() const { return impl_; }

 private:
  std::shared_ptr<Impl> impl_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace pasfuse
