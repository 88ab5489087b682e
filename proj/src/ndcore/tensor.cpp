#include "pasfuse/ndcore/tensor.hpp"

#include <sstream>

namespace pasfuse {

Index numel(const Shape& shape) {
  Index n = 1;
  for (Index e : shape) {
    if (e < 0) throw ShapeError("negative extent in shape " + to_string(shape));
    n *= e;
  }
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape) : impl_(std::make_shared<Impl>()) {
  const Index n = numel(shape);
  impl_->shape = std::move(shape);
  impl_->data = Buffer<Scalar>::Zero(n);
}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, Buffer<Scalar> data) : impl_(std::make_shared<Impl>()) {
  if (numel(shape) != data.size()) {
    throw ShapeError("shape " + to_string(shape) + " does not match " +
                     std::to_string(data.size()) + " values");
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::full(Shape shape, Scalar value) {
  Tensor t(std::move(shape));
  t.data().setConstant(value);
  return t;
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::from(Shape shape, std::initializer_list<Scalar> values) {
  Buffer<Scalar> data(static_cast<Index>(values.size()));
  Index i = 0;
  for (Scalar v : values) data[i++] = v;
  return Tensor(std::move(shape), std::move(data));
}

template <typename Scalar>
Index Tensor<Scalar>::dim(int i) const {
  const int r = rank();
  const int axis = i < 0 ? r + i : i;
  if (axis < 0 || axis >= r) {
    throw ShapeError("axis " + std::to_string(i) + " out of range for shape " +
                     to_string(shape()));
  }
  return impl_->shape[axis];
}

template <typename Scalar>
Scalar Tensor<Scalar>::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return impl_->data[0];
}

template <typename Scalar>
Scalar Tensor<Scalar>::at(std::initializer_list<Index> index) const {
  if (static_cast<int>(index.size()) != rank()) throw ShapeError("at(): rank mismatch");
  Index flat = 0;
  int axis = 0;
  for (Index i : index) {
    if (i < 0 || i >= impl_->shape[axis]) throw ShapeError("at(): index out of range");
    flat = flat * impl_->shape[axis] + i;
    ++axis;
  }
  return impl_->data[flat];
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::clone() const {
  Tensor t(shape(), data());
  t.impl_->requires_grad = impl_->requires_grad;
  t.impl_->grad = impl_->grad;
  return t;
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::detach() const {
  return Tensor(shape(), data());
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace pasfuse
