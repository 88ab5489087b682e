#include "pasfuse/ndcore/tape.hpp"

namespace pasfuse {

namespace {
thread_local int no_grad_depth = 0;
}

bool grad_enabled() { return no_grad_depth == 0; }

NoGradGuard::NoGradGuard() { ++no_grad_depth; }
NoGradGuard::~NoGradGuard() { --no_grad_depth; }

template <typename Scalar>
Tape<Scalar>& Tape<Scalar>::current() {
  thread_local Tape tape;
  return tape;
}

template <typename Scalar>
void Tape<Scalar>::backward(const Tensor<Scalar>& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ShapeError("backward() needs a scalar loss");
  }
  if (!loss.requires_grad()) {
    clear();
    return;
  }
  auto& impl = *loss.impl();
  impl.accumulate_grad(Buffer<Scalar>::Ones(1));
  // Closures may be appended only during forward, so iterate by index.
  for (std::size_t i = nodes_.size(); i-- > 0;) nodes_[i]();
  clear();
}

template class Tape<float>;
template class Tape<double>;

}  // namespace pasfuse
