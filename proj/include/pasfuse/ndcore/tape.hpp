#pragma once

#include "pasfuse/ndcore/tensor.hpp"

#include <functional>
#include <vector>

namespace pasfuse {

/// True unless a NoGradGuard is active on this thread.
bool grad_enabled();

/// Suspends tape recording for its lifetime (nestable).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

/// Ordered record of executed differentiable ops, one per thread and scalar
/// type. Backward runs the recorded closures in exact reverse order and then
/// clears the record.
template <typename Scalar>
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  static Tape& current();

  void record(BackwardFn fn) { nodes_.push_back(std::move(fn)); }
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  void backward(const Tensor<Scalar>& loss);

 private:
  std::vector<BackwardFn> nodes_;
};

/// Populates grad on every tensor reachable from a scalar loss.
template <typename Scalar>
void backward(const Tensor<Scalar>& loss) {
  Tape<Scalar>::current().backward(loss);
}

/// Whether an op over these inputs must be recorded.
template <typename Scalar, typename... Rest>
bool needs_grad(const Tensor<Scalar>& first, const Rest&... rest) {
  if (!grad_enabled()) return false;
  bool any = first.defined() && first.requires_grad();
  ((any = any || (rest.defined() && rest.requires_grad())), ...);
  return any;
}

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace pasfuse
