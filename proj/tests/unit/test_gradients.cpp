#include "support/gradcheck.hpp"

#include <doctest.h>

using namespace pasfuse;

TEST_CASE("every differentiable primitive matches central finite differences") {
  for (const auto& r : testing::run_gradient_suite(20)) {
    INFO(r.name << " worst relative error " << r.worst_rel_error);
    CHECK(r.cases == 20);
    CHECK(r.worst_rel_error < 1e-4);
  }
}

TEST_CASE("d(sum x)/dx is all ones") {
  auto x = Tensor<double>::from({3}, {1.0, -2.0, 5.0});
  x.set_requires_grad(true);
  x.zero_grad();
  backward(sum(x));
  CHECK(x.grad() == Buffer<double>::Ones(3));
}

TEST_CASE("relu gradient is 1 above zero and 0 below") {
  auto x = Tensor<double>::from({2}, {0.5, -0.5});
  x.set_requires_grad(true);
  x.zero_grad();
  backward(sum(relu(x)));
  CHECK(x.grad()[0] == 1.0);
  CHECK(x.grad()[1] == 0.0);
}

TEST_CASE("unreached parameters keep a zero gradient") {
  auto used = Tensor<double>::from({2}, {1.0, 2.0}).set_requires_grad(true);
  auto unused = Tensor<double>::from({2}, {3.0, 4.0}).set_requires_grad(true);
  used.zero_grad();
  unused.zero_grad();
  backward(sum(mul(used, used)));
  CHECK(unused.grad() == Buffer<double>::Zero(2));
  CHECK(used.grad()[1] == doctest::Approx(4.0));
}

TEST_CASE("backward rejects non-scalar losses") {
  auto x = Tensor<double>::from({2}, {1.0, 2.0}).set_requires_grad(true);
  CHECK_THROWS_AS(backward(relu(x)), ShapeError);
  Tape<double>::current().clear();
}

TEST_CASE("no tape is recorded under NoGradGuard") {
  auto x = Tensor<float>::from({2}, {1.f, 2.f}).set_requires_grad(true);
  const auto before = Tape<float>::current().size();
  {
    NoGradGuard guard;
    auto y = relu(x);
    CHECK_FALSE(y.requires_grad());
  }
  CHECK(Tape<float>::current().size() == before);
}

