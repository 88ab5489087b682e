#pragma once

// Central finite-difference gradient checks for every differentiable
// primitive, in 64-bit mode.

#include "pasfuse/ndcore/ops.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace pasfuse::testing {

using T = Tensor<double>;
using OpFn = std::function<T(const std::vector<T>&)>;

struct GradCase {
  std::string name;
  std::vector<Shape> input_shapes;
  OpFn op;
  double lo = -1.0, hi = 1.0;  // input sampling range
  bool distinct = false;       // shuffled evenly spaced values, no near-ties
};

struct GradResult {
  std::string name;
  int cases = 0;
  double worst_rel_error = 0;
};

inline constexpr double kFdStep = 1e-5;

/// max over inputs of ||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-6).
/// The floor covers inputs whose true gradient is identically zero (e.g. the
/// key bias in attention, which softmax cancels).
inline double check_case(const GradCase& gc, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<T> inputs;
  for (const auto& s : gc.input_shapes) {
    T t(s);
    if (gc.distinct) {
      const Index n = t.size();
      for (Index i = 0; i < n; ++i) t.data()[i] = gc.lo + (gc.hi - gc.lo) * (i + 0.5) / n;
      for (Index i = n - 1; i > 0; --i)
        std::swap(t.data()[i], t.data()[static_cast<Index>(rng.below(i + 1))]);
    } else {
      for (Index i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(gc.lo, gc.hi);
    }
    inputs.push_back(t);
  }
  // Random projection so every output component contributes to the loss.
  T probe;
  {
    NoGradGuard ng;
    const T y = gc.op(inputs);
    probe = T(y.shape());
    for (Index i = 0; i < probe.size(); ++i) probe.data()[i] = rng.uniform(-1.0, 1.0);
  }
  auto objective = [&](const std::vector<T>& xs) {
    NoGradGuard ng;
    return gc.op(xs).data().dot(probe.data());
  };

  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  const T y = gc.op(inputs);
  backward(sum(mul(y, probe)));

  double worst = 0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Buffer<double> numeric(inputs[k].size());
    for (Index i = 0; i < inputs[k].size(); ++i) {
      std::vector<T> plus, minus;
      for (const auto& t : inputs) {
        plus.push_back(t.detach());
        minus.push_back(t.detach());
      }
      plus[k].data()[i] += kFdStep;
      minus[k].data()[i] -= kFdStep;
      numeric[i] = (objective(plus) - objective(minus)) / (2 * kFdStep);
    }
    const Buffer<double>& analytic = inputs[k].grad();
    const double scale = std::max({analytic.norm(), numeric.norm(), 1e-6});
    worst = std::max(worst, (analytic - numeric).norm() / scale);
  }
  return worst;
}

inline std::vector<GradCase> gradient_cases() {
  std::vector<GradCase> cases;
  auto add_case = [&](std::string name, std::vector<Shape> shapes, OpFn op, double lo = -1.0,
                      double hi = 1.0) {
    cases.push_back({std::move(name), std::move(shapes), std::move(op), lo, hi});
  };
  add_case("add", {{4}, {4}}, [](auto& x) { return add(x[0], x[1]); });
  add_case("sub", {{4}, {4}}, [](auto& x) { return sub(x[0], x[1]); });
  add_case("mul", {{5}, {5}}, [](auto& x) { return mul(x[0], x[1]); });
  add_case("scale", {{3}}, [](auto& x) { return scale(x[0], 2.5); });
  add_case("add_trailing", {{2, 3}, {3}}, [](auto& x) { return add_trailing(x[0], x[1]); });
  add_case("sum", {{4}}, [](auto& x) { return sum(x[0]); });
  add_case("mean", {{4}}, [](auto& x) { return mean(x[0]); });
  add_case("mean_axis", {{2, 3, 2}}, [](auto& x) { return mean_axis(x[0], 1); });
  add_case("reshape", {{2, 3}}, [](auto& x) { return reshape(x[0], {3, 2}); });
  add_case("permute", {{2, 3, 2}}, [](auto& x) { return permute(x[0], {2, 0, 1}); });
  add_case("concat", {{2, 2}, {2, 3}}, [](auto& x) { return concat<double>({x[0], x[1]}, 1); });
  add_case("slice", {{3, 4}}, [](auto& x) { return slice(x[0], 1, 1, 3); });
  add_case("matmul", {{2, 3, 2}, {2, 2, 3}}, [](auto& x) { return matmul(x[0], x[1]); });
  add_case("matmul_ta", {{2, 2, 3}, {2, 2, 2}},
           [](auto& x) { return matmul(x[0], x[1], true, false); });
  add_case("matmul_tb", {{2, 3, 2}, {2, 4, 2}},
           [](auto& x) { return matmul(x[0], x[1], false, true); });
  add_case("matmul_tab", {{3, 2}, {4, 3}}, [](auto& x) { return matmul(x[0], x[1], true, true); });
  add_case("relu", {{5}}, [](auto& x) { return relu(x[0]); });
  add_case("gelu", {{5}}, [](auto& x) { return gelu(x[0]); }, -3.0, 3.0);
  add_case("sigmoid", {{5}}, [](auto& x) { return sigmoid(x[0]); }, -4.0, 4.0);
  add_case("softmax", {{2, 3}}, [](auto& x) { return softmax(x[0]); }, -2.0, 2.0);
  add_case("linear", {{2, 3}, {4, 3}, {4}}, [](auto& x) { return linear(x[0], x[1], x[2]); });
  add_case("conv2d", {{2, 2, 5, 4}, {3, 2, 3, 3}, {3}},
           [](auto& x) { return conv(x[0], x[1], x[2], 2, 1, 2); });
  add_case("conv2d_pointwise", {{2, 3, 3, 3}, {2, 3, 1, 1}, {2}},
           [](auto& x) { return conv(x[0], x[1], x[2], 1, 0, 2); });
  add_case("conv3d", {{1, 2, 4, 4, 3}, {2, 2, 3, 3, 3}, {2}},
           [](auto& x) { return conv(x[0], x[1], x[2], 1, 1, 3); });
  add_case("conv3d_strided", {{2, 1, 5, 5, 4}, {2, 1, 3, 3, 3}, {2}},
           [](auto& x) { return conv(x[0], x[1], x[2], 2, 1, 3); });
  add_case("maxpool2d", {{1, 2, 5, 5}}, [](auto& x) { return maxpool(x[0], 3, 2, 1, 2); });
  cases.back().distinct = true;
  add_case("maxpool3d", {{1, 2, 4, 4, 4}}, [](auto& x) { return maxpool(x[0], 3, 2, 1, 3); });
  cases.back().distinct = true;
  add_case("avgpool2d", {{2, 2, 4, 4}}, [](auto& x) { return avgpool(x[0], 2, 2, 2); });
  add_case("avgpool3d", {{1, 2, 4, 4, 2}}, [](auto& x) { return avgpool(x[0], 2, 2, 3); });
  add_case("global_avgpool", {{2, 3, 2, 2}}, [](auto& x) { return global_avgpool(x[0]); });
  add_case("batchnorm_train", {{3, 2, 2, 2}, {2}, {2}}, [](auto& x) {
    auto stats = BatchNormStats<double>::create(2);
    return batchnorm(x[0], x[1], x[2], stats, Mode::train);
  });
  add_case("batchnorm_eval", {{3, 2, 2}, {2}, {2}}, [](auto& x) {
    BatchNormStats<double> stats{Tensor<double>::from({2}, {0.2, -0.1}),
                                 Tensor<double>::from({2}, {0.5, 2.0})};
    return batchnorm(x[0], x[1], x[2], stats, Mode::eval);
  });
  add_case("layernorm", {{3, 4}, {4}, {4}}, [](auto& x) { return layernorm(x[0], x[1], x[2]); });
  add_case("mhsa", {{1, 3, 4}, {4, 4}, {4}, {4, 4}, {4}, {4, 4}, {4}, {4, 4}, {4}}, [](auto& x) {
    AttentionParams<double> p{x[1], x[2], x[3], x[4], x[5], x[6], x[7], x[8]};
    return mhsa(x[0], 2, p);
  });
  add_case("dropout", {{5}}, [](auto& x) {
    Rng rng(42);
    return dropout(x[0], 0.4, Mode::train, rng);
  });
  add_case("cross_entropy", {{3, 2}}, [](auto& x) {
    static const int targets[] = {1, 0, 1};
    LossOptions opts;
    opts.class_weights = {0.7, 1.6};
    opts.label_smoothing = 0.1;
    return cross_entropy(x[0], std::span<const int>(targets), opts);
  });
  add_case("bce", {{4}}, [](auto& x) {
    static const int targets[] = {1, 0, 0, 1};
    return bce(x[0], std::span<const int>(targets));
  }, 0.05, 0.95);
  return cases;
}

inline std::vector<GradResult> run_gradient_suite(int seeds) {
  std::vector<GradResult> results;
  for (const auto& gc : gradient_cases()) {
    GradResult r{gc.name, 0, 0.0};
    for (int s = 0; s < seeds; ++s) {
      r.worst_rel_error = std::max(r.worst_rel_error, check_case(gc, 1000 + 17 * s));
      ++r.cases;
    }
    results.push_back(r);
  }
  return results;
}

}  // namespace pasfuse::testing
