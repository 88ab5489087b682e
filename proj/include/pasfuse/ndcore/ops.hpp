#pragma once

#include "pasfuse/ndcore/rng.hpp"
#include "pasfuse/ndcore/tape.hpp"
#include "pasfuse/ndcore/tensor.hpp"

#include <array>
#include <optional>
#include <span>
#include <vector>

namespace pasfuse {

enum class Mode { train, eval };
enum class ActivationKind { relu, gelu, sigmoid, softmax };
enum class LossKind { cross_entropy, bce };

// Elementwise and shape ops ------------------------------------------------

template <typename S> Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b);
template <typename S> Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b);
template <typename S> Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b);
template <typename S> Tensor<S> scale(const Tensor<S>& a, S factor);
/// a + b where b's shape equals the trailing axes of a (broadcast over the rest).
template <typename S> Tensor<S> add_trailing(const Tensor<S>& a, const Tensor<S>& b);

template <typename S> Tensor<S> sum(const Tensor<S>& a);
template <typename S> Tensor<S> mean(const Tensor<S>& a);
/// Mean over one axis; the axis is removed from the result.
template <typename S> Tensor<S> mean_axis(const Tensor<S>& a, int axis);

template <typename S> Tensor<S> reshape(const Tensor<S>& a, Shape shape);
template <typename S> Tensor<S> permute(const Tensor<S>& a, const std::vector<int>& axes);
template <typename S> Tensor<S> concat(const std::vector<Tensor<S>>& parts, int axis);
template <typename S>
std::vector<Tensor<S>> split(const Tensor<S>& a, int axis, const std::vector<Index>& sizes);
/// Slice [begin, end) along one axis.
template <typename S> Tensor<S> slice(const Tensor<S>& a, int axis, Index begin, Index end);

/// Batched product of [B,M,K] and [B,K,N] (either side optionally transposed
/// in its last two axes).
template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b, bool transpose_a = false,
                 bool transpose_b = false);

// Activations ----------------------------------------------------------------

template <typename S> Tensor<S> relu(const Tensor<S>& a);
/// Exact erf form: x * Phi(x).
template <typename S> Tensor<S> gelu(const Tensor<S>& a);
template <typename S> Tensor<S> sigmoid(const Tensor<S>& a);
/// Softmax over the last axis, with max subtraction.
template <typename S> Tensor<S> softmax(const Tensor<S>& a);
template <typename S> Tensor<S> activation(ActivationKind kind, const Tensor<S>& a);

// Layers ----------------------------------------------------------------------

/// y = x W^T + b over the last axis; W is [out, in], bias may be undefined.
template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias);

/// Input [B, C, spatial...] with 2 or 3 spatial axes, weight [O, C, K...].
template <typename S>
Tensor<S> conv(const Tensor<S>& input, const Tensor<S>& weight, const Tensor<S>& bias,
               int stride, int padding, int dims);

/// Max pooling; padded positions never win. Gradient goes to the first
/// maximum in row-major window order.
template <typename S>
Tensor<S> maxpool(const Tensor<S>& input, int k, int stride, int padding, int dims);

/// Mean pooling with divisor k^dims.
template <typename S> Tensor<S> avgpool(const Tensor<S>& input, int k, int stride, int dims);
/// Per-axis kernel and stride (unused trailing entries ignored for 2D).
template <typename S>
Tensor<S> avgpool(const Tensor<S>& input, const std::array<int, 3>& k,
                  const std::array<int, 3>& stride, int dims);

/// [B, C, spatial...] -> [B, C].
template <typename S> Tensor<S> global_avgpool(const Tensor<S>& input);

template <typename S>
struct BatchNormStats {
  Tensor<S> running_mean;
  Tensor<S> running_var;

  static BatchNormStats create(Index channels) {
    return {Tensor<S>::zeros({channels}), Tensor<S>::ones({channels})};
  }
};

inline constexpr double kNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Per-channel normalization over axis 1 of [B, C, ...]. Train mode uses
/// batch statistics (biased variance) and updates running stats with the
/// unbiased variance; eval mode uses running stats.
template <typename S>
Tensor<S> batchnorm(const Tensor<S>& input, const Tensor<S>& scale, const Tensor<S>& shift,
                    BatchNormStats<S>& stats, Mode mode);

/// Normalization over the last axis.
template <typename S>
Tensor<S> layernorm(const Tensor<S>& input, const Tensor<S>& scale, const Tensor<S>& shift);

template <typename S>
struct AttentionParams {
  Tensor<S> wq, bq, wk, bk, wv, bv, wo, bo;  // weights [d, d], biases [d]
};

/// Multi-head self-attention over tokens [B, N, d]; scores scaled by
/// 1/sqrt(d / heads).
template <typename S>
Tensor<S> mhsa(const Tensor<S>& tokens, int heads, const AttentionParams<S>& params);

/// Inverted dropout.
template <typename S> Tensor<S> dropout(const Tensor<S>& input, double p, Mode mode, Rng& rng);

// Losses -------------------------------------------------------------------------

struct LossOptions {
  std::vector<double> class_weights;  // empty: unweighted
  double label_smoothing = 0.0;
};

inline constexpr double kBceClamp = 1e-7;

/// Mean cross entropy of logits [B, K] against integer targets.
template <typename S>
Tensor<S> cross_entropy(const Tensor<S>& logits, std::span<const int> targets,
                        const LossOptions& options = {});
/// Mean binary cross entropy of probabilities (any shape with B elements).
template <typename S>
Tensor<S> bce(const Tensor<S>& probabilities, std::span<const int> targets);

template <typename S>
Tensor<S> loss(LossKind kind, const Tensor<S>& prediction, std::span<const int> targets,
               const LossOptions& options = {});

}  // namespace pasfuse
