#pragma once

#include "pasfuse/ndcore/ops.hpp"
#include "pasfuse/ndcore/serialize.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace pasfuse {

using FTensor = Tensor<float>;

enum class InitKind { kaiming_uniform, zeros, ones, normal_002 };

struct ParamEntry {
  std::string name;
  FTensor value;
  InitKind init;
  Index fan_in = 0;
};

/// Named trainable parameters plus non-trainable buffers (batch-norm running
/// statistics). Registration order is the model's build order.
class ParameterSet {
 public:
  FTensor create(const std::string& name, Shape shape, InitKind init, Index fan_in = 0);
  FTensor buffer(const std::string& name, Shape shape, float fill);

  const std::vector<ParamEntry>& entries() const { return params_; }
  std::vector<FTensor> tensors() const;
  const std::map<std::string, FTensor>& buffers() const { return buffers_; }
  bool contains(const std::string& name) const;
  /// Parameter or buffer by name; throws std::out_of_range.
  FTensor get(const std::string& name) const;

  /// Total trainable scalars.
  Index count() const;
  /// Trainable scalars whose name starts with prefix.
  Index count(const std::string& prefix) const;

  /// Per-parameter streams keyed by (seed, name), so results do not depend on
  /// registration order. Buffers are reset to their fill values.
  void initialize(std::uint64_t seed);

  /// Deep copy of parameters and buffers.
  TensorDict state() const;
  /// Copies every entry of the set from `state`; missing or mis-shaped
  /// entries throw FormatError.
  void load_state(const TensorDict& state);
  /// Copies entries present in `state` with matching name and shape; returns
  /// how many were copied.
  std::size_t load_matching(const TensorDict& state);

  void zero_grad();

 private:
  std::vector<ParamEntry> params_;
  std::map<std::string, FTensor> buffers_;
  std::map<std::string, float> buffer_fill_;
  std::map<std::string, std::size_t> index_;
};

/// Activation capture used by Grad-CAM: a layer tagged `capture_layer`
/// stores its output here during forward.
struct ForwardContext {
  Mode mode = Mode::eval;
  Rng* rng = nullptr;  // needed for train-mode dropout
  std::string capture_layer;
  FTensor captured;

  void tap(const std::string& name, const FTensor& t) {
    if (!capture_layer.empty() && name == capture_layer) captured = t;
  }
  Rng& dropout_rng();
};

struct Conv {
  std::string name;
  FTensor weight, bias;  // bias may be undefined
  int stride = 1, padding = 0, dims = 3;

  static Conv create(ParameterSet& ps, const std::string& name, Index in, Index out, int kernel,
                     int stride, int padding, int dims, bool with_bias);
  FTensor operator()(const FTensor& x, ForwardContext& ctx) const;
};

struct BatchNorm {
  FTensor scale, shift;
  BatchNormStats<float> stats;

  static BatchNorm create(ParameterSet& ps, const std::string& name, Index channels);
  FTensor operator()(const FTensor& x, Mode mode);
};

struct Linear {
  FTensor weight, bias;

  static Linear create(ParameterSet& ps, const std::string& name, Index in, Index out);
  FTensor operator()(const FTensor& x) const { return linear(x, weight, bias); }
};

struct LayerNorm {
  FTensor scale, shift;

  static LayerNorm create(ParameterSet& ps, const std::string& name, Index dim);
  FTensor operator()(const FTensor& x) const { return layernorm(x, scale, shift); }
};

struct Attention {
  AttentionParams<float> params;
  int heads = 1;

  static Attention create(ParameterSet& ps, const std::string& name, Index dim, int heads);
  FTensor operator()(const FTensor& tokens) const { return mhsa(tokens, heads, params); }
};

}  // namespace pasfuse
