#pragma once

#include "pasfuse/models/layers.hpp"
#include "pasfuse/models/profile.hpp"

#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace pasfuse {

enum class ModelKind { mri, us, fusion };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& s);

/// volume [B, 1, H, W, D] and/or image [B, C, H, W].
struct ModelInput {
  FTensor volume;
  FTensor image;
};

/// Unimodal: logits [B, 2], probability = softmax [B, 2].
/// Fusion: logits [B, 1], probability = sigmoid [B, 1].
struct ModelOutput {
  FTensor features;
  FTensor logits;
  FTensor probability;
};

/// BN -> ReLU -> 1x1x1 conv (4k) -> BN -> ReLU -> 3x3x3 conv (k).
class DenseLayer {
 public:
  DenseLayer(ParameterSet& ps, const std::string& name, Index in, Index growth, Index bottleneck);
  FTensor forward(const FTensor& x, ForwardContext& ctx);
  const std::string& last_conv() const { return conv2_.name; }

 private:
  BatchNorm bn1_, bn2_;
  Conv conv1_, conv2_;
};

class DenseBlock {
 public:
  DenseBlock(ParameterSet& ps, const std::string& name, Index in, int layers, Index growth,
             Index bottleneck);
  /// Output channels: in + layers * growth.
  FTensor forward(const FTensor& x, ForwardContext& ctx);
  Index out_channels() const { return out_channels_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

 private:
  std::vector<DenseLayer> layers_;
  Index out_channels_;
};

/// BN -> ReLU -> 1x1x1 conv halving channels -> 2x2x2 mean pool, stride 2.
/// Axes already reduced to extent 1 are pooled with a unit window.
class Transition {
 public:
  Transition(ParameterSet& ps, const std::string& name, Index in);
  FTensor forward(const FTensor& x, ForwardContext& ctx);

 private:
  BatchNorm bn_;
  Conv conv_;
};

class DenseNet3D {
 public:
  DenseNet3D(ParameterSet& ps, const std::string& prefix, const ScaleProfile& profile);
  /// volume -> f_dense [B, dense_embed].
  FTensor forward(const FTensor& volume, ForwardContext& ctx);
  /// Pre-pooling feature map (after the final BN/ReLU) of the last call.
  std::string last_conv() const;

 private:
  Conv stem_conv_;
  BatchNorm stem_bn_;
  std::vector<DenseBlock> blocks_;
  std::vector<Transition> transitions_;
  BatchNorm final_bn_;
  Linear fc_;
};

class EncoderBlock {
 public:
  EncoderBlock(ParameterSet& ps, const std::string& name, Index dim, int heads, Index hidden);
  /// Pre-norm: x + MHSA(LN(x)), then x + MLP(LN(x)).
  FTensor forward(const FTensor& tokens) const;

 private:
  LayerNorm ln1_, ln2_;
  Attention attn_;
  Linear fc1_, fc2_;
};

class ViT3D {
 public:
  ViT3D(ParameterSet& ps, const std::string& prefix, const ScaleProfile& profile);
  /// volume -> f_vit [B, embed_dim].
  FTensor forward(const FTensor& volume, ForwardContext& ctx);
  /// Patch tokens [B, N, d] before positional embeddings.
  FTensor embed(const FTensor& volume, ForwardContext& ctx) const;
  /// Encoder stack, final LN and token mean over [B, N, d] inputs.
  FTensor encode(const FTensor& tokens) const;
  const FTensor& positional() const { return pos_embed_; }

 private:
  Conv patch_embed_;
  FTensor pos_embed_;
  std::vector<EncoderBlock> blocks_;
  LayerNorm final_ln_;
  Index patch_;
};

class Bottleneck {
 public:
  /// Projection shortcut when `project` is set (first block of a stage).
  Bottleneck(ParameterSet& ps, const std::string& name, Index in, Index width, Index expansion,
             int stride, bool project);
  FTensor forward(const FTensor& x, ForwardContext& ctx);
  const std::string& last_conv() const { return conv3_.name; }

 private:
  Conv conv1_, conv2_, conv3_;
  BatchNorm bn1_, bn2_, bn3_;
  std::optional<Conv> proj_conv_;
  std::optional<BatchNorm> proj_bn_;
};

class ResNet2D {
 public:
  ResNet2D(ParameterSet& ps, const std::string& prefix, const ScaleProfile& profile);
  /// image -> pooled feature [B, us_features].
  FTensor forward(const FTensor& image, ForwardContext& ctx);
  std::string last_conv() const { return blocks_.back().last_conv(); }
  std::vector<Bottleneck>& blocks() { return blocks_; }

 private:
  Conv stem_conv_;
  BatchNorm stem_bn_;
  std::vector<Bottleneck> blocks_;
};

struct ModelOptions {
  double mri_dropout = 0.5;
  double fusion_dropout = 0.3;
};

class Model {
 public:
  explicit Model(ScaleProfile profile) : profile_(std::move(profile)) {}
  virtual ~Model() = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  virtual ModelKind kind() const = 0;
  virtual ModelOutput forward(const ModelInput& input, ForwardContext& ctx) = 0;
  /// Layers available for Grad-CAM, default first.
  virtual std::vector<std::string> cam_layers() const = 0;

  const ScaleProfile& profile() const { return profile_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }

 protected:
  ScaleProfile profile_;
  ParameterSet params_;
};

/// DenseNet3D and ViT3D in parallel; concat -> FC -> ReLU -> dropout -> FC.
class MriModel : public Model {
 public:
  MriModel(const ScaleProfile& profile, const ModelOptions& options = {});
  ModelKind kind() const override { return ModelKind::mri; }
  ModelOutput forward(const ModelInput& input, ForwardContext& ctx) override;
  std::vector<std::string> cam_layers() const override { return {dense_.last_conv()}; }

  DenseNet3D& dense() { return dense_; }
  ViT3D& vit() { return vit_; }

 private:
  DenseNet3D dense_;
  ViT3D vit_;
  Linear fc1_, fc2_;
  double dropout_;
};

class UsModel : public Model {
 public:
  explicit UsModel(const ScaleProfile& profile);
  ModelKind kind() const override { return ModelKind::us; }
  ModelOutput forward(const ModelInput& input, ForwardContext& ctx) override;
  std::vector<std::string> cam_layers() const override { return {resnet_.last_conv()}; }

  ResNet2D& resnet() { return resnet_; }

 private:
  ResNet2D resnet_;
  Linear fc_;
};

/// Both feature extractors (heads removed) -> concat -> FC -> ReLU ->
/// dropout -> FC -> sigmoid. Parameter names of the extractors match the
/// unimodal models, so their checkpoints load directly.
class FusionModel : public Model {
 public:
  FusionModel(const ScaleProfile& profile, const ModelOptions& options = {});
  ModelKind kind() const override { return ModelKind::fusion; }
  ModelOutput forward(const ModelInput& input, ForwardContext& ctx) override;
  std::vector<std::string> cam_layers() const override {
    return {dense_.last_conv(), resnet_.last_conv()};
  }

  /// Hidden layer input, for analysis and tests: [f_mri, f_us].
  FTensor fused_features(const ModelInput& input, ForwardContext& ctx);
  const Linear& fc1() const { return fc1_; }
  const Linear& fc2() const { return fc2_; }

 private:
  DenseNet3D dense_;
  ViT3D vit_;
  ResNet2D resnet_;
  Linear fc1_, fc2_;
  double dropout_;
};

std::unique_ptr<Model> make_model(ModelKind kind, const ScaleProfile& profile,
                                  const ModelOptions& options = {});

}  // namespace pasfuse
