#include "pasfuse/models/networks.hpp"

#include <stdexcept>

namespace pasfuse {

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::mri:
      return "mri";
    case ModelKind::us:
      return "us";
    case ModelKind::fusion:
      return "fusion";
  }
  return "?";
}

ModelKind model_kind_from_string(const std::string& s) {
  if (s == "mri") return ModelKind::mri;
  if (s == "us") return ModelKind::us;
  if (s == "fusion") return ModelKind::fusion;
  throw std::invalid_argument("unknown model '" + s + "' (expected mri, us or fusion)");
}

namespace {

void expect_input(const FTensor& x, const Shape& tail, const char* what) {
  if (!x.defined()) throw ShapeError(std::string(what) + " input missing");
  Shape got = x.shape();
  if (got.size() != tail.size() + 1 || !std::equal(tail.begin(), tail.end(), got.begin() + 1)) {
    throw ShapeError(std::string(what) + " expects [B, " + to_string(tail).substr(1) + " got " +
                     to_string(got));
  }
}

FTensor maybe_dropout(const FTensor& x, double p, ForwardContext& ctx) {
  if (ctx.mode != Mode::train || p <= 0) return x;
  return dropout(x, p, Mode::train, ctx.dropout_rng());
}

}  // namespace

// DenseNet ---------------------------------------------------------------------

DenseLayer::DenseLayer(ParameterSet& ps, const std::string& name, Index in, Index growth,
                       Index bottleneck)
    : bn1_(BatchNorm::create(ps, name + ".bn1", in)),
      bn2_(BatchNorm::create(ps, name + ".bn2", bottleneck * growth)),
      conv1_(Conv::create(ps, name + ".conv1", in, bottleneck * growth, 1, 1, 0, 3, false)),
      conv2_(Conv::create(ps, name + ".conv2", bottleneck * growth, growth, 3, 1, 1, 3, false)) {}

FTensor DenseLayer::forward(const FTensor& x, ForwardContext& ctx) {
  FTensor h = conv1_(relu(bn1_(x, ctx.mode)), ctx);
  return conv2_(relu(bn2_(h, ctx.mode)), ctx);
}

DenseBlock::DenseBlock(ParameterSet& ps, const std::string& name, Index in, int layers,
                       Index growth, Index bottleneck)
    : out_channels_(in + layers * growth) {
  for (int l = 0; l < layers; ++l) {
    layers_.emplace_back(ps, name + ".layer" + std::to_string(l + 1), in + l * growth, growth,
                         bottleneck);
  }
}

FTensor DenseBlock::forward(const FTensor& x, ForwardContext& ctx) {
  std::vector<FTensor> features{x};
  for (auto& layer : layers_) {
    const FTensor input = features.size() == 1 ? features[0] : concat(features, 1);
    features.push_back(layer.forward(input, ctx));
  }
  return features.size() == 1 ? features[0] : concat(features, 1);
}

Transition::Transition(ParameterSet& ps, const std::string& name, Index in)
    : bn_(BatchNorm::create(ps, name + ".bn", in)),
      conv_(in % 2 == 0 ? Conv::create(ps, name + ".conv", in, in / 2, 1, 1, 0, 3, false)
                        : throw ShapeError("transition needs an even channel count, got " +
                                           std::to_string(in))) {}

FTensor Transition::forward(const FTensor& x, ForwardContext& ctx) {
  FTensor h = conv_(relu(bn_(x, ctx.mode)), ctx);
  std::array<int, 3> k{};
  for (int a = 0; a < 3; ++a) k[a] = h.dim(2 + a) == 1 ? 1 : 2;
  return avgpool(h, k, k, 3);
}

DenseNet3D::DenseNet3D(ParameterSet& ps, const std::string& prefix, const ScaleProfile& p)
    : stem_conv_(Conv::create(ps, prefix + ".stem.conv", 1, p.stem_channels, 7, 2, 3, 3, false)),
      stem_bn_(BatchNorm::create(ps, prefix + ".stem.bn", p.stem_channels)),
      final_bn_(),
      fc_() {
  Index c = p.stem_channels;
  const auto n = p.dense_block_layers.size();
  for (std::size_t b = 0; b < n; ++b) {
    const std::string id = std::to_string(b + 1);
    blocks_.emplace_back(ps, prefix + ".block" + id, c, p.dense_block_layers[b], p.growth_rate,
                         p.bottleneck_factor);
    c = blocks_.back().out_channels();
    if (b + 1 < n) {
      transitions_.emplace_back(ps, prefix + ".transition" + id, c);
      c /= 2;
    }
  }
  final_bn_ = BatchNorm::create(ps, prefix + ".final_bn", c);
  fc_ = Linear::create(ps, prefix + ".fc", c, p.dense_embed);
}

FTensor DenseNet3D::forward(const FTensor& volume, ForwardContext& ctx) {
  FTensor x = relu(stem_bn_(stem_conv_(volume, ctx), ctx.mode));
  x = maxpool(x, 3, 2, 1, 3);
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    x = blocks_[b].forward(x, ctx);
    if (b < transitions_.size()) x = transitions_[b].forward(x, ctx);
  }
  x = relu(final_bn_(x, ctx.mode));
  ctx.tap("dense.final", x);
  return relu(fc_(global_avgpool(x)));
}

std::string DenseNet3D::last_conv() const {
  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) {
    if (!it->layers().empty()) return it->layers().back().last_conv();
  }
  return stem_conv_.name;
}

// ViT -------------------------------------------------------------------------------

EncoderBlock::EncoderBlock(ParameterSet& ps, const std::string& name, Index dim, int heads,
                           Index hidden)
    : ln1_(LayerNorm::create(ps, name + ".ln1", dim)),
      ln2_(LayerNorm::create(ps, name + ".ln2", dim)),
      attn_(Attention::create(ps, name + ".attn", dim, heads)),
      fc1_(Linear::create(ps, name + ".mlp.fc1", dim, hidden)),
      fc2_(Linear::create(ps, name + ".mlp.fc2", hidden, dim)) {}

FTensor EncoderBlock::forward(const FTensor& tokens) const {
  FTensor x = add(tokens, attn_(ln1_(tokens)));
  return add(x, fc2_(gelu(fc1_(ln2_(x)))));
}

ViT3D::ViT3D(ParameterSet& ps, const std::string& prefix, const ScaleProfile& p)
    : patch_embed_(Conv::create(ps, prefix + ".patch_embed", 1, p.embed_dim,
                                static_cast<int>(p.patch_size), static_cast<int>(p.patch_size),
                                0, 3, true)),
      pos_embed_(ps.create(prefix + ".pos_embed", {p.vit_tokens(), p.embed_dim},
                           InitKind::normal_002)),
      final_ln_(),
      patch_(p.patch_size) {
  for (int b = 0; b < p.encoder_blocks; ++b) {
    blocks_.emplace_back(ps, prefix + ".block" + std::to_string(b + 1), p.embed_dim, p.heads,
                         p.vit_mlp_hidden);
  }
  final_ln_ = LayerNorm::create(ps, prefix + ".final_ln", p.embed_dim);
}

FTensor ViT3D::embed(const FTensor& volume, ForwardContext& ctx) const {
  for (int a = 2; a < 5; ++a) {
    if (volume.dim(a) % patch_ != 0) {
      throw ShapeError("volume extent " + std::to_string(volume.dim(a)) +
                       " is not divisible by patch size " + std::to_string(patch_));
    }
  }
  FTensor p = patch_embed_(volume, ctx);  // [B, d, h, w, z]
  const Index b = p.dim(0), d = p.dim(1);
  return permute(reshape(p, {b, d, p.size() / (b * d)}), {0, 2, 1});
}

FTensor ViT3D::encode(const FTensor& tokens) const {
  FTensor x = tokens;
  for (const auto& block : blocks_) x = block.forward(x);
  return mean_axis(final_ln_(x), 1);
}

FTensor ViT3D::forward(const FTensor& volume, ForwardContext& ctx) {
  FTensor tokens = embed(volume, ctx);
  if (tokens.dim(1) != pos_embed_.dim(0)) {
    throw ShapeError("token count " + std::to_string(tokens.dim(1)) + " does not match " +
                     std::to_string(pos_embed_.dim(0)) + " positional embeddings");
  }
  return encode(add_trailing(tokens, pos_embed_));
}

// ResNet ------------------------------------------------------------------------------

Bottleneck::Bottleneck(ParameterSet& ps, const std::string& name, Index in, Index width,
                       Index expansion, int stride, bool project)
    : conv1_(Conv::create(ps, name + ".conv1", in, width, 1, 1, 0, 2, false)),
      conv2_(Conv::create(ps, name + ".conv2", width, width, 3, stride, 1, 2, false)),
      conv3_(Conv::create(ps, name + ".conv3", width, width * expansion, 1, 1, 0, 2, false)),
      bn1_(BatchNorm::create(ps, name + ".bn1", width)),
      bn2_(BatchNorm::create(ps, name + ".bn2", width)),
      bn3_(BatchNorm::create(ps, name + ".bn3", width * expansion)) {
  if (project) {
    proj_conv_ = Conv::create(ps, name + ".proj.conv", in, width * expansion, 1, stride, 0, 2, false);
    proj_bn_ = BatchNorm::create(ps, name + ".proj.bn", width * expansion);
  } else if (in != width * expansion || stride != 1) {
    throw ShapeError("identity block needs matching channels and unit stride");
  }
}

FTensor Bottleneck::forward(const FTensor& x, ForwardContext& ctx) {
  FTensor h = relu(bn1_(conv1_(x, ctx), ctx.mode));
  h = relu(bn2_(conv2_(h, ctx), ctx.mode));
  h = bn3_(conv3_(h, ctx), ctx.mode);
  const FTensor shortcut = proj_conv_ ? (*proj_bn_)((*proj_conv_)(x, ctx), ctx.mode) : x;
  return relu(add(h, shortcut));
}

ResNet2D::ResNet2D(ParameterSet& ps, const std::string& prefix, const ScaleProfile& p)
    : stem_conv_(Conv::create(ps, prefix + ".stem.conv", p.us_channels, p.stem_channels, 7, 2, 3,
                              2, false)),
      stem_bn_(BatchNorm::create(ps, prefix + ".stem.bn", p.stem_channels)) {
  Index c = p.stem_channels;
  for (std::size_t s = 0; s < p.resnet_block_counts.size(); ++s) {
    const Index width = p.resnet_width(static_cast<int>(s));
    for (int b = 0; b < p.resnet_block_counts[s]; ++b) {
      const std::string name =
          prefix + ".stage" + std::to_string(s + 1) + ".block" + std::to_string(b + 1);
      const bool first = b == 0;
      const int stride = first && s > 0 ? 2 : 1;
      blocks_.emplace_back(ps, name, c, width, p.resnet_expansion, stride, first);
      c = width * p.resnet_expansion;
    }
  }
}

FTensor ResNet2D::forward(const FTensor& image, ForwardContext& ctx) {
  FTensor x = relu(stem_bn_(stem_conv_(image, ctx), ctx.mode));
  x = maxpool(x, 3, 2, 1, 2);
  for (auto& block : blocks_) x = block.forward(x, ctx);
  ctx.tap("resnet.final", x);
  return global_avgpool(x);
}

// Models -------------------------------------------------------------------------------

MriModel::MriModel(const ScaleProfile& profile, const ModelOptions& options)
    : Model(profile),
      dense_((profile.validate(), params_), "mri.dense", profile),
      vit_(params_, "mri.vit", profile),
      fc1_(Linear::create(params_, "mri.head.fc1", profile.mri_features(), profile.mri_head_hidden)),
      fc2_(Linear::create(params_, "mri.head.fc2", profile.mri_head_hidden, 2)),
      dropout_(options.mri_dropout) {}

ModelOutput MriModel::forward(const ModelInput& input, ForwardContext& ctx) {
  const auto& e = profile_.mri_input;
  expect_input(input.volume, {1, e[0], e[1], e[2]}, "MRI model");
  ModelOutput out;
  out.features = concat<float>({dense_.forward(input.volume, ctx), vit_.forward(input.volume, ctx)}, 1);
  FTensor h = maybe_dropout(relu(fc1_(out.features)), dropout_, ctx);
  out.logits = fc2_(h);
  out.probability = softmax(out.logits);
  return out;
}

UsModel::UsModel(const ScaleProfile& profile)
    : Model(profile),
      resnet_((profile.validate(), params_), "us.resnet", profile),
      fc_(Linear::create(params_, "us.head.fc", profile.us_features(), 2)) {}

ModelOutput UsModel::forward(const ModelInput& input, ForwardContext& ctx) {
  const auto& e = profile_.us_input;
  expect_input(input.image, {profile_.us_channels, e[0], e[1]}, "US model");
  ModelOutput out;
  out.features = resnet_.forward(input.image, ctx);
  out.logits = fc_(out.features);
  out.probability = softmax(out.logits);
  return out;
}

FusionModel::FusionModel(const ScaleProfile& profile, const ModelOptions& options)
    : Model(profile),
      dense_((profile.validate(), params_), "mri.dense", profile),
      vit_(params_, "mri.vit", profile),
      resnet_(params_, "us.resnet", profile),
      fc1_(Linear::create(params_, "fusion.fc1", profile.fused_features(), profile.fusion_hidden)),
      fc2_(Linear::create(params_, "fusion.fc2", profile.fusion_hidden, 1)),
      dropout_(options.fusion_dropout) {}

FTensor FusionModel::fused_features(const ModelInput& input, ForwardContext& ctx) {
  const auto& m = profile_.mri_input;
  const auto& u = profile_.us_input;
  expect_input(input.volume, {1, m[0], m[1], m[2]}, "fusion model (volume)");
  expect_input(input.image, {profile_.us_channels, u[0], u[1]}, "fusion model (image)");
  if (input.volume.dim(0) != input.image.dim(0)) throw ShapeError("fusion batch sizes differ");
  return concat<float>({dense_.forward(input.volume, ctx), vit_.forward(input.volume, ctx),
                        resnet_.forward(input.image, ctx)},
                       1);
}

ModelOutput FusionModel::forward(const ModelInput& input, ForwardContext& ctx) {
  ModelOutput out;
  out.features = fused_features(input, ctx);
  FTensor h = maybe_dropout(relu(fc1_(out.features)), dropout_, ctx);
  out.logits = fc2_(h);
  out.probability = sigmoid(out.logits);
  return out;
}

std::unique_ptr<Model> make_model(ModelKind kind, const ScaleProfile& profile,
                                  const ModelOptions& options) {
  switch (kind) {
    case ModelKind::mri:
      return std::make_unique<MriModel>(profile, options);
    case ModelKind::us:
      return std::make_unique<UsModel>(profile);
    case ModelKind::fusion:
      return std::make_unique<FusionModel>(profile, options);
  }
  throw std::invalid_argument("bad model kind");
}

}  // namespace pasfuse
