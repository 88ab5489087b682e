#include "pasfuse/models/profile.hpp"

#include <stdexcept>

namespace pasfuse {

ScaleProfile ScaleProfile::paper() {
  ScaleProfile p;
  p.name = "paper";
  p.mri_input = {128, 128, 64};
  p.us_input = {224, 224};
  p.stem_channels = 64;
  p.growth_rate = 32;
  p.dense_block_layers = {6, 12, 24, 16};
  p.dense_embed = 128;
  p.patch_size = 16;
  p.embed_dim = 768;
  p.heads = 12;
  p.encoder_blocks = 12;
  p.vit_mlp_hidden = 4 * 768;
  p.mri_head_hidden = 256;
  p.resnet_block_counts = {3, 4, 6, 3};
  p.fusion_hidden = 128;
  return p;
}

ScaleProfile ScaleProfile::micro() {
  ScaleProfile p;
  p.name = "micro";
  p.mri_input = {32, 32, 16};
  p.us_input = {56, 56};
  p.stem_channels = 8;
  p.growth_rate = 8;
  p.dense_block_layers = {2, 2, 2, 2};
  p.dense_embed = 16;
  p.patch_size = 8;
  p.embed_dim = 64;
  p.heads = 4;
  p.encoder_blocks = 2;
  p.vit_mlp_hidden = 4 * 64;
  p.mri_head_hidden = 32;
  p.resnet_block_counts = {1, 1, 1, 1};
  p.fusion_hidden = 32;
  return p;
}

ScaleProfile ScaleProfile::named(const std::string& name) {
  if (name == "paper") return paper();
  if (name == "micro") return micro();
  throw std::invalid_argument("unknown profile '" + name + "' (expected paper or micro)");
}

void ScaleProfile::validate() const {
  auto fail = [&](const std::string& what) {
    throw std::invalid_argument("profile " + name + ": " + what);
  };
  for (Index e : mri_input)
    if (e <= 0) fail("mri_input extents must be positive");
  for (Index e : us_input)
    if (e <= 0) fail("us_input extents must be positive");
  if (stem_channels <= 0 || growth_rate <= 0 || dense_embed <= 0) fail("DenseNet widths must be positive");
  if (dense_block_layers.empty()) fail("dense_block_layers is empty");
  if (patch_size <= 0) fail("patch_size must be positive");
  for (Index e : mri_input)
    if (e % patch_size != 0) fail("mri extents must be divisible by patch_size");
  if (embed_dim <= 0 || heads <= 0 || embed_dim % heads != 0) fail("embed_dim must be a positive multiple of heads");
  if (encoder_blocks < 0 || vit_mlp_hidden <= 0) fail("bad encoder settings");
  if (mri_head_hidden <= 0 || fusion_hidden <= 0) fail("head widths must be positive");
  if (resnet_block_counts.empty()) fail("resnet_block_counts is empty");
  for (int n : resnet_block_counts)
    if (n < 1) fail("every ResNet stage needs at least one block");
  // Transition layers halve channels, so their inputs must be even.
  Index c = stem_channels;
  for (std::size_t b = 0; b < dense_block_layers.size(); ++b) {
    c += dense_block_layers[b] * growth_rate;
    if (b + 1 < dense_block_layers.size()) {
      if (c % 2 != 0) fail("odd channel count entering a transition layer");
      c /= 2;
    }
  }
}

Index ScaleProfile::dense_channels() const {
  Index c = stem_channels;
  for (std::size_t b = 0; b < dense_block_layers.size(); ++b) {
    c += dense_block_layers[b] * growth_rate;
    if (b + 1 < dense_block_layers.size()) c /= 2;
  }
  return c;
}

Index ScaleProfile::vit_tokens() const {
  return (mri_input[0] / patch_size) * (mri_input[1] / patch_size) * (mri_input[2] / patch_size);
}

Index ScaleProfile::resnet_width(int stage) const { return stem_channels << stage; }

Index ScaleProfile::us_features() const {
  return resnet_width(static_cast<int>(resnet_block_counts.size()) - 1) * resnet_expansion;
}

void to_json(nlohmann::json& j, const ScaleProfile& p) {
  j = nlohmann::json{{"name", p.name},
                     {"mri_input", p.mri_input},
                     {"us_input", p.us_input},
                     {"us_channels", p.us_channels},
                     {"stem_channels", p.stem_channels},
                     {"growth_rate", p.growth_rate},
                     {"dense_block_layers", p.dense_block_layers},
                     {"bottleneck_factor", p.bottleneck_factor},
                     {"dense_embed", p.dense_embed},
                     {"patch_size", p.patch_size},
                     {"embed_dim", p.embed_dim},
                     {"heads", p.heads},
                     {"encoder_blocks", p.encoder_blocks},
                     {"vit_mlp_hidden", p.vit_mlp_hidden},
                     {"mri_head_hidden", p.mri_head_hidden},
                     {"resnet_block_counts", p.resnet_block_counts},
                     {"resnet_expansion", p.resnet_expansion},
                     {"fusion_hidden", p.fusion_hidden}};
}

void from_json(const nlohmann::json& j, ScaleProfile& p) {
  p = ScaleProfile::named(j.value("name", std::string("micro")));
  auto take = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  take("mri_input", p.mri_input);
  take("us_input", p.us_input);
  take("us_channels", p.us_channels);
  take("stem_channels", p.stem_channels);
  take("growth_rate", p.growth_rate);
  take("dense_block_layers", p.dense_block_layers);
  take("bottleneck_factor", p.bottleneck_factor);
  take("dense_embed", p.dense_embed);
  take("patch_size", p.patch_size);
  take("embed_dim", p.embed_dim);
  take("heads", p.heads);
  take("encoder_blocks", p.encoder_blocks);
  take("vit_mlp_hidden", p.vit_mlp_hidden);
  take("mri_head_hidden", p.mri_head_hidden);
  take("resnet_block_counts", p.resnet_block_counts);
  take("resnet_expansion", p.resnet_expansion);
  take("fusion_hidden", p.fusion_hidden);
  p.validate();
}

}  // namespace pasfuse
