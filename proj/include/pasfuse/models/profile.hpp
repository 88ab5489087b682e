#pragma once

#include "pasfuse/ndcore/tensor.hpp"

#include <json.hpp>

#include <array>
#include <string>
#include <vector>

namespace pasfuse {

/// Every architectural hyperparameter of the three networks.
struct ScaleProfile {
  std::string name;
  std::array<Index, 3> mri_input{};  // H, W, D
  std::array<Index, 2> us_input{};   // H, W
  Index us_channels = 3;
  Index stem_channels = 0;
  Index growth_rate = 0;
  std::vector<int> dense_block_layers;
  Index bottleneck_factor = 4;  // dense layer 1x1x1 conv width = factor * k
  Index dense_embed = 0;        // f_dense length
  Index patch_size = 0;
  Index embed_dim = 0;
  int heads = 0;
  int encoder_blocks = 0;
  Index vit_mlp_hidden = 0;
  Index mri_head_hidden = 0;
  std::vector<int> resnet_block_counts;
  Index resnet_expansion = 4;
  Index fusion_hidden = 0;

  static ScaleProfile paper();
  static ScaleProfile micro();
  /// "paper" or "micro"; anything else throws std::invalid_argument.
  static ScaleProfile named(const std::string& name);

  void validate() const;

  // Derived sizes.
  Index dense_channels() const;  // channels entering the final BN of the DenseNet branch
  Index vit_tokens() const;
  Index mri_features() const { return dense_embed + embed_dim; }
  Index resnet_width(int stage) const;  // bottleneck width; output is width * expansion
  Index us_features() const;
  Index fused_features() const { return mri_features() + us_features(); }
};

void to_json(nlohmann::json& j, const ScaleProfile& p);
/// Starts from the named base profile ("name" key, default micro) and
/// overrides any other keys present.
void from_json(const nlohmann::json& j, ScaleProfile& p);

}  // namespace pasfuse
