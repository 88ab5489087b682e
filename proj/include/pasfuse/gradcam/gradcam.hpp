#pragma once

#include "pasfuse/datapipe/image.hpp"
#include "pasfuse/models/networks.hpp"

#include <json.hpp>

#include <array>
#include <filesystem>

namespace pasfuse {

struct Heatmap {
  /// Normalized to [0,1] at input resolution: [H, W, D] or [H, W].
  FTensor values;
  /// ReLU(sum_c w_c A_c) at the layer's own resolution, before upsampling.
  FTensor raw;
  std::string layer;
  int class_index = 1;
  std::string sample_id;
};

/// Gradient-weighted class activation map for a single-sample batch. The
/// class score is logits[class] for two-logit models; for the single-logit
/// fusion model it is the logit (class 1) or its negation (class 0). An
/// empty layer selects the model's default. Values are divided by their
/// maximum; an all-zero map is left as zeros.
Heatmap gradcam(Model& model, const ModelInput& input, int class_index, const std::string& layer = "",
                const std::string& sample_id = "");

/// Align-corners-false resampling of [H, W, D] (trilinear) or [H, W]
/// (bilinear) maps, with edge clamping.
FTensor upsample(const FTensor& map, const std::vector<Index>& out);

using Rgb = std::array<float, 3>;

/// Piecewise-linear jet ramp through (0: 0,0,.5) (.125: 0,0,1) (.375: 0,1,1)
/// (.625: 1,1,0) (.875: 1,0,0) (1: .5,0,0); input clamped to [0,1].
Rgb jet(float t);

inline constexpr float kOverlayAlpha = 0.4f;

/// out = (1 - alpha) * src + alpha * jet(h), per channel, in [0,1].
Rgb blend(const Rgb& src, float heat);

/// Round-half-up to [0,255].
std::uint8_t to_byte(float v);

void write_pgm(const std::filesystem::path& path, Index height, Index width, const std::vector<std::uint8_t>& gray);
void write_ppm(const std::filesystem::path& path, Index height, Index width, const std::vector<std::uint8_t>& rgb);

/// Source values scaled to [0,1] by their min and max (constant -> 0).
Buffer<float> display_range(const Buffer<float>& v);

struct OverlayOptions {
  /// Depth fractions of the representative MRI slices.
  std::vector<double> depth_fractions{0.25, 0.5, 0.75};
};

/// Writes grayscale source (PGM) and jet overlay (PPM) images under `dir`
/// with file names starting with `stem`. Volumes emit one pair per
/// representative depth; images also get a side-by-side source|overlay
/// PPM. Returns the JSON index entry listing the files.
nlohmann::json render_overlay(const Heatmap& heatmap, const Volume& source, const std::filesystem::path& dir,
                              const std::string& stem, const OverlayOptions& options = {});
nlohmann::json render_overlay(const Heatmap& heatmap, const Image& source, const std::filesystem::path& dir,
                              const std::string& stem);

}  // namespace pasfuse
