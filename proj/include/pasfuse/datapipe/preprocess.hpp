#pragma once

#include "pasfuse/datapipe/image.hpp"
#include "pasfuse/ndcore/rng.hpp"

namespace pasfuse {

/// Catmull-Rom (a = -0.5) kernel weight.
double catmull_rom(double t);

/// Separable cubic resample of each axis to `out` extents, sampling input
/// coordinate (o + 0.5) / scale - 0.5 with edge clamping.
Volume resample_cubic(const Volume& v, const std::array<Index, 3>& out,
                      const std::array<double, 3>& scale);

/// Bilinear resize of every channel with half-pixel centres.
Image resize_bilinear(const Image& img, const std::array<Index, 2>& out);

/// (x - min) / (max - min); a constant input becomes all zeros.
void minmax_normalize(Buffer<float>& values);

/// Reorder to (H, W, D), uniform cubic rescale to fit `target`, min-max
/// normalize the content to [0, 1], centre zero-pad to exactly `target`.
Volume preprocess_mri(const Volume& raw, const std::array<Index, 3>& target = {128, 128, 64});

/// Round-half-up quantization of [0, 1] to 0..255.
inline float quantize_u8(float v) { return std::floor(v * 255.0f + 0.5f); }

/// Min-max to [0, 1], quantize to u8, replicate to three channels, bilinear
/// resize (re-quantized), divide by 255.
Image preprocess_us(const Image& raw, const std::array<Index, 2>& target = {224, 224});

// Augmentation ------------------------------------------------------------------

Volume flip(const Volume& v, int axis);
/// k quarter turns in the H-W plane (H must equal W for odd k).
Volume rot90(const Volume& v, int k);
/// Trilinear zoom about the centre by `factor`, keeping extents.
Volume zoom(const Volume& v, double factor);

struct MriAugment {
  bool flip_h = false;
  bool flip_w = false;
  int quarter_turns = 0;
  double zoom = 1.0;
};
MriAugment sample_mri_augment(Rng& rng);
Volume apply(const Volume& v, const MriAugment& a);
Volume augment_mri(const Volume& v, Rng& rng);

Image flip_horizontal(const Image& img);
/// Bilinear rotation about the centre by `degrees`, zero outside.
Image rotate(const Image& img, double degrees);

struct UsAugment {
  bool flip = false;
  double degrees = 0.0;
};
UsAugment sample_us_augment(Rng& rng);
Image apply(const Image& img, const UsAugment& a);
Image augment_us(const Image& img, Rng& rng);

inline constexpr double kMaxUsRotation = 10.0;
inline constexpr double kZoomLow = 1.1;
inline constexpr double kZoomHigh = 1.3;

}  // namespace pasfuse
