#pragma once

#include "pasfuse/datapipe/manifest.hpp"
#include "pasfuse/models/profile.hpp"

#include <filesystem>

namespace pasfuse {

enum class SynthMode { redundant, complementary };
enum class SynthModalities { both, mri, us };

struct SynthSpec {
  Index n_pairs = 160;
  double positive_fraction = 0.375;
  ScaleProfile profile = ScaleProfile::micro();
  SynthMode mode = SynthMode::complementary;
  SynthModalities modalities = SynthModalities::both;
  double signal_strength = 0.5;
  double noise_sigma = 0.1;
  std::uint64_t seed = 0;
  std::string id_prefix = "S";

  void validate() const;
};

void to_json(nlohmann::json& j, const SynthSpec& s);
void from_json(const nlohmann::json& j, SynthSpec& s);

/// Fixed signal geometry (voxels / pixels).
struct SynthGeometry {
  static constexpr int bands = 2;
  static constexpr double band_half_thickness_min = 1.0;  // thickness 2-4 voxels
  static constexpr double band_half_thickness_max = 2.0;
  static constexpr double band_half_length_frac_min = 0.25;  // of H
  static constexpr double band_half_length_frac_max = 0.35;
  static constexpr double band_half_depth_frac = 0.2;  // of D, at least 1.5 voxels
  static constexpr int blobs = 2;
  static constexpr double blob_radius_min = 5.0;
  static constexpr double blob_radius_max = 9.0;
  static constexpr double background_level = 0.5;
  static constexpr double background_amplitude_max = 0.08;
};

struct SynthPair {
  Index index = 0;
  std::string patient_id;
  int label = 0;
  bool mri_signal = false;
  bool us_signal = false;
  Volume volume;  // profile mri_input extents
  Image image;    // one channel, profile us_input extents
  /// Candidate signal regions (drawn for every pair, planted only when the
  /// flag is set) and a surrounding shell used by the threshold oracle.
  Volume band_mask, band_shell;
  Image blob_mask, blob_shell;
};

/// Number of positive pairs: positive_fraction * n rounded to nearest.
Index positive_count(const SynthSpec& spec);
/// Label of pair `index` (a seeded permutation decides which are positive).
int synth_label(const SynthSpec& spec, Index index);

SynthPair generate_pair(const SynthSpec& spec, Index index);

/// Threshold-on-mean oracle: shell mean minus mask mean for volumes (dark
/// bands), mask mean minus shell mean for images (bright blobs).
double mri_contrast(const SynthPair& p);
double us_contrast(const SynthPair& p);
bool oracle_positive(double contrast, const SynthSpec& spec);

struct OracleReport {
  double mri_bearing_accuracy = 0;  // signal-bearing positives + negatives
  double us_bearing_accuracy = 0;
  double mri_nonbearing_balanced = 0;  // non-bearing positives vs negatives
  double us_nonbearing_balanced = 0;
  Index samples = 0;
};
OracleReport evaluate_oracle(const SynthSpec& spec);

/// Writes mri/<id>.rvol and/or us/<id>.rimg, manifest.json (with pairing
/// when both modalities are emitted), signals.json and synth_spec.json.
SampleManifest generate_dataset(const SynthSpec& spec, const std::filesystem::path& out_dir);

}  // namespace pasfuse
