#pragma once

#include "pasfuse/datapipe/image.hpp"
#include "pasfuse/ndcore/rng.hpp"

#include <json.hpp>

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace pasfuse {

enum class Modality { mri, us };
enum class Split { train, val, test, unassigned };

std::string to_string(Modality m);
std::string to_string(Split s);
Modality modality_from_string(const std::string& s);
Split split_from_string(const std::string& s);

struct Sample {
  std::string patient_id;
  Modality modality = Modality::mri;
  int label = 0;  // 0 normal, 1 positive
  std::string uri;
  Split split = Split::unassigned;
  bool force_augment = false;  // set on oversampled duplicates; not serialized
};

struct Pair {
  std::string patient_id;
  std::string mri;  // sample uris
  std::string us;
  int label = 0;
};

struct SampleManifest {
  int version = 1;
  std::vector<Sample> samples;
  std::vector<Pair> pairing;
  /// Relative uris resolve against this directory (the manifest's own).
  std::filesystem::path base_dir;

  /// Labels in {0, 1}, non-empty patient ids, pairs referencing existing
  /// samples with the same patient and label, and no patient in two splits.
  /// Throws DataError(kind invalid).
  void validate() const;

  std::filesystem::path resolve(const std::string& uri) const;
  std::vector<Sample> select(Split split) const;
  /// Split of a pair, taken from its MRI sample.
  Split split_of(const Pair& pair) const;
  std::vector<Pair> pairs(Split split) const;

  static SampleManifest load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

void to_json(nlohmann::json& j, const SampleManifest& m);
void from_json(const nlohmann::json& j, SampleManifest& m);

using SplitRatios = std::array<double, 3>;  // train, val, test

/// Largest-remainder apportionment of n items; ties go to the earlier slot.
std::array<Index, 3> apportion(Index n, const SplitRatios& ratios);

/// Patient-level stratified split: per class, patients are shuffled by seed
/// and apportioned by ratio. All samples of a patient share a split.
SampleManifest stratified_split(const SampleManifest& manifest, const SplitRatios& ratios,
                                std::uint64_t seed);

/// Duplicates minority-class entries (drawn with replacement, flagged
/// force_augment) until both classes match the majority count.
std::vector<Sample> oversample_minority(const std::vector<Sample>& train, std::uint64_t seed);

/// w_c = N / (K * n_c).
std::vector<double> class_weights(const std::vector<Index>& counts);
std::vector<Index> class_counts(const std::vector<Sample>& samples);

/// Per-sample augmentation stream: depends only on (seed, patient, epoch,
/// ordinal), never on iteration order.
Rng sample_rng(std::uint64_t seed, const std::string& patient_id, int epoch, std::uint64_t ordinal = 0);

}  // namespace pasfuse
