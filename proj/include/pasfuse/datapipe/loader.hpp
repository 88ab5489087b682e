#pragma once

#include "pasfuse/datapipe/manifest.hpp"
#include "pasfuse/datapipe/preprocess.hpp"

#include <map>
#include <mutex>

namespace pasfuse {

/// Loads and preprocesses each file once, keyed by uri.
class SampleStore {
 public:
  SampleStore(const SampleManifest& manifest, std::array<Index, 3> mri_extents,
              std::array<Index, 2> us_extents)
      : manifest_(&manifest), mri_extents_(mri_extents), us_extents_(us_extents) {}

  const Volume& volume(const std::string& uri);
  const Image& image(const std::string& uri);

 private:
  const SampleManifest* manifest_;
  std::array<Index, 3> mri_extents_;
  std::array<Index, 2> us_extents_;
  std::map<std::string, Volume> volumes_;
  std::map<std::string, Image> images_;
  std::mutex mutex_;
};

/// [B, 1, H, W, D].
Tensor<float> stack_volumes(const std::vector<Volume>& volumes);
/// [B, C, H, W].
Tensor<float> stack_images(const std::vector<Image>& images);

}  // namespace pasfuse
