#include "pasfuse/datapipe/loader.hpp"

#include "pasfuse/datapipe/formats.hpp"

namespace pasfuse {

const Volume& SampleStore::volume(const std::string& uri) {
  std::lock_guard lock(mutex_);
  auto it = volumes_.find(uri);
  if (it == volumes_.end()) {
    it = volumes_.emplace(uri, preprocess_mri(read_volume(manifest_->resolve(uri)), mri_extents_)).first;
  }
  return it->second;
}

const Image& SampleStore::image(const std::string& uri) {
  std::lock_guard lock(mutex_);
  auto it = images_.find(uri);
  if (it == images_.end()) {
    it = images_.emplace(uri, preprocess_us(read_rimg(manifest_->resolve(uri)), us_extents_)).first;
  }
  return it->second;
}

Tensor<float> stack_volumes(const std::vector<Volume>& volumes) {
  if (volumes.empty()) throw DataError(DataError::Kind::invalid, "empty batch");
  const auto e = volumes.front().extents;
  const Index n = volumes.front().size();
  Tensor<float> t({static_cast<Index>(volumes.size()), 1, e[0], e[1], e[2]});
  for (std::size_t b = 0; b < volumes.size(); ++b) {
    if (volumes[b].extents != e) throw DataError(DataError::Kind::invalid, "ragged volume batch");
    t.data().segment(static_cast<Index>(b) * n, n) = volumes[b].voxels;
  }
  return t;
}

Tensor<float> stack_images(const std::vector<Image>& images) {
  if (images.empty()) throw DataError(DataError::Kind::invalid, "empty batch");
  const auto& f = images.front();
  const Index n = f.pixels.size();
  Tensor<float> t({static_cast<Index>(images.size()), f.channels, f.extents[0], f.extents[1]});
  for (std::size_t b = 0; b < images.size(); ++b) {
    if (images[b].extents != f.extents || images[b].channels != f.channels) {
      throw DataError(DataError::Kind::invalid, "ragged image batch");
    }
    t.data().segment(static_cast<Index>(b) * n, n) = images[b].pixels;
  }
  return t;
}

}  // namespace pasfuse
