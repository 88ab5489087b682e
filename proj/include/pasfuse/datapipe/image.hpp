#pragma once

#include "pasfuse/ndcore/tensor.hpp"

#include <array>
#include <stdexcept>
#include <string>

namespace pasfuse {

/// Failures reading or validating input data. The kind lets callers (and
/// tests) tell the failure modes apart.
class DataError : public std::runtime_error {
 public:
  enum class Kind {
    io,
    too_small,
    bad_magic,
    detached_header,
    unsupported_datatype,
    unsupported_dims,
    truncated,
    invalid,
  };

  DataError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// Three-axis voxel grid, row-major (last axis fastest).
struct Volume {
  std::array<Index, 3> extents{0, 0, 0};
  Buffer<float> voxels;
  /// Which stored axis holds height, width and depth. NIfTI files store
  /// (x, y, z), i.e. columns first, so they read as {1, 0, 2}.
  std::array<int, 3> hwd_axes{0, 1, 2};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};

  Volume() = default;
  explicit Volume(std::array<Index, 3> e, float fill = 0.0f)
      : extents(e), voxels(Buffer<float>::Constant(e[0] * e[1] * e[2], fill)) {}

  Index size() const { return extents[0] * extents[1] * extents[2]; }
  Index offset(Index i, Index j, Index k) const { return (i * extents[1] + j) * extents[2] + k; }
  float& operator()(Index i, Index j, Index k) { return voxels[offset(i, j, k)]; }
  float operator()(Index i, Index j, Index k) const { return voxels[offset(i, j, k)]; }
};

/// Planar [C, H, W] image.
struct Image {
  Index channels = 1;
  std::array<Index, 2> extents{0, 0};
  Buffer<float> pixels;

  Image() = default;
  Image(Index c, std::array<Index, 2> e, float fill = 0.0f)
      : channels(c), extents(e), pixels(Buffer<float>::Constant(c * e[0] * e[1], fill)) {}

  Index plane() const { return extents[0] * extents[1]; }
  float& operator()(Index c, Index i, Index j) { return pixels[c * plane() + i * extents[1] + j]; }
  float operator()(Index c, Index i, Index j) const {
    return pixels[c * plane() + i * extents[1] + j];
  }
};

}  // namespace pasfuse
