#pragma once

#include "pasfuse/datapipe/image.hpp"

#include <filesystem>

namespace pasfuse {

inline constexpr int kNiftiHeaderSize = 348;
inline constexpr int kNiftiVoxOffset = 352;

/// NIfTI-1 datatype codes understood by read_nifti.
enum class NiftiType : short { u8 = 2, i16 = 4, f32 = 16, f64 = 64 };

/// Single-file NIfTI-1 (.nii). Either byte order is accepted; u8, i16, f32
/// and f64 voxels are converted to f32 and scl_slope/scl_inter applied when
/// the slope is nonzero.
Volume read_nifti(const std::filesystem::path& path);
/// Little-endian f32, no intensity scaling; stored axes are written as
/// NIfTI (i, j, k) in order.
void write_nifti(const std::filesystem::path& path, const Volume& volume);

/// ".rvol": one JSON header line {"extents":[H,W,D],"dtype":"f32le"}, then
/// raw little-endian f32 voxels.
Volume read_rvol(const std::filesystem::path& path);
void write_rvol(const std::filesystem::path& path, const Volume& volume);

/// ".rimg": header {"extents":[H,W],"channels":C,"dtype":"f32le"}.
Image read_rimg(const std::filesystem::path& path);
void write_rimg(const std::filesystem::path& path, const Image& image);

/// Dispatch on extension (.nii or .rvol).
Volume read_volume(const std::filesystem::path& path);

}  // namespace pasfuse
