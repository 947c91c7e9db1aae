#pragma once

// Single-file NIfTI-1 subset: little-endian, 3-D (or 4-D with one frame),
// uint8/int16/uint16/float32, optionally gzip-compressed.

#include <filesystem>

#include "cardioseg/volume.hpp"

namespace cardioseg {

enum class NiftiType : std::int16_t { uint8 = 2, int16 = 4, float32 = 16, uint16 = 512 };

/// Image (scaled by scl_slope/scl_inter when the slope is nonzero) and
/// spacing; labels, id and phase are left empty.
VolumeStudy read_nifti(const std::filesystem::path& path);

/// Writes gzip output when the name ends in ".gz". Values that the chosen
/// integer type cannot hold exactly raise DataError.
void write_nifti(const std::filesystem::path& path, const ImageVolume& image, const Spacing& spacing,
                 NiftiType type = NiftiType::float32);
void write_nifti(const std::filesystem::path& path, const LabelVolume& labels, const Spacing& spacing);

/// Integer check and narrowing for volumes read from label files.
LabelVolume to_label_volume(const ImageVolume& v);

}  // namespace cardioseg
