#pragma once

// Intensity and geometry preparation, applied in this order:
// CLAHE per slice, percentile normalization, clipping, resampling to a
// common spacing, then in-plane center crop or zero pad.

#include <span>
#include <vector>

#include "cardioseg/volume.hpp"

namespace cardioseg {

struct ClaheConfig {
  std::size_t bins = 256;
  std::size_t tiles_y = 8, tiles_x = 8;
  double clip_limit = 0.01;  // fraction of the tile's pixel count
};

struct PreprocessConfig {
  Spacing target_spacing{10.0, 1.5, 1.5};
  double pct_lo = 1.0, pct_hi = 99.0;
  double clip_lo = 0.0, clip_hi = 1.0;
  std::size_t height = 256, width = 256;
  std::size_t train_depth = 12;  // 3-D training volumes only
  bool use_clahe = true;
  ClaheConfig clahe;

  void validate() const;
};

/// Contrast-limited adaptive histogram equalization of one [h, w] slice.
/// The output keeps the slice's min and max; a constant slice is returned
/// unchanged.
std::vector<double> clahe_slice(std::span<const double> slice, std::size_t h, std::size_t w,
                                const ClaheConfig& cfg = {});

/// Linear-interpolation percentile of unsorted values, pct in [0, 100].
double percentile(std::span<const double> values, double pct);

/// (x - P_lo) / (P_hi - P_lo) clamped to [0, 1]; all zeros when P_hi == P_lo.
ImageVolume normalize_percentile(const ImageVolume& v, double lo_pct, double hi_pct);

/// New extents round(n * old / new) (at least 1). Images are trilinear,
/// labels nearest neighbour, both on cell-centred coordinates.
VolumeStudy resample(const VolumeStudy& study, const Spacing& target);

/// Resampling onto explicit extents over the same field of view.
ImageVolume resample_linear(const ImageVolume& v, std::size_t z, std::size_t h, std::size_t w);
LabelVolume resample_nearest(const LabelVolume& v, std::size_t z, std::size_t h, std::size_t w);

/// In-plane center crop or symmetric zero pad. Applying it again with the
/// original extents undoes it (cropped margins come back as zeros).
template <typename T>
Volume<T> crop_or_pad(const Volume<T>& v, std::size_t h, std::size_t w);

/// Center crop or edge-slice replication along Z.
template <typename T>
Volume<T> fit_depth(const Volume<T>& v, std::size_t z);

/// What inference needs to map a prediction back to the native grid.
struct GridRecord {
  std::size_t depth = 0, height = 0, width = 0;  // native
  std::size_t resampled_height = 0, resampled_width = 0;
};

struct PreparedStudy {
  VolumeStudy study;
  GridRecord grid;
};

/// Full pipeline. Z is left at the resampled slice count; 3-D training
/// calls fit_depth separately.
PreparedStudy preprocess(const VolumeStudy& study, const PreprocessConfig& cfg);

/// Inverse of the geometric steps for a label map on the prepared grid.
LabelVolume restore_native(const LabelVolume& prediction, const GridRecord& grid);

}  // namespace cardioseg
