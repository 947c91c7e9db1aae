#pragma once

// Training samples, N-slice stacking and in-plane rotation/scale
// augmentation.

#include <cstdint>
#include <string>
#include <vector>

#include "cardioseg/layers.hpp"
#include "cardioseg/volume.hpp"

namespace cardioseg {

/// image [channels, depth, height, width], labels [depth, height, width].
/// 2-D samples have depth 1 and one channel per stacked slice; 3-D samples
/// have one channel.
struct Sample {
  std::size_t channels = 0, depth = 0, height = 0, width = 0;
  std::vector<double> image;
  std::vector<std::uint8_t> labels;  // empty when the study is unlabelled
};

/// Slices z-(N-1)/2 .. z+(N-1)/2, clamped at the volume edges; the target
/// is the label slice at z.
Sample stack_slices(const VolumeStudy& study, std::size_t n, std::size_t z);

/// The whole study as a single-channel 3-D sample.
Sample volume_sample(const VolumeStudy& study);

struct AugmentConfig {
  double max_rotation_deg = 15.0;
  double min_scale = 0.9, max_scale = 1.1;
  double probability = 1.0;
  bool enabled = true;

  void validate() const;
};

struct AffineParams {
  double angle_deg = 0.0;
  double scale = 1.0;
};

AffineParams sample_affine(const AugmentConfig& cfg, Rng& rng);

/// Rotation and scale about the plane centre, applied to every in-plane
/// slice: bilinear for images, nearest for labels, zero outside the canvas.
Sample apply_affine(const Sample& s, const AffineParams& p);

Sample augment(const Sample& s, const AugmentConfig& cfg, Rng& rng);

/// Independent per-sample seed, so loading order does not change results.
std::uint64_t sample_seed(std::uint64_t global_seed, const std::string& patient_id, Phase phase,
                          std::uint64_t epoch, std::uint64_t slice);

}  // namespace cardioseg
