#pragma once

// Synthetic short-axis cardiac studies with known labels: an LV disk, a
// myocardial ring around it and an RV crescent beside it, over a noisy,
// bias-field-modulated background. Each patient yields an ED and an ES
// study; ES cavities are smaller, so ejection fractions are positive.

#include <cstdint>
#include <vector>

#include "cardioseg/volume.hpp"

namespace cardioseg {

struct PhantomConfig {
  std::size_t count = 10;
  std::size_t depth = 8, height = 64, width = 64;
  Spacing spacing{10.0, 1.5, 1.5};
  std::uint64_t seed = 0;
  double noise_sd = 0.04;  // relative to the LV blood intensity
};

/// 2 * count studies ordered patient by patient, ED before ES. Patient ids
/// are "patient001", "patient002", ...
std::vector<VolumeStudy> generate_phantom(const PhantomConfig& cfg);

}  // namespace cardioseg
