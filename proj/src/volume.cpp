#include "cardioseg/volume.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

namespace cardioseg {

std::string to_string(Phase p) { return p == Phase::ED ? "ED" : "ES"; }

Phase parse_phase(const std::string& s) {
  std::string u = s;
  std::transform(u.begin(), u.end(), u.begin(), [](unsigned char c) { return char(std::toupper(c)); });
  if (u == "ED") return Phase::ED;
  if (u == "ES") return Phase::ES;
  throw DataError("unknown phase '" + s + "' (expected ED or ES)");
}

void VolumeStudy::validate() const {
  const std::string who = "study " + id();
  for (double s : {spacing.z, spacing.y, spacing.x})
    if (!(s > 0) || !std::isfinite(s)) throw DataError(who + ": voxel spacing must be positive");
  if (image.size() == 0 || image.size() != image.depth * image.height * image.width)
    throw DataError(who + ": empty or inconsistent image");
  if (!labels) return;
  if (!labels->same_extents(image)) throw DataError(who + ": label extents differ from image extents");
  for (auto v : labels->data)
    if (v >= kNumClasses) throw LabelError(who + ": label value " + std::to_string(int(v)) + " outside 0..3");
}

}  // namespace cardioseg
