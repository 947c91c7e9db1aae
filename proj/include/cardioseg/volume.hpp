#pragma once

// Dense [Z, H, W] volumes and the per-phase study record.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cardioseg/errors.hpp"

namespace cardioseg {

template <typename T>
struct Volume {
  std::size_t depth = 0, height = 0, width = 0;
  std::vector<T> data;

  Volume() = default;
  Volume(std::size_t z, std::size_t h, std::size_t w, T fill = T{})
      : depth(z), height(h), width(w), data(z * h * w, fill) {}

  std::size_t size() const { return data.size(); }
  std::size_t plane() const { return height * width; }
  bool same_extents(std::size_t z, std::size_t h, std::size_t w) const {
    return depth == z && height == h && width == w;
  }
  template <typename U>
  bool same_extents(const Volume<U>& o) const {
    return same_extents(o.depth, o.height, o.width);
  }

  T& at(std::size_t z, std::size_t y, std::size_t x) { return data[(z * height + y) * width + x]; }
  const T& at(std::size_t z, std::size_t y, std::size_t x) const { return data[(z * height + y) * width + x]; }

  std::span<T> slice(std::size_t z) { return {data.data() + z * plane(), plane()}; }
  std::span<const T> slice(std::size_t z) const { return {data.data() + z * plane(), plane()}; }
};

using ImageVolume = Volume<double>;
using LabelVolume = Volume<std::uint8_t>;

/// Millimetres per voxel along Z, Y and X.
struct Spacing {
  double z = 1.0, y = 1.0, x = 1.0;
  double voxel_mm3() const { return z * y * x; }
  bool operator==(const Spacing&) const = default;
};

enum class Phase { ED, ES };

std::string to_string(Phase p);
/// Accepts "ED" or "ES" (any case); anything else is a DataError.
Phase parse_phase(const std::string& s);

inline constexpr std::uint8_t kNumClasses = 4;  // background, RV, MYO, LV
enum Structure : std::uint8_t { kBackground = 0, kRV = 1, kMYO = 2, kLV = 3 };

struct VolumeStudy {
  ImageVolume image;
  std::optional<LabelVolume> labels;
  Spacing spacing;
  std::string patient_id;
  Phase phase = Phase::ED;

  /// Study key "<patient_id>_<phase>".
  std::string id() const { return patient_id + "_" + to_string(phase); }
  /// DataError on bad spacing or extents, LabelError on values outside 0..3.
  void validate() const;
};

}  // namespace cardioseg
