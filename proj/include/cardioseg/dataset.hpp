#pragma once

// On-disk dataset layout: one folder per patient and phase,
//
//   <root>/<patient_id>_<ED|ES>/image.nii   (or image.nii.gz)
//                               label.nii   (optional, or label.nii.gz)
//
// A folder with only label.nii holds a prediction; reading it yields a
// zero image on the label grid.
//                               info.txt    patient_id = ..., phase = ...

#include <filesystem>
#include <vector>

#include "cardioseg/volume.hpp"

namespace cardioseg {

void write_study(const std::filesystem::path& dir, const VolumeStudy& study);
VolumeStudy read_study(const std::filesystem::path& dir);

/// Prediction folder: label.nii and info.txt only.
void write_label_study(const std::filesystem::path& dir, const VolumeStudy& study);
/// Writes each study under root/<id>. Creates root.
void write_dataset(const std::filesystem::path& root, const std::vector<VolumeStudy>& studies);
/// Every subfolder holding an info.txt, in name order. Up to `threads`
/// folders are decoded at once.
std::vector<VolumeStudy> read_dataset(const std::filesystem::path& root, std::size_t threads = 1);

/// Distinct patient ids in first-seen order.
std::vector<std::string> patient_ids(const std::vector<VolumeStudy>& studies);

}  // namespace cardioseg
