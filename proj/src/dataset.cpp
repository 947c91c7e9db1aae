#include "cardioseg/dataset.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <fstream>
#include <optional>
#include <thread>

#include "cardioseg/keyvalue.hpp"
#include "cardioseg/nifti.hpp"

namespace cardioseg {

namespace fs = std::filesystem;

namespace {

fs::path find_volume(const fs::path& dir, const std::string& stem) {
  for (const char* ext : {".nii", ".nii.gz"})
    if (auto p = dir / (stem + ext); fs::exists(p)) return p;
  return {};
}

}  // namespace

void write_study(const fs::path& dir, const VolumeStudy& study) {
  study.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  write_nifti(dir / "image.nii", study.image, study.spacing, NiftiType::float32);
  if (study.labels) write_nifti(dir / "label.nii", *study.labels, study.spacing);
  std::ofstream info(dir / "info.txt");
  info << format_key_values({{"patient_id", study.patient_id}, {"phase", to_string(study.phase)}});
  if (!info) throw IoError("cannot write " + (dir / "info.txt").string());
}

VolumeStudy read_study(const fs::path& dir) {
  const auto info = read_key_values(dir / "info.txt");
  const std::string* id = find_value(info, "patient_id");
  const std::string* phase = find_value(info, "phase");
  if (!id || !phase) throw DataError((dir / "info.txt").string() + ": needs patient_id and phase");

  const auto image_path = find_volume(dir, "image");
  const auto label_path = find_volume(dir, "label");
  if (image_path.empty() && label_path.empty()) throw DataError(dir.string() + ": no image.nii or label.nii");
  VolumeStudy s;
  std::optional<VolumeStudy> lab;
  if (!label_path.empty()) lab = read_nifti(label_path);
  if (!image_path.empty()) {
    s = read_nifti(image_path);
  } else {
    // label-only folder, as written for predictions
    s.spacing = lab->spacing;
    s.image = ImageVolume(lab->image.depth, lab->image.height, lab->image.width);
  }
  s.patient_id = *id;
  s.phase = parse_phase(*phase);
  if (lab) {
    try {
      s.labels = to_label_volume(lab->image);
    } catch (const LabelError& e) {
      throw LabelError(label_path.string() + ": " + e.what());
    }
    if (!s.labels->same_extents(s.image)) throw DataError(label_path.string() + ": extents differ from the image");
  }
  try {
    s.validate();
  } catch (const Error& e) {
    throw DataError(dir.string() + ": " + e.what());
  }
  return s;
}

void write_label_study(const fs::path& dir, const VolumeStudy& study) {
  if (!study.labels) throw DataError("study " + study.id() + " has no labels to write");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  write_nifti(dir / "label.nii", *study.labels, study.spacing);
  std::ofstream info(dir / "info.txt");
  info << format_key_values({{"patient_id", study.patient_id}, {"phase", to_string(study.phase)}});
  if (!info) throw IoError("cannot write " + (dir / "info.txt").string());
}

void write_dataset(const fs::path& root, const std::vector<VolumeStudy>& studies) {
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec || !fs::is_directory(root)) throw IoError("cannot create " + root.string());
  for (const auto& s : studies) write_study(root / s.id(), s);
}

std::vector<VolumeStudy> read_dataset(const fs::path& root, std::size_t threads) {
  if (!fs::is_directory(root)) throw IoError("dataset directory " + root.string() + " does not exist");
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && fs::exists(e.path() / "info.txt")) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  std::vector<VolumeStudy> out(dirs.size());
  threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(dirs.size(), 1));
  if (threads == 1) {
    for (std::size_t i = 0; i < dirs.size(); ++i) out[i] = read_study(dirs[i]);
    return out;
  }
  // Workers fill fixed slots, so the result does not depend on scheduling.
  // The first failure in folder order is rethrown.
  std::vector<std::exception_ptr> errors(dirs.size());
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next++) < dirs.size();) {
        try {
          out[i] = read_study(dirs[i]);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

std::vector<std::string> patient_ids(const std::vector<VolumeStudy>& studies) {
  std::vector<std::string> ids;
  for (const auto& s : studies)
    if (std::find(ids.begin(), ids.end(), s.patient_id) == ids.end()) ids.push_back(s.patient_id);
  return ids;
}

}  // namespace cardioseg
