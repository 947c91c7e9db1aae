// Python bindings. Volumes cross the boundary as C-contiguous numpy arrays
// shaped [Z, H, W]; spacings as (z, y, x) tuples in mm.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "cardioseg/config.hpp"
#include "cardioseg/dataset.hpp"
#include "cardioseg/engine.hpp"
#include "cardioseg/gradcheck.hpp"
#include "cardioseg/metrics.hpp"
#include "cardioseg/nifti.hpp"
#include "cardioseg/phantom.hpp"

namespace py = pybind11;
using namespace cardioseg;

namespace {

using SpacingTuple = std::tuple<double, double, double>;

Spacing to_spacing(const SpacingTuple& t) { return {std::get<0>(t), std::get<1>(t), std::get<2>(t)}; }
SpacingTuple from_spacing(const Spacing& s) { return {s.z, s.y, s.x}; }

template <typename T>
Volume<T> to_volume(const py::array_t<T, py::array::c_style | py::array::forcecast>& a, const char* what) {
  if (a.ndim() != 3) throw py::value_error(std::string(what) + " must be a 3-D array [Z, H, W]");
  Volume<T> v(a.shape(0), a.shape(1), a.shape(2));
  std::copy(a.data(), a.data() + a.size(), v.data.begin());
  return v;
}

template <typename T>
py::array_t<T> to_array(const Volume<T>& v) {
  py::array_t<T> a({v.depth, v.height, v.width});
  std::copy(v.data.begin(), v.data.end(), a.mutable_data());
  return a;
}

py::dict study_to_dict(const VolumeStudy& s) {
  py::dict d;
  d["patient_id"] = s.patient_id;
  d["phase"] = to_string(s.phase);
  d["spacing"] = from_spacing(s.spacing);
  d["image"] = to_array(s.image);
  d["labels"] = s.labels ? py::object(to_array(*s.labels)) : py::none();
  return d;
}

VolumeStudy study_from_args(py::array_t<double, py::array::c_style | py::array::forcecast> image,
                            const SpacingTuple& spacing, const std::string& patient_id, const std::string& phase) {
  VolumeStudy s;
  s.image = to_volume<double>(image, "image");
  s.spacing = to_spacing(spacing);
  s.patient_id = patient_id;
  s.phase = parse_phase(phase);
  s.validate();
  return s;
}

py::dict stats_to_dict(const ClinicalStats& s) {
  py::dict d;
  d["cc"] = s.cc ? py::object(py::float_(*s.cc)) : py::none();
  d["bias"] = s.bias;
  d["loa"] = std::make_tuple(s.loa_lo, s.loa_hi);
  return d;
}

// Checkpoint plus its settings, ready for inference.
class Predictor {
 public:
  explicit Predictor(const std::filesystem::path& checkpoint)
      : config_(read_checkpoint_meta(checkpoint)),
        model_(load_checkpoint<float>(checkpoint, config_.train.model)) {
    model_.set_mode(Mode::eval);
  }

  py::array_t<std::uint8_t> predict(py::array_t<double, py::array::c_style | py::array::forcecast> image,
                                    const SpacingTuple& spacing) {
    const VolumeStudy s = study_from_args(image, spacing, "input", "ED");
    LabelVolume out;
    {
      py::gil_scoped_release release;
      out = predict_study(model_, preprocess(s, config_.preprocess));
    }
    return to_array(out);
  }

  std::vector<std::pair<std::string, std::string>> settings() const { return config_.to_key_values(); }

 private:
  RunConfig config_;
  SegmentationModel<float> model_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Cardiac MR segmentation: phantoms, NIfTI, metrics and inference";

  static py::exception<Error> base(m, "Error", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::set_error(base, (e.kind() + ": " + e.what()).c_str());
    }
  });

  m.attr("LV") = int(kLV);
  m.attr("RV") = int(kRV);
  m.attr("MYO") = int(kMYO);

  m.def(
      "generate_phantom",
      [](std::size_t count, std::size_t depth, std::size_t height, std::size_t width, std::uint64_t seed,
         const SpacingTuple& spacing) {
        PhantomConfig pc;
        pc.count = count;
        pc.depth = depth;
        pc.height = height;
        pc.width = width;
        pc.seed = seed;
        pc.spacing = to_spacing(spacing);
        py::list out;
        for (const auto& s : generate_phantom(pc)) out.append(study_to_dict(s));
        return out;
      },
      py::arg("count") = 10, py::arg("depth") = 8, py::arg("height") = 64, py::arg("width") = 64,
      py::arg("seed") = 0, py::arg("spacing") = SpacingTuple{10.0, 1.5, 1.5},
      "Synthetic studies as dicts, ED then ES per patient.");

  m.def("read_nifti", [](const std::filesystem::path& p) { return study_to_dict(read_nifti(p)); }, py::arg("path"));
  m.def(
      "write_nifti",
      [](const std::filesystem::path& p, py::array_t<double, py::array::c_style | py::array::forcecast> image,
         const SpacingTuple& spacing) { write_nifti(p, to_volume<double>(image, "image"), to_spacing(spacing)); },
      py::arg("path"), py::arg("image"), py::arg("spacing"), "Writes float32 (gzip when the name ends in .gz).");
  m.def(
      "write_labels",
      [](const std::filesystem::path& p, py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast> labels,
         const SpacingTuple& spacing) { write_nifti(p, to_volume<std::uint8_t>(labels, "labels"), to_spacing(spacing)); },
      py::arg("path"), py::arg("labels"), py::arg("spacing"));
  m.def(
      "read_dataset",
      [](const std::filesystem::path& root) {
        py::list out;
        for (const auto& s : read_dataset(root)) out.append(study_to_dict(s));
        return out;
      },
      py::arg("root"));

  m.def(
      "dice_score",
      [](py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast> a,
         py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast> b) {
        return dice_score(to_volume<std::uint8_t>(a, "a"), to_volume<std::uint8_t>(b, "b"));
      },
      py::arg("a"), py::arg("b"), "Dice of two binary masks (nonzero = inside).");
  m.def(
      "hausdorff_mm",
      [](py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast> a,
         py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast> b, const SpacingTuple& spacing) {
        return hausdorff_mm(to_volume<std::uint8_t>(a, "a"), to_volume<std::uint8_t>(b, "b"), to_spacing(spacing));
      },
      py::arg("a"), py::arg("b"), py::arg("spacing"), "inf when either mask is empty.");
  m.def(
      "structure_volume_ml",
      [](py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast> labels, int cls,
         const SpacingTuple& spacing) {
        return structure_volume_ml(to_volume<std::uint8_t>(labels, "labels"), std::uint8_t(cls), to_spacing(spacing));
      },
      py::arg("labels"), py::arg("cls"), py::arg("spacing"));
  m.def("ejection_fraction", &ejection_fraction, py::arg("edv"), py::arg("esv"));
  m.def(
      "clinical_stats",
      [](const std::vector<double>& pred, const std::vector<double>& truth) {
        return stats_to_dict(clinical_stats(pred, truth));
      },
      py::arg("pred"), py::arg("truth"), "Pearson cc (None without variance), bias and 95% limits of agreement.");

  m.def(
      "lr_at_epoch",
      [](double initial, double factor, std::size_t every, std::size_t epoch) {
        TrainConfig c;
        c.initial_lr = initial;
        c.lr_decay_factor = factor;
        c.lr_decay_every = every;
        return lr_at_epoch(c, epoch);
      },
      py::arg("initial"), py::arg("factor"), py::arg("every"), py::arg("epoch"));
  m.def(
      "make_folds",
      [](const std::vector<std::string>& ids, std::size_t folds, std::uint64_t seed) {
        py::list out;
        for (const auto& f : make_folds(ids, folds, seed)) out.append(py::make_tuple(f.train, f.validation));
        return out;
      },
      py::arg("patient_ids"), py::arg("folds"), py::arg("seed") = 0, "(train, validation) id lists per fold.");

  m.def(
      "gradcheck",
      [](std::uint64_t seed, double tolerance) {
        std::vector<std::tuple<std::string, double, bool>> out;
        for (const auto& r : run_gradcheck_suite(seed, tolerance))
          out.emplace_back(r.name, r.max_relative_error, r.passed);
        return out;
      },
      py::arg("seed") = 1234, py::arg("tolerance") = 1e-5, "(op, max relative error, passed) per check.");

  py::class_<Predictor>(m, "Predictor")
      .def(py::init<const std::filesystem::path&>(), py::arg("checkpoint"))
      .def("predict", &Predictor::predict, py::arg("image"), py::arg("spacing"),
           "Labels on the native grid of `image`.")
      .def("settings", &Predictor::settings);
}
