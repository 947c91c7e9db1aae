#pragma once

// Overlap, surface distance and clinical measures on label volumes.

#include <array>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "cardioseg/volume.hpp"

namespace cardioseg {

/// Voxels equal to `cls`, as 0/1.
LabelVolume binary_mask(const LabelVolume& labels, std::uint8_t cls);

/// 2|A n B| / (|A| + |B|) over nonzero voxels; 1 when both are empty.
double dice_score(const LabelVolume& a, const LabelVolume& b);

/// Symmetric Hausdorff distance in mm between the boundary voxels of two
/// masks (voxels with a face neighbour outside the mask or the volume).
/// Infinity when either mask is empty.
double hausdorff_mm(const LabelVolume& a, const LabelVolume& b, const Spacing& spacing);

double structure_volume_ml(const LabelVolume& labels, std::uint8_t cls, const Spacing& spacing);

/// Percent. DegenerateStudyError when edv <= 0.
double ejection_fraction(double edv_ml, double esv_ml);

inline constexpr double kMyocardiumDensity = 1.05;  // g/mL
double myocardial_mass_g(double myo_volume_ml, double density = kMyocardiumDensity);

struct ClinicalStats {
  std::optional<double> cc;  // empty when either input has zero variance
  double bias = 0;
  double loa_lo = 0, loa_hi = 0;
};

/// Pearson correlation; UndefinedCorrelationError on zero variance.
double pearson(const std::vector<double>& x, const std::vector<double>& y);

/// Needs at least three pairs. Limits of agreement use the sample (n - 1)
/// standard deviation of the differences.
ClinicalStats clinical_stats(const std::vector<double>& pred, const std::vector<double>& truth);

inline constexpr std::array<Structure, 3> kStructures{kLV, kRV, kMYO};
std::string structure_name(std::uint8_t s);

struct StructureResult {
  std::string study_id;
  std::uint8_t structure = kLV;
  Phase phase = Phase::ED;
  double dice = 0;
  double hausdorff_mm = 0;
  bool empty_prediction = false;
  bool empty_truth = false;
};

struct CohortStats {
  std::string metric;  // "LV_EF", "RV_EF", "MYO_mass"
  std::size_t n = 0;
  std::optional<ClinicalStats> stats;  // empty with fewer than 3 patients
};

struct EvaluationReport {
  std::vector<StructureResult> results;
  /// Indexed [structure LV/RV/MYO][phase ED/ES].
  double mean_dice[3][2] = {};
  double mean_hausdorff[3][2] = {};  // over finite values
  std::size_t flagged[3][2] = {};    // infinite Hausdorff distances
  std::vector<CohortStats> clinical;
  std::size_t empty_predictions = 0;
  std::vector<std::string> degenerate;  // patients excluded from clinical stats

  /// Aligned text tables: distances (Dice and Hausdorff, LV/RV/MYO x ED/ES)
  /// and clinical measures (CC, bias, LOA).
  std::string table() const;
  /// study_id,structure,phase,dice,hausdorff_mm,flags lines followed by
  /// metric,cc,bias,loa_lo,loa_hi lines.
  std::string csv() const;
};

/// Pairs studies by id(). Spacing comes from the ground truth. PairingError
/// lists every unmatched id.
EvaluationReport evaluate_cohort(const std::vector<VolumeStudy>& predictions,
                                 const std::vector<VolumeStudy>& truths,
                                 double density = kMyocardiumDensity);

}  // namespace cardioseg
