#pragma once

// Optimizer, learning-rate schedule, patient-level folds, the training loop
// and inference.

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cardioseg/augment.hpp"
#include "cardioseg/losses.hpp"
#include "cardioseg/models.hpp"
#include "cardioseg/preprocess.hpp"

namespace cardioseg {

struct TrainConfig {
  double momentum = 0.99;
  double initial_lr = 1e-3;
  double lr_decay_factor = 10.0;
  std::size_t lr_decay_every = 30;  // epochs
  std::size_t epochs = 300;
  std::size_t batch_size = 8;
  std::size_t folds = 5;
  std::size_t fold = 0;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::dice;
  std::string class_weights = "uniform";  // "uniform", "auto" or a comma list
  double grad_clip = 0.0;                 // global L2 norm cap, 0 = off
  std::size_t max_steps = 0;              // 0 = no cap
  ModelConfig model;
  LossConfig loss_cfg;
  AugmentConfig augment;

  static TrainConfig defaults(int dims);
  void validate() const;
};

/// Classical momentum: v = momentum v + g; p -= lr v.
void sgd_step(std::span<float> params, std::span<const float> grads, std::span<float> velocity, double lr,
              double momentum);
void sgd_step(std::span<double> params, std::span<const double> grads, std::span<double> velocity, double lr,
              double momentum);

template <typename T>
class Sgd {
 public:
  Sgd(std::vector<Tensor<T>> params, double momentum);
  void step(double lr);
  void zero_grad();
  const std::vector<std::vector<T>>& velocity() const { return velocity_; }

 private:
  std::vector<Tensor<T>> params_;
  std::vector<std::vector<T>> velocity_;
  double momentum_;
};

/// initial_lr / factor^floor(epoch / every).
double lr_at_epoch(const TrainConfig& cfg, std::size_t epoch);

struct FoldSplit {
  std::size_t index = 0;
  std::vector<std::string> train;
  std::vector<std::string> validation;
};

/// Seeded shuffle, then contiguous partition; sizes differ by at most one.
std::vector<FoldSplit> make_folds(const std::vector<std::string>& patient_ids, std::size_t folds, std::uint64_t seed);

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0;
  double train_loss = 0;
  double val_dice = 0;
  bool checkpointed = false;
};

struct TrainResult {
  SegmentationModel<float> model;
  std::vector<EpochRecord> history;
  double best_val_dice = -1;
  std::size_t best_epoch = 0;
  std::size_t steps = 0;
};

struct TrainOptions {
  /// Best-model checkpoint; a "<path>.meta" companion records the settings.
  std::optional<std::filesystem::path> checkpoint;
  std::function<void(const EpochRecord&)> on_epoch;
  PreprocessConfig preprocess;  // echoed into the metadata only
};

/// Trains on prepared studies (see preprocess). Validation dice is the mean
/// foreground dice on `validation`, or on `train` when that is empty.
TrainResult train(const TrainConfig& cfg, const std::vector<VolumeStudy>& train_set,
                  const std::vector<VolumeStudy>& validation, const TrainOptions& options = {});

/// Labels on the prepared grid. 2-D models run slice by slice with N-slice
/// stacks, 3-D models run once on the whole volume. Argmax ties go to the
/// lower class.
LabelVolume predict_prepared(SegmentationModel<float>& model, const VolumeStudy& prepared);

/// Prediction mapped back to the native grid of the original study.
LabelVolume predict_study(SegmentationModel<float>& model, const PreparedStudy& prepared);

/// Mean over studies of the mean LV/RV/MYO dice.
double mean_foreground_dice(SegmentationModel<float>& model, const std::vector<VolumeStudy>& prepared);

std::string history_csv(const std::vector<EpochRecord>& history);

}  // namespace cardioseg
