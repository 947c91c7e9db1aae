#pragma once

// Training objectives on softmax probabilities p(x, i) [B, C, spatial...]
// against integer targets t(x) [B, spatial...]:
//
//   cross entropy  L_ce   = -(1/N) sum_x w_{t(x)} log p(x, t(x))
//   dice           l_i    = log(2 - (f sum_x t_i p_i + eps) / (sum_x t_i + sum_x p_i + eps))
//                  L_dice = sum_i w_i l_i
//   combined       L      = lambda_ce L_ce + lambda_dice L_dice
//
// The dice terms pool the whole batch per class.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cardioseg/tensor.hpp"

namespace cardioseg {

enum class LossKind { ce, dice, dice_ce };

LossKind parse_loss_kind(const std::string& name);
std::string to_string(LossKind kind);

struct LossConfig {
  std::vector<double> class_weights;  // empty means all ones
  double lambda_ce = 0.5;
  double lambda_dice = 0.5;
  double epsilon = 1e-5;
  int dice_numerator_factor = 2;
  bool dice_include_background = false;

  void validate(std::size_t num_classes) const;
  double weight(std::size_t cls) const { return class_weights.empty() ? 1.0 : class_weights[cls]; }
};

/// Integer class map, shape [B, spatial...].
struct LabelMap {
  Shape shape;
  std::vector<std::uint8_t> values;

  LabelMap() = default;
  LabelMap(Shape s, std::vector<std::uint8_t> v);
};

/// [B, C, spatial...] binary maps; throws LabelError for labels >= C.
template <typename T>
Tensor<T> one_hot(const LabelMap& labels, std::size_t num_classes);

template <typename T>
Tensor<T> cross_entropy_loss(const Tensor<T>& probs, const LabelMap& labels, const LossConfig& cfg);

template <typename T>
Tensor<T> dice_loss(const Tensor<T>& probs, const LabelMap& labels, const LossConfig& cfg);

template <typename T>
Tensor<T> combined_loss(const Tensor<T>& probs, const LabelMap& labels, const LossConfig& cfg);

/// Dispatches on `kind`: ce, dice, or the lambda-weighted combination.
template <typename T>
Tensor<T> segmentation_loss(LossKind kind, const Tensor<T>& probs, const LabelMap& labels, const LossConfig& cfg);

/// Inverse-frequency weights, w_i = (1/f_i) C / sum_j (1/f_j), so they sum
/// to C when every class occurs. Absent classes take the largest weight.
std::vector<double> class_weights_from_counts(std::span<const std::uint64_t> counts);
std::vector<double> compute_class_weights(std::span<const std::span<const std::uint8_t>> labels,
                                          std::size_t num_classes);

}  // namespace cardioseg
