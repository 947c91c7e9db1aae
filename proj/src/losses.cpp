#include "cardioseg/losses.hpp"

#include <algorithm>
#include <limits>

namespace cardioseg {

LossKind parse_loss_kind(const std::string& name) {
  if (name == "ce") return LossKind::ce;
  if (name == "dice") return LossKind::dice;
  if (name == "dice_ce") return LossKind::dice_ce;
  throw ParameterError("unknown loss '" + name + "' (expected ce, dice or dice_ce)");
}

std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::ce: return "ce";
    case LossKind::dice: return "dice";
    case LossKind::dice_ce: return "dice_ce";
  }
  return "?";
}

void LossConfig::validate(std::size_t num_classes) const {
  if (!class_weights.empty()) {
    if (class_weights.size() != num_classes)
      throw ParameterError("class_weights has " + std::to_string(class_weights.size()) + " entries for " +
                           std::to_string(num_classes) + " classes");
    for (double w : class_weights)
      if (!(w > 0.0)) throw ParameterError("class weights must be positive");
  }
  if (lambda_ce < 0.0 || lambda_dice < 0.0 || !(lambda_ce + lambda_dice > 0.0))
    throw ParameterError("loss lambdas must be non-negative with a positive sum");
  if (!(epsilon > 0.0)) throw ParameterError("epsilon must be positive");
  if (dice_numerator_factor != 1 && dice_numerator_factor != 2)
    throw ParameterError("dice_numerator_factor must be 1 or 2");
}

LabelMap::LabelMap(Shape s, std::vector<std::uint8_t> v) : shape(std::move(s)), values(std::move(v)) {
  if (numel(shape) != values.size()) throw SizeError("label map shape " + to_string(shape) + " does not match data");
}

namespace {

// Checks probs [B, C, S...] against labels [B, S...]; returns C.
template <typename T>
std::size_t check_pair(const Tensor<T>& probs, const LabelMap& labels) {
  const Shape& ps = probs.shape();
  if (ps.size() < 3 || labels.shape.size() + 1 != ps.size())
    throw SizeError("probabilities " + to_string(ps) + " do not match labels " + to_string(labels.shape));
  if (labels.shape[0] != ps[0] || !std::equal(labels.shape.begin() + 1, labels.shape.end(), ps.begin() + 2))
    throw SizeError("probabilities " + to_string(ps) + " do not match labels " + to_string(labels.shape));
  return ps[1];
}

std::vector<std::size_t> pooled_axes(std::size_t rank) {
  std::vector<std::size_t> axes{0};
  for (std::size_t d = 2; d < rank; ++d) axes.push_back(d);
  return axes;
}

}  // namespace

template <typename T>
Tensor<T> one_hot(const LabelMap& labels, std::size_t num_classes) {
  if (labels.shape.empty()) throw SizeError("one_hot: empty label shape");
  const std::size_t B = labels.shape[0];
  const std::size_t S = labels.values.size() / std::max<std::size_t>(B, 1);
  Shape out_shape{B, num_classes};
  out_shape.insert(out_shape.end(), labels.shape.begin() + 1, labels.shape.end());
  std::vector<T> out(B * num_classes * S, T(0));
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t s = 0; s < S; ++s) {
      const std::size_t t = labels.values[b * S + s];
      if (t >= num_classes)
        throw LabelError("label " + std::to_string(t) + " out of range for " + std::to_string(num_classes) + " classes");
      out[(b * num_classes + t) * S + s] = T(1);
    }
  return Tensor<T>::from(std::move(out_shape), std::move(out));
}

template <typename T>
Tensor<T> cross_entropy_loss(const Tensor<T>& probs, const LabelMap& labels, const LossConfig& cfg) {
  const std::size_t C = check_pair(probs, labels);
  cfg.validate(C);
  const Tensor<T> target = one_hot<T>(labels, C);
  std::vector<T> w(labels.values.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = T(cfg.weight(labels.values[i]));
  const Tensor<T> weights = Tensor<T>::from(labels.shape, std::move(w));

  Tensor<T> picked = sum(mul(probs, target), Axes{{1}});
  Tensor<T> logp = log(clamp(picked, T(1e-12), std::numeric_limits<T>::max()));
  return mul(sum(mul(logp, weights)), T(-1) / T(labels.values.size()));
}

template <typename T>
Tensor<T> dice_loss(const Tensor<T>& probs, const LabelMap& labels, const LossConfig& cfg) {
  const std::size_t C = check_pair(probs, labels);
  cfg.validate(C);
  const Tensor<T> target = one_hot<T>(labels, C);
  const Axes axes = pooled_axes(probs.dim());
  const Tensor<T> target_sum = sum(target, axes);

  std::vector<T> w(C);
  for (std::size_t i = 0; i < C; ++i) w[i] = (i == 0 && !cfg.dice_include_background) ? T(0) : T(cfg.weight(i));
  const Tensor<T> weights = Tensor<T>::from({C}, std::move(w));

  const T eps = T(cfg.epsilon);
  Tensor<T> intersection = sum(mul(probs, target), axes);
  Tensor<T> numerator = add(mul(intersection, T(cfg.dice_numerator_factor)), eps);
  Tensor<T> denominator = add(add(sum(probs, axes), target_sum), eps);
  Tensor<T> per_class = log(rsub(div(numerator, denominator), T(2)));
  return sum(mul(per_class, weights));
}

template <typename T>
Tensor<T> combined_loss(const Tensor<T>& probs, const LabelMap& labels, const LossConfig& cfg) {
  return add(mul(cross_entropy_loss(probs, labels, cfg), T(cfg.lambda_ce)),
             mul(dice_loss(probs, labels, cfg), T(cfg.lambda_dice)));
}

template <typename T>
Tensor<T> segmentation_loss(LossKind kind, const Tensor<T>& probs, const LabelMap& labels, const LossConfig& cfg) {
  switch (kind) {
    case LossKind::ce: return cross_entropy_loss(probs, labels, cfg);
    case LossKind::dice: return dice_loss(probs, labels, cfg);
    case LossKind::dice_ce: return combined_loss(probs, labels, cfg);
  }
  throw ParameterError("unknown loss kind");
}

#define CARDIOSEG_INSTANTIATE_LOSSES(T)                                                          \
  template Tensor<T> one_hot<T>(const LabelMap&, std::size_t);                                   \
  template Tensor<T> cross_entropy_loss(const Tensor<T>&, const LabelMap&, const LossConfig&);   \
  template Tensor<T> dice_loss(const Tensor<T>&, const LabelMap&, const LossConfig&);            \
  template Tensor<T> combined_loss(const Tensor<T>&, const LabelMap&, const LossConfig&);        \
  template Tensor<T> segmentation_loss(LossKind, const Tensor<T>&, const LabelMap&, const LossConfig&);

CARDIOSEG_INSTANTIATE_LOSSES(float)
CARDIOSEG_INSTANTIATE_LOSSES(double)

std::vector<double> class_weights_from_counts(std::span<const std::uint64_t> counts) {
  std::uint64_t total = 0;
  for (auto c : counts) total += c;
  if (total == 0) throw DataError("class weights need at least one labelled voxel");
  const double C = double(counts.size());
  double inv_sum = 0.0;
  for (auto c : counts)
    if (c > 0) inv_sum += double(total) / double(c);
  std::vector<double> w(counts.size(), 0.0);
  double largest = 0.0;
  for (std::size_t i = 0; i < counts.size(); ++i)
    if (counts[i] > 0) {
      w[i] = (double(total) / double(counts[i])) * C / inv_sum;
      largest = std::max(largest, w[i]);
    }
  for (std::size_t i = 0; i < counts.size(); ++i)
    if (counts[i] == 0) w[i] = largest;
  return w;
}

std::vector<double> compute_class_weights(std::span<const std::span<const std::uint8_t>> labels,
                                          std::size_t num_classes) {
  std::vector<std::uint64_t> counts(num_classes, 0);
  for (auto volume : labels)
    for (auto v : volume) {
      if (v >= num_classes) throw LabelError("label " + std::to_string(v) + " out of range");
      ++counts[v];
    }
  return class_weights_from_counts(counts);
}

}  // namespace cardioseg
