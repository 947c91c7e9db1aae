#include "cardioseg/engine.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>

#include "cardioseg/config.hpp"
#include "cardioseg/metrics.hpp"

namespace cardioseg {

TrainConfig TrainConfig::defaults(int dims) {
  TrainConfig c;
  if (dims == 3) {
    c.model = ModelConfig::default_3d();
    c.batch_size = 4;
  } else {
    c.model = ModelConfig::default_2d(3);
    c.batch_size = 8;
  }
  return c;
}

void TrainConfig::validate() const {
  model.validate();
  loss_cfg.validate(model.num_classes);
  augment.validate();
  if (!(momentum >= 0 && momentum < 1)) throw ParameterError("momentum must lie in [0, 1)");
  if (!(initial_lr >= 0) || !std::isfinite(initial_lr)) throw ParameterError("learning rate must be nonnegative");
  if (!(lr_decay_factor >= 1)) throw ParameterError("learning-rate decay factor must be at least 1");
  if (lr_decay_every == 0) throw ParameterError("learning-rate decay interval must be positive");
  if (batch_size == 0) throw ParameterError("batch size must be at least 1");
  if (folds < 2) throw ParameterError("at least two folds are needed");
  if (fold >= folds)
    throw ParameterError("fold " + std::to_string(fold) + " outside 0.." + std::to_string(folds - 1));
  if (!(grad_clip >= 0)) throw ParameterError("gradient clip must be nonnegative");
}

// ---------------------------------------------------------------------------
// Optimizer

namespace {

template <typename T>
void sgd_impl(std::span<T> params, std::span<const T> grads, std::span<T> velocity, double lr, double momentum) {
  if (params.size() != grads.size() || params.size() != velocity.size())
    throw SizeError("sgd_step: parameter, gradient and velocity sizes differ");
  const T m = T(momentum), l = T(lr);
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity[i] = m * velocity[i] + grads[i];
    params[i] -= l * velocity[i];
  }
}

}  // namespace

void sgd_step(std::span<float> p, std::span<const float> g, std::span<float> v, double lr, double momentum) {
  sgd_impl(p, g, v, lr, momentum);
}
void sgd_step(std::span<double> p, std::span<const double> g, std::span<double> v, double lr, double momentum) {
  sgd_impl(p, g, v, lr, momentum);
}

template <typename T>
Sgd<T>::Sgd(std::vector<Tensor<T>> params, double momentum) : params_(std::move(params)), momentum_(momentum) {
  for (const auto& p : params_) velocity_.emplace_back(p.numel(), T(0));
}

template <typename T>
void Sgd<T>::step(double lr) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    std::vector<T> zeros;
    std::span<const T> g;
    if (p.has_grad()) {
      g = p.grad();
    } else {
      zeros.assign(p.numel(), T(0));
      g = zeros;
    }
    sgd_step(p.data_mut(), g, std::span<T>(velocity_[i]), lr, momentum_);
  }
}

template <typename T>
void Sgd<T>::zero_grad() {
  zero_grads(params_);
}

template class Sgd<float>;
template class Sgd<double>;

double lr_at_epoch(const TrainConfig& cfg, std::size_t epoch) {
  const double k = double(epoch / cfg.lr_decay_every);
  return cfg.initial_lr / std::pow(cfg.lr_decay_factor, k);
}

// ---------------------------------------------------------------------------
// Folds

namespace {

// Unbiased draw in [0, n) by rejection.
std::size_t bounded(Rng& rng, std::size_t n) {
  const std::uint64_t range = std::uint64_t(n);
  const std::uint64_t limit = ~std::uint64_t(0) - (~std::uint64_t(0) % range);
  std::uint64_t x;
  do x = rng();
  while (x >= limit);
  return std::size_t(x % range);
}

template <typename V>
void shuffle(V& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[bounded(rng, i)]);
}

}  // namespace

std::vector<FoldSplit> make_folds(const std::vector<std::string>& ids, std::size_t folds, std::uint64_t seed) {
  if (folds < 2) throw ParameterError("at least two folds are needed");
  if (ids.size() < folds)
    throw ParameterError(std::to_string(ids.size()) + " patients cannot fill " + std::to_string(folds) + " folds");
  if (std::set<std::string>(ids.begin(), ids.end()).size() != ids.size())
    throw ParameterError("patient ids must be unique");
  auto order = ids;
  Rng rng(seed);
  shuffle(order, rng);
  std::vector<FoldSplit> out;
  for (std::size_t k = 0; k < folds; ++k) {
    const std::size_t a = k * order.size() / folds, b = (k + 1) * order.size() / folds;
    FoldSplit f;
    f.index = k;
    for (std::size_t i = 0; i < order.size(); ++i) (i >= a && i < b ? f.validation : f.train).push_back(order[i]);
    out.push_back(std::move(f));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Inference

namespace {

// Argmax over classes of logits [B, C, S]; the first maximum wins.
void argmax_into(const Tensor<float>& logits, std::size_t b, std::uint8_t* out) {
  const std::size_t C = logits.shape()[1];
  const std::size_t S = logits.numel() / (logits.shape()[0] * C);
  const auto d = logits.data();
  const float* base = d.data() + b * C * S;
  for (std::size_t s = 0; s < S; ++s) {
    std::size_t best = 0;
    float bv = base[s];
    for (std::size_t c = 1; c < C; ++c)
      if (base[c * S + s] > bv) {
        bv = base[c * S + s];
        best = c;
      }
    out[s] = std::uint8_t(best);
  }
}

constexpr std::size_t kInferenceBatch = 8;

}  // namespace

LabelVolume predict_prepared(SegmentationModel<float>& model, const VolumeStudy& study) {
  const ModelConfig& mc = model.config();
  const Mode saved = model.mode();
  model.set_mode(Mode::eval);
  autograd::NoGradGuard no_grad;
  const auto& img = study.image;
  LabelVolume out(img.depth, img.height, img.width);
  try {
    if (mc.dims == 3) {
      std::vector<float> x(img.data.begin(), img.data.end());
      auto logits = model.forward(Tensor<float>::from({1, 1, img.depth, img.height, img.width}, std::move(x)));
      argmax_into(logits, 0, out.data.data());
    } else {
      const std::size_t n = mc.in_channels;
      for (std::size_t z0 = 0; z0 < img.depth; z0 += kInferenceBatch) {
        const std::size_t nb = std::min(kInferenceBatch, img.depth - z0);
        std::vector<float> x;
        x.reserve(nb * n * img.plane());
        for (std::size_t k = 0; k < nb; ++k) {
          auto s = stack_slices(study, n, z0 + k);
          x.insert(x.end(), s.image.begin(), s.image.end());
        }
        auto logits = model.forward(Tensor<float>::from({nb, n, img.height, img.width}, std::move(x)));
        for (std::size_t k = 0; k < nb; ++k) argmax_into(logits, k, out.slice(z0 + k).data());
      }
    }
  } catch (...) {
    model.set_mode(saved);
    throw;
  }
  model.set_mode(saved);
  return out;
}

LabelVolume predict_study(SegmentationModel<float>& model, const PreparedStudy& prepared) {
  return restore_native(predict_prepared(model, prepared.study), prepared.grid);
}

double mean_foreground_dice(SegmentationModel<float>& model, const std::vector<VolumeStudy>& prepared) {
  if (prepared.empty()) return 0.0;
  double total = 0;
  for (const auto& s : prepared) {
    if (!s.labels) throw DataError("study " + s.id() + " has no labels to score against");
    const auto pred = predict_prepared(model, s);
    double d = 0;
    for (auto cls : kStructures) d += dice_score(binary_mask(pred, cls), binary_mask(*s.labels, cls));
    total += d / double(kStructures.size());
  }
  return total / double(prepared.size());
}

// ---------------------------------------------------------------------------
// Training

namespace {

struct SampleRef {
  std::size_t study;
  std::size_t slice;
};

std::vector<double> resolve_class_weights(const TrainConfig& cfg, const std::vector<VolumeStudy>& studies) {
  const std::size_t C = cfg.model.num_classes;
  if (cfg.class_weights == "uniform") return {};
  if (cfg.class_weights == "auto") {
    std::vector<std::span<const std::uint8_t>> vols;
    for (const auto& s : studies) vols.emplace_back(s.labels->data);
    return compute_class_weights(vols, C);
  }
  std::vector<double> w;
  std::size_t start = 0;
  const std::string& v = cfg.class_weights;
  while (start <= v.size()) {
    const auto comma = v.find(',', start);
    w.push_back(std::stod(v.substr(start, comma == std::string::npos ? std::string::npos : comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (w.size() != C) throw ParameterError("class_weights needs " + std::to_string(C) + " values");
  return w;
}

double grad_norm(const std::vector<Tensor<float>>& params) {
  double s = 0;
  for (const auto& p : params)
    if (p.has_grad())
      for (float g : p.grad()) s += double(g) * double(g);
  return std::sqrt(s);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const std::vector<VolumeStudy>& train_set,
                  const std::vector<VolumeStudy>& validation, const TrainOptions& options) {
  cfg.validate();
  if (train_set.empty()) throw DataError("training split is empty");
  for (const auto& s : train_set)
    if (!s.labels) throw DataError("training study " + s.id() + " has no labels");
  const bool is3d = cfg.model.dims == 3;

  // 3-D training uses fixed-depth volumes.
  std::vector<VolumeStudy> fitted;
  if (is3d)
    for (const auto& s : train_set) {
      VolumeStudy f = s;
      f.image = fit_depth(s.image, options.preprocess.train_depth);
      f.labels = fit_depth(*s.labels, options.preprocess.train_depth);
      fitted.push_back(std::move(f));
    }
  const auto& studies = is3d ? fitted : train_set;

  std::vector<SampleRef> refs;
  for (std::size_t i = 0; i < studies.size(); ++i) {
    if (is3d) refs.push_back({i, 0});
    else
      for (std::size_t z = 0; z < studies[i].image.depth; ++z) refs.push_back({i, z});
  }

  LossConfig loss_cfg = cfg.loss_cfg;
  loss_cfg.class_weights = resolve_class_weights(cfg, train_set);
  loss_cfg.validate(cfg.model.num_classes);

  TrainResult result{SegmentationModel<float>(cfg.model, cfg.seed), {}, -1.0, 0, 0};
  auto& model = result.model;
  const auto params = model.parameters();
  Sgd<float> opt(params, cfg.momentum);
  const auto& val_set = validation.empty() ? train_set : validation;
  const std::size_t n_slices = cfg.model.in_channels;

  bool stop = false;
  for (std::size_t epoch = 0; epoch < cfg.epochs && !stop; ++epoch) {
    const double lr = lr_at_epoch(cfg, epoch);
    std::vector<std::size_t> order(refs.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(sample_seed(cfg.seed, "", Phase::ED, epoch, ~std::uint64_t(0)));
    shuffle(order, shuffle_rng);

    model.set_mode(Mode::train);
    double loss_sum = 0;
    std::size_t loss_count = 0;
    for (std::size_t start = 0, batch = 0; start < order.size(); start += cfg.batch_size, ++batch) {
      const std::size_t nb = std::min(cfg.batch_size, order.size() - start);
      std::vector<float> x;
      std::vector<std::uint8_t> t;
      Sample first;
      for (std::size_t k = 0; k < nb; ++k) {
        const auto& ref = refs[order[start + k]];
        const auto& st = studies[ref.study];
        Sample s = is3d ? volume_sample(st) : stack_slices(st, n_slices, ref.slice);
        Rng aug_rng(sample_seed(cfg.seed, st.patient_id, st.phase, epoch, ref.slice));
        s = augment(s, cfg.augment, aug_rng);
        x.insert(x.end(), s.image.begin(), s.image.end());
        t.insert(t.end(), s.labels.begin(), s.labels.end());
        if (k == 0) first = std::move(s);
      }
      Shape xs = is3d ? Shape{nb, 1, first.depth, first.height, first.width}
                      : Shape{nb, n_slices, first.height, first.width};
      Shape ts = is3d ? Shape{nb, first.depth, first.height, first.width} : Shape{nb, first.height, first.width};
      LabelMap labels(ts, std::move(t));
      auto diagnose = [&](const std::string& what) {
        return NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                              std::to_string(batch) + " (lr=" + fmt(lr) + "): " + what);
      };
      Tensor<float> loss;
      double value = 0;
      try {
        auto probs = softmax_channels(model.forward(Tensor<float>::from(xs, std::move(x))));
        loss = segmentation_loss(cfg.loss, probs, labels, loss_cfg);
        value = loss.item();
        if (!std::isfinite(value)) {
          autograd::NoGradGuard g;
          std::string ce = "n/a", dice = "n/a";
          try {
            ce = fmt(cross_entropy_loss(probs, labels, loss_cfg).item());
          } catch (const DomainError&) {
          }
          try {
            dice = fmt(dice_loss(probs, labels, loss_cfg).item());
          } catch (const DomainError&) {
          }
          throw diagnose("loss=" + fmt(value) + ", ce=" + ce + ", dice=" + dice);
        }
      } catch (const DomainError& e) {
        throw diagnose(e.what());
      }
      opt.zero_grad();
      loss.backward();
      if (cfg.grad_clip > 0) {
        const double norm = grad_norm(params);
        if (norm > cfg.grad_clip)
          for (auto p : params)
            if (p.has_grad())
              for (auto& g : p.grad_mut()) g = float(double(g) * cfg.grad_clip / norm);
      }
      opt.step(lr);
      loss_sum += value * double(nb);
      loss_count += nb;
      ++result.steps;
      if (cfg.max_steps && result.steps >= cfg.max_steps) {
        stop = true;
        break;
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = loss_sum / double(loss_count);
    rec.val_dice = mean_foreground_dice(model, val_set);
    if (rec.val_dice > result.best_val_dice) {
      result.best_val_dice = rec.val_dice;
      result.best_epoch = epoch;
      rec.checkpointed = true;
      if (options.checkpoint) {
        save_checkpoint(model, *options.checkpoint);
        RunConfig rc;
        rc.train = cfg;
        rc.preprocess = options.preprocess;
        write_checkpoint_meta(*options.checkpoint, rc, cfg.fold, epoch, rec.val_dice);
      }
    }
    result.history.push_back(rec);
    if (options.on_epoch) options.on_epoch(rec);
  }
  return result;
}

std::string history_csv(const std::vector<EpochRecord>& history) {
  std::string out = "epoch,lr,train_loss,val_dice\n";
  char buf[128];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g\n", r.epoch, r.lr, r.train_loss, r.val_dice);
    out += buf;
  }
  return out;
}

}  // namespace cardioseg
