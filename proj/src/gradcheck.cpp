#include "cardioseg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cardioseg/layers.hpp"
#include "cardioseg/losses.hpp"

namespace cardioseg {

double gradient_relative_error(const ScalarFn& fn, std::vector<TensorD> inputs, double step) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    if (t.has_grad()) t.zero_grad();
  }
  fn(inputs).backward();

  double worst = 0.0;
  autograd::NoGradGuard no_grad;
  for (auto& t : inputs) {
    auto values = t.data_mut();
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double up = fn(inputs).item();
      values[i] = saved - step;
      const double down = fn(inputs).item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double analytic = t.has_grad() ? t.grad()[i] : 0.0;
      diff2 += (analytic - numeric) * (analytic - numeric);
      a2 += analytic * analytic;
      n2 += numeric * numeric;
    }
    const double scale = std::sqrt(std::max(a2, n2));
    if (scale > 0.0) worst = std::max(worst, std::sqrt(diff2) / scale);
  }
  return worst;
}

namespace {

class Sampler {
 public:
  explicit Sampler(std::uint64_t seed) : rng_(seed) {}

  // Values in +-[lo, hi], away from zero so kinks are never straddled.
  TensorD signed_away(Shape shape, double lo = 0.1, double hi = 1.0) {
    std::vector<double> v(numel(shape));
    for (auto& x : v) {
      const double m = lo + (hi - lo) * uniform01(rng_);
      x = uniform01(rng_) < 0.5 ? -m : m;
    }
    return TensorD::from(std::move(shape), std::move(v));
  }
  TensorD uniform(Shape shape, double lo, double hi) {
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = lo + (hi - lo) * uniform01(rng_);
    return TensorD::from(std::move(shape), std::move(v));
  }
  // Distinct values on a 0.05 lattice, so windowed maxima are unambiguous.
  TensorD distinct(Shape shape) {
    std::vector<double> v(numel(shape));
    std::iota(v.begin(), v.end(), 0.0);
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng_() % i]);
    for (auto& x : v) x = 0.05 * x - 0.5;
    return TensorD::from(std::move(shape), std::move(v));
  }
  std::vector<std::uint8_t> labels(std::size_t n, std::size_t classes) {
    std::vector<std::uint8_t> v(n);
    for (auto& x : v) x = std::uint8_t(rng_() % classes);
    return v;
  }
  Rng& rng() { return rng_; }

 private:
  Rng rng_;
};

// Reduces an op output to a scalar through a fixed random projection.
TensorD project(const TensorD& out, const TensorD& weights) { return sum(mul(out, weights)); }

}  // namespace

std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed, double tolerance) {
  Sampler s(seed);
  std::vector<GradCheckResult> results;
  auto check = [&](std::string name, const ScalarFn& fn, std::vector<TensorD> inputs) {
    const double err = gradient_relative_error(fn, std::move(inputs));
    results.push_back({std::move(name), err, err < tolerance});
  };
  auto unary = [&](std::string name, auto op, TensorD x) {
    Shape shape;
    {
      autograd::NoGradGuard g;
      shape = op(x).shape();
    }
    TensorD r = s.uniform(shape, -1.0, 1.0);
    check(std::move(name), [op, r](const std::vector<TensorD>& in) { return project(op(in[0]), r); }, {x});
  };
  auto binary = [&](std::string name, auto op, TensorD a, TensorD b) {
    Shape shape;
    {
      autograd::NoGradGuard g;
      shape = op(a, b).shape();
    }
    TensorD r = s.uniform(shape, -1.0, 1.0);
    check(std::move(name), [op, r](const std::vector<TensorD>& in) { return project(op(in[0], in[1]), r); }, {a, b});
  };

  // Tensor ops.
  binary("add", [](auto& a, auto& b) { return add(a, b); }, s.uniform({3, 4}, -1, 1), s.uniform({3, 4}, -1, 1));
  binary("sub", [](auto& a, auto& b) { return sub(a, b); }, s.uniform({3, 4}, -1, 1), s.uniform({3, 4}, -1, 1));
  binary("mul", [](auto& a, auto& b) { return mul(a, b); }, s.uniform({3, 4}, -1, 1), s.uniform({3, 4}, -1, 1));
  binary("div", [](auto& a, auto& b) { return div(a, b); }, s.uniform({3, 4}, -1, 1), s.signed_away({3, 4}, 0.5, 2.0));
  binary("pow", [](auto& a, auto& b) { return pow(a, b); }, s.uniform({3, 4}, 0.5, 2.0), s.uniform({3, 4}, -1.5, 1.5));
  unary("pow_scalar", [](const TensorD& x) { return pow(x, 2.5); }, s.uniform({3, 4}, 0.5, 2.0));
  unary("add_scalar", [](const TensorD& x) { return add(x, 3.0); }, s.uniform({5}, -1, 1));
  unary("mul_scalar", [](const TensorD& x) { return mul(x, -1.5); }, s.uniform({5}, -1, 1));
  unary("div_scalar", [](const TensorD& x) { return div(x, 4.0); }, s.uniform({5}, -1, 1));
  unary("rsub_scalar", [](const TensorD& x) { return rsub(x, 2.0); }, s.uniform({5}, -1, 1));
  unary("neg", [](const TensorD& x) { return neg(x); }, s.uniform({5}, -1, 1));
  unary("log", [](const TensorD& x) { return log(x); }, s.uniform({3, 4}, 0.5, 2.0));
  unary("exp", [](const TensorD& x) { return exp(x); }, s.uniform({3, 4}, -1, 1));
  unary("clamp", [](const TensorD& x) { return clamp(x, -0.5, 0.5); }, s.signed_away({4, 4}, 0.02, 0.48));
  unary("sum", [](const TensorD& x) { return sum(x, Axes{{0, 2}}); }, s.uniform({2, 3, 4}, -1, 1));
  unary("mean", [](const TensorD& x) { return mean(x, Axes{{1}}); }, s.uniform({2, 3, 4}, -1, 1));
  unary("max", [](const TensorD& x) { return max(x, Axes{{2}}); }, s.distinct({2, 3, 4}));
  binary("matmul", [](auto& a, auto& b) { return matmul(a, b); }, s.uniform({3, 4}, -1, 1), s.uniform({4, 3}, -1, 1));
  unary("reshape", [](const TensorD& x) { return reshape(x, {4, 3}); }, s.uniform({3, 4}, -1, 1));
  {
    TensorD b = s.uniform({2, 1, 3}, -1, 1);
    unary("concat", [b](const TensorD& x) { return concat<double>({x, b}, 1); }, s.uniform({2, 2, 3}, -1, 1));
  }

  // Layers: weights and inputs are checked jointly.
  auto conv_check = [&](std::string name, Shape in_shape, Shape w_shape, std::vector<std::size_t> pad) {
    TensorD x = s.uniform(in_shape, -1, 1), w = s.uniform(w_shape, -1, 1), b = s.uniform({w_shape[0]}, -1, 1);
    Shape out_shape = in_shape;
    out_shape[1] = w_shape[0];
    TensorD r = s.uniform(out_shape, -1, 1);
    check(name, [pad, r](const std::vector<TensorD>& in) {
      ConvParams<double> p{in[1], in[2], {}, pad};
      return project(conv(in[0], p), r);
    }, {x, w, b});
  };
  conv_check("conv2d", {2, 2, 4, 4}, {3, 2, 3, 3}, {1, 1});
  conv_check("conv3d", {1, 2, 3, 4, 4}, {2, 2, 3, 3, 3}, {1, 1, 1});
  conv_check("conv1x1", {2, 3, 4, 4}, {2, 3, 1, 1}, {0, 0});

  auto upconv_check = [&](std::string name, Shape in_shape, Shape w_shape, std::vector<std::size_t> stride) {
    TensorD x = s.uniform(in_shape, -1, 1), w = s.uniform(w_shape, -1, 1), b = s.uniform({w_shape[1]}, -1, 1);
    TensorD r;
    {
      autograd::NoGradGuard g;
      r = s.uniform(upconv(x, ConvParams<double>{w, b, stride, {}}).shape(), -1, 1);
    }
    check(name, [stride, r](const std::vector<TensorD>& in) {
      return project(upconv(in[0], ConvParams<double>{in[1], in[2], stride, {}}), r);
    }, {x, w, b});
  };
  upconv_check("upconv2d", {2, 3, 2, 2}, {3, 2, 2, 2}, {2, 2});
  upconv_check("upconv3d", {1, 2, 2, 2, 2}, {2, 3, 1, 2, 2}, {1, 2, 2});

  for (Mode mode : {Mode::train, Mode::eval}) {
    TensorD x = s.uniform({2, 3, 4, 4}, -1, 1), gamma = s.uniform({3}, 0.5, 1.5), beta = s.uniform({3}, -1, 1);
    TensorD r = s.uniform({2, 3, 4, 4}, -1, 1);
    auto running = std::make_shared<BatchNormParams<double>>(BatchNormParams<double>::make(3));
    running->running_mean = s.uniform({3}, -0.5, 0.5);
    running->running_var = s.uniform({3}, 0.5, 1.5);
    check(mode == Mode::train ? "batchnorm_train" : "batchnorm_eval",
          [running, mode, r](const std::vector<TensorD>& in) {
            BatchNormParams<double> p = *running;  // statistics stay fixed across evaluations
            p.running_mean = running->running_mean.clone();
            p.running_var = running->running_var.clone();
            p.gamma = in[1];
            p.beta = in[2];
            return project(batchnorm(in[0], p, mode), r);
          },
          {x, gamma, beta});
  }

  unary("relu", [](const TensorD& x) { return relu(x); }, s.signed_away({2, 2, 4, 4}));
  unary("maxpool2d", [](const TensorD& x) { return maxpool(x, {2, 2}, {2, 2}); }, s.distinct({1, 2, 4, 4}));
  unary("maxpool3d", [](const TensorD& x) { return maxpool(x, {1, 2, 2}, {1, 2, 2}); }, s.distinct({1, 2, 2, 4, 4}));
  {
    const std::uint64_t drop_seed = s.rng()();
    unary("dropout", [drop_seed](const TensorD& x) {
      Rng rng(drop_seed);
      return dropout(x, 0.3, Mode::train, rng);
    }, s.uniform({2, 2, 4, 4}, -1, 1));
  }
  unary("softmax", [](const TensorD& x) { return softmax_channels(x); }, s.uniform({2, 4, 4, 4}, -2, 2));

  // Losses through the softmax, on random two-class 4x4 problems.
  LossConfig cfg;
  cfg.class_weights = {0.7, 1.3};
  const LabelMap labels({2, 4, 4}, s.labels(32, 2));
  auto loss_check = [&](std::string name, LossKind kind) {
    check(std::move(name), [kind, cfg, labels](const std::vector<TensorD>& in) {
      return segmentation_loss(kind, softmax_channels(in[0]), labels, cfg);
    }, {s.uniform({2, 2, 4, 4}, -2, 2)});
  };
  loss_check("cross_entropy_loss", LossKind::ce);
  loss_check("dice_loss", LossKind::dice);
  loss_check("combined_loss", LossKind::dice_ce);
  {
    LossConfig bg = cfg;
    bg.dice_include_background = true;
    bg.dice_numerator_factor = 1;
    const LabelMap four({1, 4, 4}, s.labels(16, 4));
    bg.class_weights = {0.5, 1.0, 1.5, 2.0};
    check("dice_loss_4class", [bg, four](const std::vector<TensorD>& in) {
      return dice_loss(softmax_channels(in[0]), four, bg);
    }, {s.uniform({1, 4, 4, 4}, -2, 2)});
  }
  return results;
}

}  // namespace cardioseg
