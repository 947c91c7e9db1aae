#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "cardioseg/config.hpp"
#include "cardioseg/engine.hpp"
#include "cardioseg/phantom.hpp"
#include "doctest.h"

using namespace cardioseg;
namespace fs = std::filesystem;

namespace {

std::vector<VolumeStudy> prepared_phantom(std::size_t patients, std::size_t depth, std::size_t size,
                                          std::uint64_t seed = 1) {
  PhantomConfig pc;
  pc.count = patients;
  pc.depth = depth;
  pc.height = pc.width = size;
  pc.seed = seed;
  PreprocessConfig pp;
  pp.height = pp.width = size;
  std::vector<VolumeStudy> out;
  for (const auto& s : generate_phantom(pc)) out.push_back(preprocess(s, pp).study);
  return out;
}

TrainConfig tiny_config(int dims) {
  TrainConfig c = TrainConfig::defaults(dims);
  c.model.base_width = 4;
  c.model.depth = 2;
  if (dims == 2) c.model.in_channels = 3;
  c.epochs = 2;
  c.batch_size = 4;
  c.initial_lr = 0.01;
  return c;
}

std::vector<std::vector<float>> snapshot(const SegmentationModel<float>& m) {
  std::vector<std::vector<float>> out;
  for (const auto& p : m.parameters()) out.emplace_back(p.data().begin(), p.data().end());
  return out;
}

}  // namespace

TEST_CASE("sgd step examples") {
  std::vector<double> p{1.0}, g{1.0}, v{0.0};
  sgd_step(std::span(p), std::span<const double>(g), std::span(v), 0.1, 0.0);
  CHECK(p[0] == doctest::Approx(0.9).epsilon(1e-15));

  p = {0.0};
  v = {0.0};
  sgd_step(std::span(p), std::span<const double>(g), std::span(v), 0.1, 0.99);
  const double after_first = p[0];
  sgd_step(std::span(p), std::span<const double>(g), std::span(v), 0.1, 0.99);
  CHECK(std::abs((after_first - p[0]) - 0.1 * (1 + 0.99) * 1.0) < 1e-12);

  p = {2.0};
  v = {0.5};
  std::vector<double> zero{0.0};
  sgd_step(std::span(p), std::span<const double>(zero), std::span(v), 0.1, 0.9);
  CHECK(v[0] == doctest::Approx(0.45));
  CHECK(p[0] == doctest::Approx(2.0 - 0.1 * 0.45));

  std::vector<double> two{1, 2};
  CHECK_THROWS_AS(sgd_step(std::span(p), std::span<const double>(two), std::span(v), 0.1, 0.9), SizeError);
}

TEST_CASE("momentum on a quadratic matches the hand recurrence") {
  // f(p) = 0.5 a p^2, so g = a p.
  const double a = 3.0, lr = 0.05, m = 0.99;
  auto param = TensorD::from({1}, {2.0}, true);
  Sgd<double> opt({param}, m);
  double p = 2.0, v = 0.0;
  for (int step = 0; step < 25; ++step) {
    opt.zero_grad();
    mul(mul(param, param), 0.5 * a).backward();
    opt.step(lr);
    const double g = a * p;
    v = m * v + g;
    p = p - lr * v;
    CHECK(std::abs(param.item() - p) < 1e-12);
  }
}

TEST_CASE("learning-rate schedule") {
  TrainConfig c;
  c.initial_lr = 0.02;
  CHECK(lr_at_epoch(c, 0) == 0.02);
  CHECK(lr_at_epoch(c, 29) == 0.02);
  CHECK(lr_at_epoch(c, 30) == 0.02 / 10);
  CHECK(lr_at_epoch(c, 90) == 0.02 / 1000);
  for (int k = 0; k < 10; ++k) CHECK(lr_at_epoch(c, std::size_t(30 * k)) == 0.02 / std::pow(10.0, k));
  for (std::size_t e = 1; e < 300; ++e) {
    CHECK(lr_at_epoch(c, e) <= lr_at_epoch(c, e - 1));
    CHECK((lr_at_epoch(c, e) != lr_at_epoch(c, e - 1)) == (e % 30 == 0));
  }
}

TEST_CASE("patient-level folds") {
  std::vector<std::string> ids;
  for (int i = 0; i < 100; ++i) ids.push_back("patient" + std::to_string(i));
  auto folds = make_folds(ids, 5, 42);
  REQUIRE(folds.size() == 5);
  std::multiset<std::string> all_val;
  for (const auto& f : folds) {
    CHECK(f.validation.size() == 20);
    CHECK(f.train.size() == 80);
    std::set<std::string> tr(f.train.begin(), f.train.end());
    for (const auto& v : f.validation) CHECK(tr.count(v) == 0);
    all_val.insert(f.validation.begin(), f.validation.end());
  }
  CHECK(all_val == std::multiset<std::string>(ids.begin(), ids.end()));

  auto again = make_folds(ids, 5, 42);
  for (std::size_t k = 0; k < 5; ++k) CHECK(again[k].validation == folds[k].validation);
  CHECK(make_folds(ids, 5, 43)[0].validation != folds[0].validation);

  std::vector<std::string> seven(ids.begin(), ids.begin() + 7);
  for (const auto& f : make_folds(seven, 3, 1)) {
    CHECK(f.validation.size() >= 2);
    CHECK(f.validation.size() <= 3);
  }
  CHECK_THROWS_AS(make_folds(seven, 8, 1), ParameterError);
  CHECK_THROWS_AS(make_folds(seven, 1, 1), ParameterError);
}

TEST_CASE("zero learning rate leaves parameters untouched") {
  auto data = prepared_phantom(1, 4, 32);
  TrainConfig c = tiny_config(2);
  c.initial_lr = 0.0;
  c.epochs = 1;
  const auto before = snapshot(SegmentationModel<float>(c.model, c.seed));
  auto r = train(c, data, {});
  CHECK(snapshot(r.model) == before);
}

TEST_CASE("training is reproducible and checkpoints monotonically") {
  auto data = prepared_phantom(2, 4, 32);
  TrainConfig c = tiny_config(2);
  c.epochs = 3;
  const auto ckpt = fs::temp_directory_path() / "cardioseg_engine_best.ckpt";
  fs::remove(ckpt);
  TrainOptions opts;
  opts.checkpoint = ckpt;
  opts.preprocess.height = opts.preprocess.width = 32;
  auto a = train(c, {data[0], data[1]}, {data[2], data[3]}, opts);
  auto b = train(c, {data[0], data[1]}, {data[2], data[3]});
  REQUIRE(a.history.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(a.history[i].train_loss == b.history[i].train_loss);
    CHECK(a.history[i].val_dice == b.history[i].val_dice);
    CHECK(a.history[i].lr == c.initial_lr);
  }
  CHECK(snapshot(a.model) == snapshot(b.model));

  double best = -1;
  for (const auto& h : a.history)
    if (h.checkpointed) {
      CHECK(h.val_dice > best);
      best = h.val_dice;
    }
  CHECK(best == a.best_val_dice);
  REQUIRE(fs::exists(ckpt));
  auto meta = read_checkpoint_meta(ckpt);
  CHECK(meta.train.model.base_width == 4);
  CHECK(meta.preprocess.height == 32);
  auto loaded = load_checkpoint<float>(ckpt, meta.train.model);
  CHECK(mean_foreground_dice(loaded, {data[2], data[3]}) == doctest::Approx(a.best_val_dice).epsilon(1e-12));

  CHECK(history_csv(a.history).rfind("epoch,lr,train_loss,val_dice\n0,", 0) == 0);
}

TEST_CASE("divergence raises a numerical error") {
  auto data = prepared_phantom(1, 4, 32);
  TrainConfig c = tiny_config(2);
  c.loss = LossKind::ce;
  c.initial_lr = 1e30;
  c.epochs = 5;
  try {
    train(c, data, {});
    FAIL("expected divergence");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("epoch") != std::string::npos);
  }
}

TEST_CASE("gradient clipping bounds the update") {
  auto data = prepared_phantom(1, 4, 32);
  TrainConfig c = tiny_config(2);
  c.momentum = 0.0;
  c.initial_lr = 1.0;
  c.grad_clip = 1e-3;
  c.epochs = 1;
  c.batch_size = 4;
  const auto before = snapshot(SegmentationModel<float>(c.model, c.seed));
  auto after = snapshot(train(c, {data[0]}, {}).model);  // one step
  double norm = 0;
  for (std::size_t i = 0; i < before.size(); ++i)
    for (std::size_t j = 0; j < before[i].size(); ++j) norm += std::pow(double(after[i][j]) - before[i][j], 2);
  CHECK(std::sqrt(norm) <= 1e-3 * 1.0001);
}

TEST_CASE("prediction") {
  auto data = prepared_phantom(1, 3, 32);
  auto m2 = build_model<float>(tiny_config(2).model, 5);
  auto p = predict_prepared(m2, data[0]);
  CHECK(p.same_extents(data[0].image));
  for (auto v : p.data) CHECK(v < 4);

  // Equal logits everywhere: ties go to class 0.
  for (auto& [name, t] : m2.state())
    if (name.rfind("head.", 0) == 0)
      for (auto& v : t.data_mut()) v = 0.0f;
  auto tied = predict_prepared(m2, data[0]);
  CHECK(std::all_of(tied.data.begin(), tied.data.end(), [](auto v) { return v == 0; }));

  auto m3 = build_model<float>(tiny_config(3).model, 6);
  VolumeStudy nine = data[0];
  nine.image = fit_depth(data[0].image, 9);
  nine.labels = fit_depth(*data[0].labels, 9);
  auto p3 = predict_prepared(m3, nine);
  CHECK(p3.depth == 9);

  VolumeStudy odd = data[0];
  odd.image = crop_or_pad(odd.image, 30, 32);
  CHECK_THROWS_AS(predict_prepared(m2, odd), SizeError);

  // Mapping back to a native grid that differs from the prepared one.
  PhantomConfig pc;
  pc.count = 1;
  pc.depth = 3;
  pc.height = 40;
  pc.width = 36;
  pc.spacing = {10, 1.2, 1.7};
  auto raw = generate_phantom(pc)[0];
  PreprocessConfig pp;
  pp.height = pp.width = 32;
  auto prep = preprocess(raw, pp);
  auto native = predict_study(m3, prep);
  CHECK(native.same_extents(raw.image));
}

TEST_CASE("run configuration") {
  auto c = build_run_config({});
  CHECK(c.train.model.dims == 2);
  CHECK(c.train.batch_size == 8);
  CHECK(c.train.momentum == 0.99);
  CHECK(c.train.lr_decay_every == 30);
  CHECK(c.train.epochs == 300);
  CHECK(c.preprocess.height == 256);

  auto c3 = build_run_config({{{{"model.dims", "3"}}, "flags"}});
  CHECK(c3.train.batch_size == 4);
  CHECK(c3.train.model.max_width == 256);

  auto file = parse_key_values("train.lr = 0.05\ntrain.batch_size = 2\npreprocess.size = 64x64\n", "run.cfg");
  auto merged = build_run_config({{file, "run.cfg"}, {{{"train.batch_size", "3"}}, "flags"}});
  CHECK(merged.train.initial_lr == 0.05);
  CHECK(merged.train.batch_size == 3);
  CHECK(merged.preprocess.width == 64);

  auto round = build_run_config({{merged.to_key_values(), "echo"}});
  CHECK(round.to_key_values() == merged.to_key_values());

  CHECK_THROWS_AS(build_run_config({{{{"train.speed", "1"}}, "x"}}), UsageError);
  CHECK_THROWS_AS(build_run_config({{{{"train.lr", "fast"}}, "x"}}), UsageError);
  CHECK_THROWS_AS(build_run_config({{{{"train.fold", "5"}}, "x"}}), UsageError);
  CHECK_THROWS_AS(build_run_config({{{{"model.slices", "2"}}, "x"}}), UsageError);
  CHECK_THROWS_AS(build_run_config({{{{"preprocess.size", "100x100"}}, "x"}}), UsageError);
  CHECK_THROWS_AS(read_checkpoint_meta("/nonexistent/model.ckpt"), CompatibilityError);
  CHECK(config_schema().size() == merged.to_key_values().size());
}
