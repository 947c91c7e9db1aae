// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails. Tolerances and budgets are pinned below.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "cardioseg/config.hpp"
#include "cardioseg/dataset.hpp"
#include "cardioseg/engine.hpp"
#include "cardioseg/gradcheck.hpp"
#include "cardioseg/losses.hpp"
#include "cardioseg/metrics.hpp"
#include "cardioseg/models.hpp"
#include "cardioseg/phantom.hpp"

using namespace cardioseg;
namespace fs = std::filesystem;

namespace {

// 1. gradients
constexpr double kGradTolerance = 1e-5;
constexpr double kGradBudgetSeconds = 60;
// 2. loss analytics
constexpr double kDiceDisjointTolerance = 1e-6;
constexpr double kCeTolerance = 1e-9;
constexpr double kLinearityTolerance = 1e-12;
// 3. metric oracles
constexpr int kHausdorffPairs = 200;
constexpr double kClinicalTolerance = 1e-12;
// 5. overfit
constexpr std::size_t kOverfitSteps = 200;
constexpr double kOverfitDiceTarget = 0.9;
constexpr double kOverfitOtherTarget = 0.8;
constexpr double kOverfitBudgetSeconds = 300;
// 6. end to end
constexpr double kEfBiasLimit = 5.0;
// 7. protocol
constexpr double kMomentumTolerance = 1e-12;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

class Failure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void require(bool ok, const std::string& what) {
  if (!ok) throw Failure(what);
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

// ---------------------------------------------------------------------------
// 1

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  const auto results = run_gradcheck_suite(1234, kGradTolerance);
  const double elapsed = seconds_since(t0);
  double worst = 0;
  std::string worst_name;
  for (const auto& r : results) {
    require(r.passed && r.max_relative_error < kGradTolerance, r.name + " relative error " + fmt(r.max_relative_error));
    if (r.max_relative_error >= worst) worst = r.max_relative_error, worst_name = r.name;
  }
  for (const char* needed : {"cross_entropy_loss", "dice_loss", "combined_loss", "conv2d", "conv3d", "batchnorm"}) {
    const bool found = std::any_of(results.begin(), results.end(),
                                   [&](const auto& r) { return r.name.find(needed) != std::string::npos; });
    require(found, std::string("suite lacks ") + needed);
  }
  require(elapsed < kGradBudgetSeconds, "took " + fmt(elapsed) + " s");
  return {true, std::to_string(results.size()) + " checks, worst " + worst_name + " " + fmt(worst, 3) + ", " +
                    fmt(elapsed, 3) + " s"};
}

// ---------------------------------------------------------------------------
// 2

Outcome loss_analytics() {
  LossConfig cfg;
  // 4x4 slice, two classes, half the pixels foreground
  std::vector<std::uint8_t> lab(16);
  for (std::size_t i = 0; i < 16; ++i) lab[i] = std::uint8_t(i % 3 == 0 || i > 11);
  const LabelMap labels({1, 4, 4}, lab);
  std::vector<double> hot(32), cold(32);
  for (std::size_t i = 0; i < 16; ++i) {
    hot[lab[i] * 16 + i] = 1;
    cold[(1 - lab[i]) * 16 + i] = 1;
  }
  const double fg = double(std::count(lab.begin(), lab.end(), 1));
  const auto perfect = TensorD::from({1, 2, 4, 4}, hot);
  const auto disjoint = TensorD::from({1, 2, 4, 4}, cold);
  const double d_perfect = dice_loss(perfect, labels, cfg).item();
  const double d_disjoint = dice_loss(disjoint, labels, cfg).item();
  // Foreground only; epsilon moves the disjoint value to log(2 - eps/(|t|+|p|+eps)).
  const double eps = cfg.epsilon;
  const double expected_disjoint = std::log(2.0 - eps / (fg + (16 - fg) + eps));
  require(std::abs(d_perfect) < 1e-12, "dice loss on perfect input " + fmt(d_perfect, 17));
  require(std::abs(d_disjoint - std::log(2.0)) < kDiceDisjointTolerance,
          "dice loss on disjoint input " + fmt(d_disjoint, 17));
  require(std::abs(d_disjoint - expected_disjoint) < 1e-12, "disjoint value off the closed form");

  LossConfig plain;
  const LabelMap one({1, 1, 1}, {1});
  const auto half = TensorD::from({1, 2, 1, 1}, {0.5, 0.5});
  const double ce = cross_entropy_loss(half, one, plain).item();
  require(std::abs(ce - std::log(2.0)) < kCeTolerance, "CE at p=0.5 gave " + fmt(ce, 17));

  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  double worst = 0;
  for (int t = 0; t < 50; ++t) {
    std::vector<double> p(4 * 2 * 3 * 3);
    for (std::size_t px = 0; px < 2 * 9; ++px) {
      // normalized over the 4 channels of pixel px
      const std::size_t b = px / 9, r = px % 9;
      double s = 0;
      std::array<double, 4> raw{};
      for (auto& v : raw) s += (v = u(rng));
      for (std::size_t c = 0; c < 4; ++c) p[(b * 4 + c) * 9 + r] = raw[c] / s;
    }
    std::vector<std::uint8_t> lab(2 * 9);
    for (auto& v : lab) v = std::uint8_t(rng() % 4);
    const auto probs = TensorD::from({2, 4, 3, 3}, p);
    const LabelMap lm({2, 3, 3}, lab);
    LossConfig c;
    c.lambda_ce = u(rng) * 3;
    c.lambda_dice = u(rng) * 3;
    c.class_weights = {u(rng), u(rng), u(rng), u(rng)};
    const double lhs = combined_loss(probs, lm, c).item();
    const double rhs = c.lambda_ce * cross_entropy_loss(probs, lm, c).item() + c.lambda_dice * dice_loss(probs, lm, c).item();
    worst = std::max(worst, std::abs(lhs - rhs));
  }
  require(worst < kLinearityTolerance, "combined loss linearity error " + fmt(worst, 3));
  return {true, "dice perfect " + fmt(d_perfect, 3) + ", disjoint " + fmt(d_disjoint, 10) + ", CE " +
                    fmt(ce, 12) + ", linearity " + fmt(worst, 3)};
}

// ---------------------------------------------------------------------------
// 3

LabelVolume random_mask(std::mt19937_64& rng, std::size_t Z, std::size_t H, std::size_t W, bool blobby) {
  LabelVolume m(Z, H, W);
  if (!blobby) {
    const double p = 0.05 + 0.5 * double(rng() % 1000) / 1000.0;
    for (auto& v : m.data) v = double(rng() % 1000) / 1000.0 < p;
    return m;
  }
  const int boxes = 1 + int(rng() % 3);
  for (int b = 0; b < boxes; ++b) {
    const std::size_t z0 = rng() % Z, y0 = rng() % H, x0 = rng() % W;
    const std::size_t z1 = z0 + rng() % (Z - z0), y1 = y0 + rng() % (H - y0), x1 = x0 + rng() % (W - x0);
    for (std::size_t z = z0; z <= z1; ++z)
      for (std::size_t y = y0; y <= y1; ++y)
        for (std::size_t x = x0; x <= x1; ++x) m.at(z, y, x) = 1;
  }
  return m;
}

// Boundary voxels: inside the mask with a face neighbour outside the mask
// or outside the volume.
std::vector<std::array<long, 3>> boundary(const LabelVolume& m) {
  std::vector<std::array<long, 3>> out;
  const long Z = long(m.depth), H = long(m.height), W = long(m.width);
  auto in = [&](long z, long y, long x) {
    return z >= 0 && y >= 0 && x >= 0 && z < Z && y < H && x < W && m.at(z, y, x);
  };
  for (long z = 0; z < Z; ++z)
    for (long y = 0; y < H; ++y)
      for (long x = 0; x < W; ++x)
        if (in(z, y, x) && (!in(z - 1, y, x) || !in(z + 1, y, x) || !in(z, y - 1, x) || !in(z, y + 1, x) ||
                            !in(z, y, x - 1) || !in(z, y, x + 1)))
          out.push_back({z, y, x});
  return out;
}

double brute_hausdorff(const LabelVolume& a, const LabelVolume& b, const Spacing& s) {
  const auto ba = boundary(a), bb = boundary(b);
  if (ba.empty() || bb.empty()) return std::numeric_limits<double>::infinity();
  auto directed = [&](const auto& from, const auto& to) {
    double worst = 0;
    for (const auto& p : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& q : to) {
        const double dz = double(p[0] - q[0]) * s.z, dy = double(p[1] - q[1]) * s.y, dx = double(p[2] - q[2]) * s.x;
        best = std::min(best, std::sqrt(dz * dz + dy * dy + dx * dx));
      }
      worst = std::max(worst, best);
    }
    return worst;
  };
  return std::max(directed(ba, bb), directed(bb, ba));
}

Outcome metric_oracles() {
  std::mt19937_64 rng(31337);
  const Spacing spacings[] = {{1, 1, 1}, {10, 1.5, 1.5}, {2.5, 1.25, 0.75}};
  int finite = 0;
  for (int t = 0; t < kHausdorffPairs; ++t) {
    const std::size_t Z = 1 + rng() % 4, H = 1 + rng() % 12, W = 1 + rng() % 12;
    const auto a = random_mask(rng, Z, H, W, t % 2), b = random_mask(rng, Z, H, W, t % 2);
    const Spacing& sp = spacings[t % 3];
    const double fast = hausdorff_mm(a, b, sp), brute = brute_hausdorff(a, b, sp);
    if (std::isinf(brute)) {
      require(std::isinf(fast), "pair " + std::to_string(t) + ": expected infinity");
      continue;
    }
    ++finite;
    require(fast == brute, "pair " + std::to_string(t) + ": " + fmt(fast, 17) + " vs brute force " + fmt(brute, 17));
  }

  // dice vs counting, per label value
  for (int t = 0; t < 100; ++t) {
    LabelVolume a(2, 7, 9), b(2, 7, 9);
    for (auto& v : a.data) v = std::uint8_t(rng() % 2);
    for (auto& v : b.data) v = std::uint8_t(rng() % 2);
    std::size_t inter = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
      inter += a.data[i] && b.data[i];
      na += a.data[i] != 0;
      nb += b.data[i] != 0;
    }
    const double want = na + nb == 0 ? 1.0 : 2.0 * double(inter) / double(na + nb);
    require(std::abs(dice_score(a, b) - want) < 1e-15, "dice_score differs from counting");
  }

  // clinical stats vs textbook formulas
  double worst = 0;
  for (int t = 0; t < 20; ++t) {
    const std::size_t n = 3 + rng() % 20;
    std::normal_distribution<double> g(50, 10);
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = g(rng);
      x[i] = y[i] + g(rng) * 0.1 - 3;
    }
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / double(n);
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / double(n);
    double sxy = 0, sxx = 0, syy = 0, sd = 0, md = 0;
    for (std::size_t i = 0; i < n; ++i) {
      sxy += (x[i] - mx) * (y[i] - my);
      sxx += (x[i] - mx) * (x[i] - mx);
      syy += (y[i] - my) * (y[i] - my);
      md += x[i] - y[i];
    }
    md /= double(n);
    for (std::size_t i = 0; i < n; ++i) sd += (x[i] - y[i] - md) * (x[i] - y[i] - md);
    sd = std::sqrt(sd / double(n - 1));
    const double cc = sxy / std::sqrt(sxx * syy);
    const ClinicalStats s = clinical_stats(x, y);
    require(s.cc.has_value(), "correlation missing");
    worst = std::max({worst, std::abs(*s.cc - cc), std::abs(s.bias - md) / std::max(1.0, std::abs(md)),
                      std::abs(s.loa_lo - (md - 1.96 * sd)) / std::max(1.0, std::abs(md - 1.96 * sd)),
                      std::abs(s.loa_hi - (md + 1.96 * sd)) / std::max(1.0, std::abs(md + 1.96 * sd))});
  }
  require(worst < kClinicalTolerance, "clinical stats error " + fmt(worst, 3));
  return {true, std::to_string(kHausdorffPairs) + " Hausdorff pairs exact (" + std::to_string(finite) +
                    " finite), dice exact, clinical error " + fmt(worst, 3)};
}

// ---------------------------------------------------------------------------
// 4

Outcome architecture() {
  autograd::NoGradGuard no_grad;
  ModelConfig c2 = ModelConfig::default_2d(3);
  c2.base_width = 4;  // reduced width, full depth
  SegmentationModel<float> m2(c2, 1);
  m2.set_mode(Mode::eval);
  const auto y2 = m2.forward(TensorF::zeros({8, 3, 256, 256}));
  require(y2.shape() == Shape{8, 4, 256, 256}, "2-D output " + to_string(y2.shape()));

  ModelConfig c3 = ModelConfig::default_3d();
  c3.base_width = 4;
  c3.depth = 3;
  SegmentationModel<float> m3(c3, 2);
  m3.set_mode(Mode::eval);
  std::string zs;
  for (std::size_t z : {1, 6, 9, 12}) {
    const auto y3 = m3.forward(TensorF::zeros({1, 1, z, 32, 48}));
    require(y3.shape() == Shape{1, 4, z, 32, 48}, "3-D output " + to_string(y3.shape()) + " for Z=" + std::to_string(z));
    zs += (zs.empty() ? "" : ",") + std::to_string(z);
  }
  // in-plane extents other than squares
  const auto y4 = m2.forward(TensorF::zeros({2, 3, 48, 80}));
  require(y4.shape() == Shape{2, 4, 48, 80}, "2-D output " + to_string(y4.shape()));
  return {true, "2-D [8,3,256,256] -> " + to_string(y2.shape()) + " at width 4; 3-D Z in {" + zs + "} preserved"};
}

// ---------------------------------------------------------------------------
// 5

std::vector<VolumeStudy> overfit_data() {
  PhantomConfig pc;
  pc.count = 1;
  pc.depth = 8;
  pc.height = pc.width = 64;
  pc.seed = 1;
  PreprocessConfig pp;
  pp.height = pp.width = 64;
  return {preprocess(generate_phantom(pc)[0], pp).study};
}

TrainConfig overfit_config(LossKind loss) {
  TrainConfig c = TrainConfig::defaults(2);
  c.model.base_width = 8;
  c.model.depth = 2;
  c.model.in_channels = 3;
  c.model.dropout_last = c.model.dropout_second_last = 0;
  c.augment.enabled = false;
  c.loss = loss;
  c.batch_size = 8;  // one step per epoch on 8 slices
  c.epochs = kOverfitSteps;
  c.momentum = 0.9;
  c.initial_lr = loss == LossKind::ce ? 0.3 : 0.1;
  c.lr_decay_every = 100;
  c.seed = 3;
  return c;
}

Outcome overfit() {
  const auto data = overfit_data();
  std::string detail;
  bool pass = true;
  for (LossKind kind : {LossKind::dice, LossKind::ce, LossKind::dice_ce}) {
    const auto t0 = Clock::now();
    const TrainResult r = train(overfit_config(kind), data, {});
    const double elapsed = seconds_since(t0);
    const double dice = r.history.back().val_dice;
    const double target = kind == LossKind::dice ? kOverfitDiceTarget : kOverfitOtherTarget;
    const bool ok = r.steps <= kOverfitSteps && dice > target && elapsed < kOverfitBudgetSeconds;
    pass = pass && ok;
    detail += (detail.empty() ? "" : "; ") + to_string(kind) + " dice " + fmt(dice) + " (> " + fmt(target) + ") in " +
              std::to_string(r.steps) + " steps, " + fmt(elapsed, 3) + " s" + (ok ? "" : " FAILED");
  }
  return {pass, detail};
}

// ---------------------------------------------------------------------------
// 6

struct Cli {
  fs::path work;
  fs::path log;

  int operator()(const std::string& args) const {
    const std::string cmd = std::string("\"") + CARDIOSEG_CLI + "\" " + args + " >> \"" + log.string() + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome end_to_end(const fs::path& work) {
  fs::create_directories(work);
  Cli cli{work, work / "cli.log"};
  auto run = [&](const std::string& args) {
    const int rc = cli(args);
    require(rc == 0, "'cardioseg " + args + "' exited " + std::to_string(rc) + " (log " + cli.log.string() + ")");
  };
  const std::string w = "\"" + work.string() + "/";
  std::ofstream(work / "tiny.cfg") << "# small, fast settings\n"
                                      "model.base_width = 4\n"
                                      "model.depth = 2\n"
                                      "model.max_width = 16\n"
                                      "train.epochs = 5\n"
                                      "train.seed = 3\n"
                                      "train.folds = 5\n"
                                      "preprocess.size = 64x64\n"
                                      "preprocess.depth_3d = 8\n";
  run("phantom --out " + w + "data\" --count 5 --seed 7 --size 8x64x64");
  require(read_dataset(work / "data").size() == 10, "phantom wrote the wrong number of studies");

  std::string summary;
  for (int dims : {2, 3}) {
    const std::string d = std::to_string(dims);
    run("train --config " + w + "tiny.cfg\" --data " + w + "data\" --fold 0 --loss dice --dims " + d + " --out " + w +
        "train" + d + "\"");
    for (const char* f : {"model.ckpt", "model.ckpt.meta", "history.csv", "config.txt"})
      require(fs::exists(work / ("train" + d) / f), "train " + d + "-D did not write " + f);
    const std::string hist = slurp(work / ("train" + d) / "history.csv");
    require(std::count(hist.begin(), hist.end(), '\n') == 6, d + "-D history should have 5 epochs");
    run("predict --checkpoint " + w + "train" + d + "/model.ckpt\" --input " + w + "data\" --out " + w + "pred" + d +
        "\"");
    require(read_dataset(work / ("pred" + d)).size() == 10, d + "-D predict wrote the wrong number of studies");
    run("evaluate --pred " + w + "pred" + d + "\" --truth " + w + "data\" --out " + w + "report" + d + "\"");
    const std::string table = slurp(work / ("report" + d + ".txt"));
    require(table.find("LV ED    LV ES    RV ED    RV ES   MYO ED   MYO ES") != std::string::npos,
            d + "-D report lacks the structure/phase columns");
    for (const char* m : {"LV_EF", "RV_EF", "MYO_mass"})
      require(table.find(m) != std::string::npos, d + "-D report lacks " + m);
    summary += d + "-D ok; ";
  }

  // Clinical agreement needs a trained model: the overfit settings run longer
  // on the same phantom.
  std::ofstream(work / "overfit.cfg") << "model.base_width = 8\n"
                                         "model.depth = 2\n"
                                         "model.dropout_last = 0\n"
                                         "model.dropout_second_last = 0\n"
                                         "train.epochs = 40\n"
                                         "train.lr_decay_every = 25\n"
                                         "train.momentum = 0.9\n"
                                         "train.lr = 0.1\n"
                                         "train.seed = 3\n"
                                         "augment.enabled = false\n"
                                         "preprocess.size = 64x64\n";
  run("train --config " + w + "overfit.cfg\" --data " + w + "data\" --fold 0 --loss dice --dims 2 --out " + w +
      "overfit\"");
  run("predict --checkpoint " + w + "overfit/model.ckpt\" --input " + w + "data\" --out " + w + "pred_overfit\"");
  run("evaluate --pred " + w + "pred_overfit\" --truth " + w + "data\" --out " + w + "report_overfit\"");
  std::istringstream csv(slurp(work / "report_overfit.csv"));
  std::optional<double> bias;
  for (std::string line; std::getline(csv, line);)
    if (line.rfind("LV_EF,", 0) == 0) {
      std::istringstream f(line);
      std::string metric, cc, b;
      std::getline(f, metric, ',');
      std::getline(f, cc, ',');
      std::getline(f, b, ',');
      bias = std::stod(b);
    }
  require(bias.has_value(), "overfit report lacks an LV_EF row");
  require(std::abs(*bias) <= kEfBiasLimit, "LV EF bias " + fmt(*bias) + " outside +-" + fmt(kEfBiasLimit));
  return {true, summary + "LV EF bias " + fmt(*bias, 3) + " (limit +-" + fmt(kEfBiasLimit) + ")"};
}

// ---------------------------------------------------------------------------
// 7

Outcome protocol() {
  TrainConfig c = TrainConfig::defaults(2);
  for (std::size_t k = 0; k < 10; ++k) {
    const double want = c.initial_lr / std::pow(10.0, double(k));
    require(lr_at_epoch(c, 30 * k) == want, "lr at epoch " + std::to_string(30 * k));
    require(lr_at_epoch(c, 30 * k + 29) == want, "lr at epoch " + std::to_string(30 * k + 29));
  }
  std::vector<std::string> ids;
  for (int i = 1; i <= 100; ++i) ids.push_back("patient" + std::to_string(i));
  const auto folds = make_folds(ids, 5, 11);
  std::set<std::string> seen;
  for (const auto& f : folds) {
    require(f.validation.size() == 20 && f.train.size() == 80, "fold " + std::to_string(f.index) + " sizes");
    for (const auto& id : f.validation) require(seen.insert(id).second, id + " validates twice");
  }
  require(seen.size() == 100, "folds do not cover every patient");

  // momentum on f(p) = a p^2 / 2 against a scalar unroll
  const double a = 0.7, lr = 0.05, mom = 0.99;
  auto p = TensorD::from({1}, {2.0}, true);
  Sgd<double> opt({p}, mom);
  double hp = 2.0, hv = 0.0, worst = 0;
  for (int step = 0; step < 200; ++step) {
    opt.zero_grad();
    auto loss = sum(mul(mul(p, p), a / 2));
    loss.backward();
    opt.step(lr);
    hv = mom * hv + a * hp;
    hp -= lr * hv;
    worst = std::max(worst, std::abs(p.item() - hp));
  }
  require(worst < kMomentumTolerance, "momentum unroll error " + fmt(worst, 3));
  return {true, "lr decays by 10 every 30 epochs exactly; 5 folds of 20 over 100 patients; momentum error " +
                    fmt(worst, 3)};
}

// ---------------------------------------------------------------------------
// 8

Outcome determinism() {
  PhantomConfig pc;
  pc.count = 3;
  pc.seed = 99;
  const auto a = generate_phantom(pc), b = generate_phantom(pc);
  for (std::size_t i = 0; i < a.size(); ++i)
    require(a[i].image.data == b[i].image.data && a[i].labels->data == b[i].labels->data, "phantom differs at " + a[i].id());

  std::vector<std::string> ids;
  for (int i = 0; i < 37; ++i) ids.push_back("p" + std::to_string(i));
  const auto f1 = make_folds(ids, 5, 4), f2 = make_folds(ids, 5, 4);
  for (std::size_t k = 0; k < f1.size(); ++k)
    require(f1[k].train == f2[k].train && f1[k].validation == f2[k].validation, "fold split differs");

  PreprocessConfig pp;
  pp.height = pp.width = 64;
  std::vector<VolumeStudy> data;
  for (const auto& s : a) data.push_back(preprocess(s, pp).study);
  TrainConfig c = TrainConfig::defaults(2);
  c.model.base_width = 4;
  c.model.depth = 2;
  c.epochs = 3;
  c.initial_lr = 0.01;
  c.seed = 17;  // augmentation and dropout stay on
  const auto r1 = train(c, data, {}), r2 = train(c, data, {});
  std::string curve;
  for (std::size_t e = 0; e < r1.history.size(); ++e) {
    require(r1.history[e].train_loss == r2.history[e].train_loss, "loss differs at epoch " + std::to_string(e));
    require(r1.history[e].val_dice == r2.history[e].val_dice, "dice differs at epoch " + std::to_string(e));
    curve += (curve.empty() ? "" : ",") + fmt(r1.history[e].train_loss, 6);
  }
  const auto p1 = r1.model.parameters(), p2 = r2.model.parameters();
  for (std::size_t i = 0; i < p1.size(); ++i)
    require(std::equal(p1[i].data().begin(), p1[i].data().end(), p2[i].data().begin()), "weights differ");
  return {true, "phantom, folds and loss curve [" + curve + "] identical across runs"};
}

}  // namespace

int main(int argc, char** argv) {
  // Optional criterion numbers on the command line select a subset.
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  const fs::path work = fs::temp_directory_path() / ("cardioseg_acceptance_" + std::to_string(::getpid()));
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "gradient suite", gradient_suite},
      {2, "loss analytics", loss_analytics},
      {3, "metric oracles", metric_oracles},
      {4, "architecture contracts", architecture},
      {5, "overfit regression", overfit},
      {6, "end-to-end CLI", [&] { return end_to_end(work); }},
      {7, "protocol fidelity", protocol},
      {8, "determinism", determinism},
  };

  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, e.what()};
    }
    failed += !o.pass;
    std::printf("%s criterion %d (%s): %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  }
  std::error_code ec;
  if (failed == 0) fs::remove_all(work, ec);
  return failed == 0 ? 0 : 1;
}
