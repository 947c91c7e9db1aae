// cardioseg command-line tool.
//
// Exit codes: 0 success, 2 usage, 3 data or format problems, 4 numerical
// failure (diverged training, failed gradient check).

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include "cardioseg/config.hpp"
#include "cardioseg/dataset.hpp"
#include "cardioseg/engine.hpp"
#include "cardioseg/errors.hpp"
#include "cardioseg/gradcheck.hpp"
#include "cardioseg/metrics.hpp"
#include "cardioseg/phantom.hpp"
#include "cardioseg/preprocess.hpp"

namespace fs = std::filesystem;
using namespace cardioseg;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

int exit_code_for(const Error& e) {
  const std::string& k = e.kind();
  if (k == "usage" || k == "parameter") return kExitUsage;
  if (k == "numerical") return kExitNumerical;
  return kExitData;
}

std::size_t loader_threads() {
  const char* env = std::getenv("CARDIOSEG_THREADS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 1) throw UsageError(std::string("CARDIOSEG_THREADS must be a positive integer, got '") + env + "'");
  return std::size_t(n);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw IoError("cannot write " + path.string());
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
}

std::vector<VolumeStudy> load_labelled(const fs::path& root, const std::string& what) {
  auto studies = read_dataset(root, loader_threads());
  for (const auto& s : studies)
    if (!s.labels) throw DataError(what + " study " + (root / s.id()).string() + " has no label.nii");
  return studies;
}

// --- phantom ---------------------------------------------------------------

struct PhantomArgs {
  std::string out, size = "8x64x64";
  std::size_t count = 10;
  std::uint64_t seed = 0;
};

int cmd_phantom(const PhantomArgs& a) {
  static const std::regex re(R"((\d+)x(\d+)x(\d+))");
  std::smatch m;
  if (!std::regex_match(a.size, m, re)) throw UsageError("--size must look like ZxHxW, got '" + a.size + "'");
  PhantomConfig pc;
  pc.count = a.count;
  pc.seed = a.seed;
  pc.depth = std::stoul(m[1]);
  pc.height = std::stoul(m[2]);
  pc.width = std::stoul(m[3]);
  if (pc.depth < 1) throw UsageError("--size needs at least one slice");
  std::vector<VolumeStudy> studies;
  try {
    studies = generate_phantom(pc);
  } catch (const ParameterError& e) {
    throw UsageError(std::string("--size: ") + e.what());
  }
  if (a.count == 0) std::cerr << "warning: --count 0 writes an empty dataset\n";
  write_dataset(a.out, studies);
  std::cout << "wrote " << studies.size() << " studies to " << a.out << "\n";
  return 0;
}

// --- train -----------------------------------------------------------------

struct TrainArgs {
  std::string config, data, out, loss;
  std::optional<std::size_t> fold;
  std::optional<int> dims;
  std::vector<std::string> overrides;
};

RunConfig resolve_run_config(const TrainArgs& a) {
  std::vector<std::pair<KeyValues, std::string>> sources;
  try {
    if (!a.config.empty()) sources.emplace_back(read_key_values(a.config), a.config);
    KeyValues cli;
    for (const auto& o : a.overrides) {
      const auto eq = o.find('=');
      if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + o + "'");
      auto trim = [](std::string s) {
        s.erase(0, s.find_first_not_of(" \t"));
        s.erase(s.find_last_not_of(" \t") + 1);
        return s;
      };
      cli.emplace_back(trim(o.substr(0, eq)), trim(o.substr(eq + 1)));
    }
    if (a.dims) cli.emplace_back("model.dims", std::to_string(*a.dims));
    if (a.fold) cli.emplace_back("train.fold", std::to_string(*a.fold));
    if (!a.loss.empty()) cli.emplace_back("train.loss", a.loss);
    sources.emplace_back(std::move(cli), "command line");
    RunConfig rc = build_run_config(sources);
    rc.validate();
    return rc;
  } catch (const UsageError&) {
    throw;
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
}

int cmd_train(const TrainArgs& a) {
  const RunConfig rc = resolve_run_config(a);
  const auto studies = load_labelled(a.data, "training");
  const auto ids = patient_ids(studies);
  if (ids.size() < rc.train.folds)
    throw DataError(a.data + ": " + std::to_string(ids.size()) + " patients cannot fill " +
                    std::to_string(rc.train.folds) + " folds");
  const FoldSplit split = make_folds(ids, rc.train.folds, rc.train.seed)[rc.train.fold];
  auto in = [](const std::vector<std::string>& v, const std::string& id) {
    return std::find(v.begin(), v.end(), id) != v.end();
  };
  std::vector<VolumeStudy> train_set, validation;
  for (const auto& s : studies) {
    auto prepared = preprocess(s, rc.preprocess).study;
    (in(split.validation, s.patient_id) ? validation : train_set).push_back(std::move(prepared));
  }

  make_dir(a.out);
  const fs::path out(a.out);
  write_text(out / "config.txt", format_key_values(rc.to_key_values()));
  TrainOptions opts;
  opts.checkpoint = out / "model.ckpt";
  opts.preprocess = rc.preprocess;
  std::vector<EpochRecord> history;
  opts.on_epoch = [&](const EpochRecord& r) {
    history.push_back(r);
    write_text(out / "history.csv", history_csv(history));
    std::cout << "epoch " << std::setw(4) << r.epoch << "  lr " << std::setprecision(3) << r.lr << "  loss "
              << std::fixed << std::setprecision(5) << r.train_loss << "  val dice " << r.val_dice
              << (r.checkpointed ? "  *" : "") << std::defaultfloat << "\n";
  };
  std::cout << "fold " << rc.train.fold << ": " << split.train.size() << " training and " << split.validation.size()
            << " validation patients\n";
  const TrainResult res = train(rc.train, train_set, validation, opts);
  write_text(out / "history.csv", history_csv(res.history));
  std::cout << "best val dice " << res.best_val_dice << " at epoch " << res.best_epoch << " -> " << *opts.checkpoint
            << "\n";
  return 0;
}

// --- predict ---------------------------------------------------------------

struct PredictArgs {
  std::string checkpoint, input, out;
  std::optional<std::size_t> slices;
};

int cmd_predict(const PredictArgs& a) {
  if (a.slices && *a.slices % 2 == 0) throw UsageError("--slices must be odd, got " + std::to_string(*a.slices));
  const RunConfig rc = read_checkpoint_meta(a.checkpoint);
  const ModelConfig& mc = rc.train.model;
  if (a.slices && *a.slices != mc.in_channels)
    throw CompatibilityError("checkpoint " + a.checkpoint + " expects " + std::to_string(mc.in_channels) +
                             " stacked slices, --slices asked for " + std::to_string(*a.slices));
  auto model = load_checkpoint<float>(a.checkpoint, mc);
  model.set_mode(Mode::eval);
  const auto studies = read_dataset(a.input, loader_threads());
  make_dir(a.out);
  for (const auto& s : studies) {
    VolumeStudy pred;
    pred.patient_id = s.patient_id;
    pred.phase = s.phase;
    pred.spacing = s.spacing;
    pred.labels = predict_study(model, preprocess(s, rc.preprocess));
    write_label_study(fs::path(a.out) / s.id(), pred);
  }
  std::cout << "wrote " << studies.size() << " predictions to " << a.out << "\n";
  return 0;
}

// --- evaluate --------------------------------------------------------------

struct EvaluateArgs {
  std::string pred, truth, out;
};

int cmd_evaluate(const EvaluateArgs& a) {
  const auto preds = load_labelled(a.pred, "predicted");
  const auto truths = load_labelled(a.truth, "reference");
  const EvaluationReport report = evaluate_cohort(preds, truths);
  const fs::path prefix(a.out);
  if (prefix.has_parent_path()) make_dir(prefix.parent_path());
  write_text(prefix.string() + ".txt", report.table());
  write_text(prefix.string() + ".csv", report.csv());
  std::cout << report.table();
  return 0;
}

// --- gradcheck -------------------------------------------------------------

struct GradcheckArgs {
  std::uint64_t seed = 1234;
  double tolerance = 1e-5;
  std::string fault;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  autograd::set_fault_injection(a.fault);
  const auto results = run_gradcheck_suite(a.seed, a.tolerance);
  autograd::set_fault_injection("");
  std::size_t failed = 0;
  for (const auto& r : results) {
    std::cout << std::left << std::setw(28) << r.name << std::right << std::scientific << std::setprecision(3)
              << std::setw(12) << r.max_relative_error << "  " << (r.passed ? "ok" : "FAILED") << "\n";
    failed += !r.passed;
  }
  std::cout << std::defaultfloat << results.size() - failed << "/" << results.size() << " checks passed\n";
  if (failed) {
    std::cerr << "gradient check failed for:";
    for (const auto& r : results)
      if (!r.passed) std::cerr << " " << r.name;
    std::cerr << "\n";
    return kExitNumerical;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cardiac MR segmentation: synthetic data, training, inference and evaluation"};
  app.require_subcommand(1);

  PhantomArgs pa;
  auto* phantom = app.add_subcommand("phantom", "write a synthetic labelled dataset");
  phantom->add_option("--out", pa.out, "output dataset directory")->required();
  phantom->add_option("--count", pa.count, "number of patients (two studies each)");
  phantom->add_option("--seed", pa.seed, "random seed");
  phantom->add_option("--size", pa.size, "volume extents ZxHxW")->capture_default_str();

  TrainArgs ta;
  auto* trainc = app.add_subcommand("train", "train one cross-validation fold");
  trainc->add_option("--config", ta.config, "key = value settings file")->check(CLI::ExistingFile);
  trainc->add_option("--data", ta.data, "dataset directory")->required();
  trainc->add_option("--fold", ta.fold, "fold index (overrides train.fold)");
  trainc->add_option("--loss", ta.loss, "loss (overrides train.loss)")->check(CLI::IsMember({"ce", "dice", "dice_ce"}));
  trainc->add_option("--dims", ta.dims, "2 or 3 (overrides model.dims)")->check(CLI::IsMember({2, 3}));
  trainc->add_option("--out", ta.out, "output directory")->required();
  trainc->add_option("--set", ta.overrides, "extra key=value setting, repeatable");

  PredictArgs pr;
  auto* predict = app.add_subcommand("predict", "segment every study in a dataset");
  predict->add_option("--checkpoint", pr.checkpoint, "model checkpoint")->required();
  predict->add_option("--input", pr.input, "dataset directory")->required();
  predict->add_option("--out", pr.out, "output directory")->required();
  predict->add_option("--slices", pr.slices, "stacked slices; must match the checkpoint");

  EvaluateArgs ea;
  auto* evaluate = app.add_subcommand("evaluate", "compare predictions against references");
  evaluate->add_option("--pred", ea.pred, "prediction directory")->required();
  evaluate->add_option("--truth", ea.truth, "reference dataset directory")->required();
  evaluate->add_option("--out", ea.out, "report prefix; writes <prefix>.txt and <prefix>.csv")->required();

  GradcheckArgs ga;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every backward rule");
  gradcheck->add_option("--seed", ga.seed, "input seed");
  gradcheck->add_option("--tolerance", ga.tolerance, "maximum relative error");
  gradcheck->add_option("--inject-fault", ga.fault, "perturb the named op's backward rule")->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitUsage;
  }

  try {
    if (*phantom) return cmd_phantom(pa);
    if (*trainc) return cmd_train(ta);
    if (*predict) return cmd_predict(pr);
    if (*evaluate) return cmd_evaluate(ea);
    if (*gradcheck) return cmd_gradcheck(ga);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
